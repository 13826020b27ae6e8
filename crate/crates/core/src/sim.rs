//! Explicit central-difference integration of the joint and synthetic data.
//!
//! The integrator consumes exactly two past angles, which is also the
//! recursion state of the estimator:
//!
//! ```text
//! theta_dot  = (theta[t-1] - theta[t-2]) / h
//! theta[t]   = 2 theta[t-1] - theta[t-2] + h^2 * acc(theta[t-1], theta_dot, u[t])
//! ```
//!
//! For the linearized joint (stiffness `w^2 = |m g L| / I`, damping rate
//! `c = C / I`) the recursion is stable iff `w^2 h^2 + 2 c h < 4`; configs
//! outside that envelope are rejected up front.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::diffnet::Real;
use crate::msk::{JointParams, MskError, MskModel, Plant};

/// Angles beyond this magnitude abort a simulation.
pub const DIVERGENCE_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] MskError),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("integration step {h} s outside the stability envelope (margin {margin:.3} >= 4)")]
    Unstable { h: f64, margin: f64 },
    #[error("trajectory diverged: |theta| = {theta} rad at t = {time} s")]
    Diverged { theta: f64, time: f64 },
}

/// How per-muscle excitation profiles are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExcitationSpec {
    /// `baseline + sum_j a_j sin(2 pi f_j t + p_j)` with random `f_j`, `p_j`
    /// and amplitudes `a_j` uniform in `[0.5, 1] * amplitude / components`.
    SumOfSines {
        components: usize,
        f_min_hz: f64,
        f_max_hz: f64,
        baseline: f64,
        amplitude: f64,
    },
    /// Mean-reverting random walk with stationary standard deviation `std`
    /// and correlation time `tau_s`, smoothed by a first-order lowpass with
    /// the same time constant.
    RandomWalk { baseline: f64, std: f64, tau_s: f64 },
}

impl Default for ExcitationSpec {
    fn default() -> Self {
        ExcitationSpec::SumOfSines {
            components: 3,
            f_min_hz: 0.1,
            f_max_hz: 0.8,
            baseline: 0.15,
            amplitude: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Sample period of emitted trials (s).
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Physics steps every `stride` samples; in-between angles are linearly
    /// interpolated.
    #[serde(default = "default_stride")]
    pub stride: usize,
    pub duration: f64,
    #[serde(default)]
    pub theta_0: f64,
    #[serde(default)]
    pub theta_dot_0: f64,
    #[serde(default)]
    pub excitation: ExcitationSpec,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_dt() -> f64 {
    0.001
}

fn default_stride() -> usize {
    1
}

impl SimConfig {
    pub fn new(duration: f64, seed: u64) -> Self {
        Self {
            dt: default_dt(),
            stride: default_stride(),
            duration,
            theta_0: 0.0,
            theta_dot_0: 0.0,
            excitation: ExcitationSpec::default(),
            noise_std: 0.0,
            seed,
        }
    }

    pub fn physics_dt(&self) -> f64 {
        self.dt * self.stride as f64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if self.stride == 0 {
            return bad("stride must be >= 1".into());
        }
        if !(self.duration >= 2.0 * self.physics_dt()) {
            return bad(format!(
                "duration {} shorter than two physics steps",
                self.duration
            ));
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be >= 0".into());
        }
        match &self.excitation {
            ExcitationSpec::SumOfSines {
                components,
                f_min_hz,
                f_max_hz,
                ..
            } => {
                if *components == 0 || !(*f_min_hz > 0.0 && f_min_hz <= f_max_hz) {
                    return bad("sum_of_sines needs components >= 1 and 0 < f_min_hz <= f_max_hz".into());
                }
            }
            ExcitationSpec::RandomWalk { std, tau_s, .. } => {
                if !(*std >= 0.0 && *tau_s > 0.0) {
                    return bad("random_walk needs std >= 0 and tau_s > 0".into());
                }
            }
        }
        Ok(())
    }
}

/// Where a trial came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub source: String,
    pub seed: Option<u64>,
    pub note: String,
}

/// One synchronized recording: `N` excitation channels plus the joint angle.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub fs: f64,
    /// `emg[channel][sample]`, normalized to `[0, 1]`.
    pub emg: Vec<Vec<f64>>,
    /// Joint angle in radians.
    pub angle: Vec<f64>,
    pub meta: TrialMeta,
}

impl Trial {
    pub fn new(fs: f64, emg: Vec<Vec<f64>>, angle: Vec<f64>, meta: TrialMeta) -> Result<Self, SimError> {
        if !(fs > 0.0) {
            return Err(SimError::Config(format!("sample rate must be > 0, got {fs}")));
        }
        if emg.iter().any(|c| c.len() != angle.len()) {
            return Err(SimError::Config("all channels must share the angle length".into()));
        }
        Ok(Self {
            fs,
            emg,
            angle,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.angle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angle.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.emg.len()
    }

    /// Excitations of every channel at sample `t`.
    pub fn excitations_at(&self, t: usize) -> Vec<f64> {
        self.emg.iter().map(|c| c[t]).collect()
    }

    /// Every `stride`-th sample, starting at the first.
    pub fn decimate(&self, stride: usize) -> Trial {
        let stride = stride.max(1);
        let pick = |v: &Vec<f64>| v.iter().step_by(stride).copied().collect::<Vec<_>>();
        Trial {
            fs: self.fs / stride as f64,
            emg: self.emg.iter().map(pick).collect(),
            angle: pick(&self.angle),
            meta: self.meta.clone(),
        }
    }
}

/// `w^2 h^2 + 2 c h`; the explicit scheme needs this below 4.
pub fn stability_margin(joint: &JointParams, h: f64) -> f64 {
    let w2 = joint.gravity_torque_scale().abs() / joint.inertia;
    let c = joint.damping / joint.inertia;
    w2 * h * h + 2.0 * c * h
}

/// One explicit central-difference step from the two previous angles.
pub fn physics_step<S: Real>(
    theta_prev: f64,
    theta_prev2: f64,
    u: &[f64],
    plant: &Plant<'_, S>,
    dt: f64,
) -> Result<S, MskError> {
    let theta_dot = (theta_prev - theta_prev2) / dt;
    let acc = plant.acceleration(theta_prev, theta_dot, u)?;
    Ok(acc * (dt * dt) + (2.0 * theta_prev - theta_prev2))
}

/// Virtual angle one step before the start, second-order consistent with
/// the initial velocity and acceleration.
pub fn startup_angle(
    theta_0: f64,
    theta_dot_0: f64,
    u_0: &[f64],
    plant: &Plant<'_, f64>,
    dt: f64,
) -> Result<f64, MskError> {
    let acc = plant.acceleration(theta_0, theta_dot_0, u_0)?;
    Ok(theta_0 - dt * theta_dot_0 + 0.5 * dt * dt * acc)
}

fn excitation_profiles(spec: &ExcitationSpec, n_muscles: usize, n: usize, dt: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_muscles)
        .map(|_| match *spec {
            ExcitationSpec::SumOfSines {
                components,
                f_min_hz,
                f_max_hz,
                baseline,
                amplitude,
            } => {
                let waves: Vec<(f64, f64, f64)> = (0..components)
                    .map(|_| {
                        let f = if f_max_hz > f_min_hz {
                            rng.random_range(f_min_hz..f_max_hz)
                        } else {
                            f_min_hz
                        };
                        let phase = rng.random_range(0.0..2.0 * PI);
                        let amp = rng.random_range(0.5..1.0) * amplitude / components as f64;
                        (f, phase, amp)
                    })
                    .collect();
                (0..n)
                    .map(|k| {
                        let t = k as f64 * dt;
                        let v = waves
                            .iter()
                            .fold(baseline, |acc, (f, p, a)| acc + a * (2.0 * PI * f * t + p).sin());
                        v.clamp(0.0, 1.0)
                    })
                    .collect()
            }
            ExcitationSpec::RandomWalk { baseline, std, tau_s } => {
                let rho = (-dt / tau_s).exp();
                let normal = Normal::new(0.0, std * (1.0 - rho * rho).sqrt()).expect("finite std");
                let mut x = baseline;
                let mut smooth = baseline;
                (0..n)
                    .map(|_| {
                        x = baseline + rho * (x - baseline) + normal.sample(&mut rng);
                        smooth = rho * smooth + (1.0 - rho) * x;
                        smooth.clamp(0.0, 1.0)
                    })
                    .collect()
            }
        })
        .collect()
}

/// Rolls the joint forward from `(theta_0, theta_dot_0)` under excitations
/// drawn from `cfg.seed`. The emitted EMG channels are the clean excitations.
pub fn simulate_trajectory(cfg: &SimConfig, model: &MskModel) -> Result<Trial, SimError> {
    cfg.validate()?;
    model.validate()?;
    let h = cfg.physics_dt();
    let margin = stability_margin(&model.joint, h);
    if margin >= 4.0 {
        return Err(SimError::Unstable { h, margin });
    }
    let steps = ((cfg.duration / h) + 1e-9).floor() as usize;
    let n = steps * cfg.stride + 1;
    let emg = excitation_profiles(&cfg.excitation, model.n_muscles(), n, cfg.dt, cfg.seed);
    let plant = model.plant();
    let u_at = |k: usize| -> Vec<f64> { emg.iter().map(|c| c[k]).collect() };

    let mut coarse = Vec::with_capacity(steps + 1);
    coarse.push(cfg.theta_0);
    let mut prev2 = startup_angle(cfg.theta_0, cfg.theta_dot_0, &u_at(0), &plant, h)?;
    let mut prev = cfg.theta_0;
    for k in 1..=steps {
        let next: f64 = physics_step(prev, prev2, &u_at(k * cfg.stride), &plant, h)?;
        if !next.is_finite() || next.abs() > DIVERGENCE_LIMIT {
            return Err(SimError::Diverged {
                theta: next,
                time: k as f64 * h,
            });
        }
        coarse.push(next);
        prev2 = prev;
        prev = next;
    }

    let mut angle = Vec::with_capacity(n);
    for k in 0..steps {
        for j in 0..cfg.stride {
            let w = j as f64 / cfg.stride as f64;
            angle.push(coarse[k] + w * (coarse[k + 1] - coarse[k]));
        }
    }
    angle.push(coarse[steps]);

    let meta = TrialMeta {
        source: "synthetic".into(),
        seed: Some(cfg.seed),
        note: format!("dt={} stride={} duration={}", cfg.dt, cfg.stride, cfg.duration),
    };
    Trial::new(1.0 / cfg.dt, emg, angle, meta)
}

/// `n_trials` independent trials; trial seeds are drawn from `cfg.seed`.
///
/// With `noise_std > 0` Gaussian noise is added to the emitted EMG and the
/// result re-clipped to `[0, 1]`; the angle stays the noise-free truth.
pub fn generate_synthetic_dataset(
    cfg: &SimConfig,
    model: &MskModel,
    n_trials: usize,
) -> Result<Vec<Trial>, SimError> {
    if n_trials == 0 {
        return Err(SimError::Config("n_trials must be >= 1".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..n_trials).map(|_| master.random()).collect();

    let results: Vec<Result<Trial, SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                scope.spawn(move || {
                    let trial_cfg = SimConfig {
                        seed,
                        ..cfg.clone()
                    };
                    let mut trial = simulate_trajectory(&trial_cfg, model)?;
                    if cfg.noise_std > 0.0 {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(1);
                        let normal = Normal::new(0.0, cfg.noise_std).expect("finite noise std");
                        for channel in &mut trial.emg {
                            for v in channel.iter_mut() {
                                *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
                            }
                        }
                        trial.meta.note.push_str(&format!(" noise_std={}", cfg.noise_std));
                    }
                    Ok(trial)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    results.into_iter().collect()
}
