//! End-to-end acceptance checks. Runs as a plain binary so that every
//! criterion prints exactly one PASS or FAIL line, even when an earlier one
//! fails. Exits non-zero if any criterion fails.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::path::Path;
use std::time::{Duration, Instant};

use penn_core::config::RunConfig;
use penn_core::diffnet::layers::{concat, conv1d, dense, dropout, global_avg_pool, maxpool1d, reshape};
use penn_core::diffnet::{relative_error, Mode, Tape, Tensor, DEFAULT_FLOOR};
use penn_core::eval::{paired_t_test, r_squared, rmse, student_t_cdf, student_t_quantile};
use penn_core::msk::{
    activation, active_force_length, force_velocity, passive_force, ActivationParams, GeometryPoly, JointParams,
    MskModel, MuscleParams,
};
use penn_core::penn::{
    free_run, loss_phy, loss_res, loss_total, physics_forward, residual_forward, split_dataset, teacher_forced,
    train_phase_one, train_phase_two, Hyper, LossWeights, NetVars, PennModel, TrainConfig,
};
use penn_core::pipeline;
use penn_core::signal::{butterworth_design, FilterKind, FilterSpec};
use penn_core::sim::{
    generate_synthetic_dataset, physics_step, simulate_trajectory, startup_angle, ExcitationSpec, SimConfig, Trial,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

const CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/wrist.toml");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Runs one criterion, folding errors and panics into a failure.
fn run(n: usize, name: &str, budget: Duration, f: impl FnOnce() -> Result<Outcome, String>) -> bool {
    let t0 = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f));
    let elapsed = t0.elapsed();
    let (mut pass, mut detail) = match result {
        Ok(Ok(o)) => (o.pass, o.detail),
        Ok(Err(e)) => (false, format!("error: {e}")),
        Err(_) => (false, "panicked".to_string()),
    };
    if elapsed > budget {
        pass = false;
        detail.push_str(&format!("; over the {:.0} s budget", budget.as_secs_f64()));
    }
    println!(
        "criterion {n} ({name}): {} [{:.2} s] {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn fmt<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn hill_invariants() -> Result<Outcome, String> {
    let tape = Tape::new();
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    // zero velocity through the shortening formula and just inside the lengthening one
    for v in [0.0, -0.0] {
        check(force_velocity(v) == 1.0, "f(0) shortening branch");
        check(force_velocity(tape.scalar_leaf(v)).item() == 1.0, "f(0) shortening branch on tape");
    }
    for v in [f64::MIN_POSITIVE, 1e-300] {
        check(force_velocity(v) == 1.0, "f(0+) lengthening branch");
        check(force_velocity(tape.scalar_leaf(v)).item() == 1.0, "f(0+) lengthening branch on tape");
    }
    for k in [0.1, 0.45, 0.9] {
        check(active_force_length(1.0, k) == 1.0, "f_a(1)");
        check(active_force_length(tape.scalar_leaf(1.0), tape.scalar_leaf(k)).item() == 1.0, "f_a(1) on tape");
    }
    for a in [-5.0, -3.0, -1.0, -0.01, 0.01, 0.5, 2.0, 5.0] {
        let p = ActivationParams { a_shape: a };
        check(activation(0.0, &p).map_err(fmt)? == 0.0, "a(0)");
        check(activation(1.0, &p).map_err(fmt)? == 1.0, "a(1)");
        let pv = ActivationParams { a_shape: tape.scalar_leaf(a) };
        check(activation(0.0, &pv).map_err(fmt)?.item() == 0.0, "a(0) on tape");
        check(activation(1.0, &pv).map_err(fmt)?.item() == 1.0, "a(1) on tape");
    }
    for m in MskModel::synthetic_wrist().muscles {
        for frac in [0.2, 0.5, 0.9, 0.999, 1.0] {
            check(passive_force(frac * m.l_opt, &m) == 0.0, "passive force at or below l_opt");
        }
        check(passive_force(1.05 * m.l_opt, &m) > 0.0, "passive force above l_opt");
    }

    // moment arm against a five-point stencil, which is exact for cubics
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut geoms = vec![MskModel::synthetic_wrist().geometry];
    for _ in 0..50 {
        geoms.push(GeometryPoly {
            mtu_coeffs: vec![[
                rng.random_range(0.2..0.3),
                rng.random_range(-0.03..0.03),
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.005..0.005),
            ]],
            theta_min: -1.5,
            theta_max: 1.5,
        });
    }
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for g in &geoms {
        for i in 0..g.n_muscles() {
            for _ in 0..40 {
                let t = rng.random_range(g.theta_min + 4.0 * h..g.theta_max - 4.0 * h);
                let l = |x: f64| g.mtu_length(x, i).expect("inside the range");
                let d = (l(t - 2.0 * h) - 8.0 * l(t - h) + 8.0 * l(t + h) - l(t + 2.0 * h)) / (12.0 * h);
                worst = worst.max((g.moment_arm(t, i).map_err(fmt)? + d).abs());
            }
        }
    }
    check(worst < 1e-12, "r = -dl_mt/dtheta");
    Ok(outcome(
        failures.is_empty(),
        format!("max |r + dl_mt/dtheta| = {worst:.2e}; failed: {failures:?}"),
    ))
}

// ---------------------------------------------------------------- 2

/// Plain `f64` forward pass of the residual network, written independently
/// of the tape. `features` runs the convolutional stage up to the global
/// average; `head` runs the dense and fusion layers.
struct RefNet<'a> {
    p: &'a [f64],
    rows: usize,
    channels: usize,
    hidden: usize,
    pool_stride: usize,
}

impl<'a> RefNet<'a> {
    fn new(p: &'a [f64], hyper: &Hyper, n_channels: usize) -> Self {
        RefNet {
            p,
            rows: n_channels + 2,
            channels: hyper.conv_channels,
            hidden: hyper.hidden,
            pool_stride: hyper.pool_stride,
        }
    }

    fn features(&self, x: &Tensor, keep1: &[f64]) -> Vec<f64> {
        let (rows, c_out) = (self.rows, self.channels);
        let len = x.shape()[1];
        let (w, b) = self.p.split_at(c_out * rows * 3);
        let xd = x.data();
        let l_pool = len / self.pool_stride + 1;
        (0..c_out)
            .map(|o| {
                let conv: Vec<f64> = (0..len)
                    .map(|j| {
                        let mut acc = b[o];
                        for c in 0..rows {
                            for k in 0..3 {
                                if let Some(pos) = (j + k).checked_sub(1).filter(|&pos| pos < len) {
                                    acc += w[(o * rows + c) * 3 + k] * xd[c * len + pos];
                                }
                            }
                        }
                        acc.max(0.0)
                    })
                    .collect();
                let total: f64 = (0..l_pool)
                    .map(|j| {
                        let start = j * self.pool_stride;
                        let lo = start.saturating_sub(1);
                        let hi = (start + 1).min(len);
                        let best = conv[lo..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        best * keep1[o * l_pool + j]
                    })
                    .sum();
                total / l_pool as f64
            })
            .collect()
    }

    fn head(&self, gap: &[f64], keep2: &[f64], phy: f64, scale: f64) -> f64 {
        let (c, h) = (self.channels, self.hidden);
        let off = c * self.rows * 3 + c;
        let (dw, rest) = self.p[off..].split_at(h * c);
        let (db, rest) = rest.split_at(h);
        let (fw, fb) = rest.split_at(h + 1);
        let mut out = fb[0] + fw[h] * phy;
        for k in 0..h {
            let pre: f64 = db[k] + (0..c).map(|o| dw[k * c + o] * gap[o]).sum::<f64>();
            out += fw[k] * pre.max(0.0) * keep2[k];
        }
        out * scale
    }
}

struct GradSample {
    prev: f64,
    prev2: f64,
    u: Vec<f64>,
    x: Tensor,
    target: f64,
}

/// Dropout multipliers drawn exactly as the network draws them.
fn dropout_masks(model: &PennModel, samples: &[GradSample], mode: Mode, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let tape = Tape::new();
    let hyper = &model.hyper;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = hyper.window / hyper.pool_stride + 1;
    let ones = |n| tape.constant(Tensor::new(vec![n], vec![1.0; n]).expect("shape"));
    samples
        .iter()
        .map(|_| {
            let a = dropout(ones(hyper.conv_channels * len), hyper.dropout, mode, &mut rng);
            let b = dropout(ones(hyper.hidden), hyper.dropout, mode, &mut rng);
            (a.tensor().data().to_vec(), b.tensor().data().to_vec())
        })
        .collect()
}

/// Smallest distance of any non-differentiable point from the current state:
/// ReLU inputs, max-pool winners, the passive-force onset and the
/// force-velocity branch points and clamps.
fn kink_margin(model: &PennModel, samples: &[GradSample], masks: &[(Vec<f64>, Vec<f64>)], dt: f64) -> f64 {
    let mut margin = f64::INFINITY;
    let msk = model.msk();
    for s in samples {
        let theta_dot = (s.prev - s.prev2) / dt;
        for (i, p) in msk.muscles.iter().enumerate() {
            let l_mt = msk.geometry.mtu_length(s.prev, i).expect("geometry");
            let v_mt = -msk.geometry.moment_arm(s.prev, i).expect("geometry") * theta_dot;
            let l_m = ((l_mt - p.l_tendon_slack).powi(2) + (p.l_opt * p.phi_opt.sin()).powi(2)).sqrt();
            let v_bar = (l_mt - p.l_tendon_slack) * v_mt / l_m / (p.l_opt * p.v_max_factor);
            for d in [l_m / p.l_opt - 1.0, v_bar, v_bar + 1.0, force_velocity(v_bar) - 1.8] {
                margin = margin.min(d.abs());
            }
        }
    }
    let tape = Tape::new();
    let net = NetVars::constants(&tape, &model.net);
    let hyper = &model.hyper;
    for (s, (keep1, _)) in samples.iter().zip(masks) {
        let pre = conv1d(tape.constant(s.x.clone()), net.conv_w, net.conv_b, 1, 1).expect("shapes");
        margin = pre.tensor().data().iter().fold(margin, |m, v| m.min(v.abs()));
        let act = pre.relu().tensor();
        let (ch, len) = (act.shape()[0], act.shape()[1]);
        for c in 0..ch {
            let row = &act.data()[c * len..(c + 1) * len];
            for j in (hyper.pool_stride..len).step_by(hyper.pool_stride) {
                if row[j - 1].max(row[j]) > 0.0 {
                    margin = margin.min((row[j - 1] - row[j]).abs());
                }
            }
        }
        let pooled = maxpool1d(pre.relu(), 2, hyper.pool_stride, 1).expect("shapes").tensor();
        let kept: Vec<f64> = pooled.data().iter().zip(keep1).map(|(v, k)| v * k).collect();
        let gap = global_avg_pool(tape.constant(Tensor::new(pooled.shape().to_vec(), kept).expect("shape"))).expect("shapes");
        let pre = dense(gap, net.dense_w, net.dense_b).expect("shapes");
        margin = pre.tensor().data().iter().fold(margin, |m, v| m.min(v.abs()));
    }
    margin
}

fn gradient_fidelity() -> Result<Outcome, String> {
    const POINTS: usize = 100;
    const H: f64 = 1e-4;
    const MARGIN: f64 = 1e-3;
    let base = MskModel::synthetic_wrist();
    let hyper = Hyper {
        residual_scale: 0.05,
        ..Hyper::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dt = 0.01;
    let n_ch = base.n_muscles();
    let mut worst = (0.0, 0, 0.0, 0.0);
    let mut n_params = 0;
    let mut draws = 0u64;
    let mut accepted = 0;
    while accepted < POINTS {
        draws += 1;
        let mut model = PennModel::new(base.clone(), hyper.clone(), draws).map_err(fmt)?;
        model.z = model.z.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let net: Vec<f64> = model.net.flat().iter().map(|_| rng.random_range(-0.3..0.3)).collect();
        model.net.set_flat(&net);
        let samples: Vec<GradSample> = (0..2)
            .map(|_| {
                let prev = rng.random_range(-0.5..0.5);
                let prev2 = prev - rng.random_range(-0.005..0.005);
                let u: Vec<f64> = (0..n_ch).map(|_| rng.random_range(0.05..0.95)).collect();
                let w = hyper.window;
                let x = Tensor::new(vec![n_ch + 2, w], (0..(n_ch + 2) * w).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .expect("shape");
                let target = prev + rng.random_range(-0.02..0.02);
                GradSample { prev, prev2, u, x, target }
            })
            .collect();
        let weights = LossWeights {
            lambda_phy: rng.random_range(0.2..1.0),
            beta_res: rng.random_range(0.2..1.0),
        };
        let mode = if accepted % 2 == 0 { Mode::Eval } else { Mode::Train };
        let masks = dropout_masks(&model, &samples, mode, draws);
        if kink_margin(&model, &samples, &masks, dt) < MARGIN {
            continue;
        }
        accepted += 1;

        let tape = Tape::new();
        let zv: Vec<_> = model.z.iter().map(|&v| tape.scalar_leaf(v)).collect();
        let nv = NetVars::leaves(&tape, &model.net);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(draws);
        let (mut phys, mut res, mut targets) = (vec![], vec![], vec![]);
        for s in &samples {
            let phy = physics_forward(&model.physics, &zv, s.prev, s.prev2, &s.u, dt).map_err(fmt)?;
            res.push(residual_forward(&nv, &s.x, phy, &hyper, mode, &mut drop_rng).map_err(fmt)?);
            phys.push(phy);
            targets.push(s.target);
        }
        let grads = tape.backward(loss_total(weights, loss_phy(&phys, &targets), loss_res(&res, &phys, &targets)));
        let mut analytic: Vec<f64> = zv.iter().map(|&v| grads.scalar(v)).collect();
        for v in nv.all() {
            analytic.extend(grads.dense(v));
        }

        let p0 = model.flat_params();
        n_params = p0.len();
        let nz = model.z.len();
        let n_conv = hyper.conv_channels * (n_ch + 2) * 3 + hyper.conv_channels;
        let base_phys: Vec<f64> = phys.iter().map(|v| v.item()).collect();
        let base_gap: Vec<Vec<f64>> = samples
            .iter()
            .zip(&masks)
            .map(|(s, m)| RefNet::new(&p0[nz..], &hyper, n_ch).features(&s.x, &m.0))
            .collect();
        for (k, (s, m)) in samples.iter().zip(&masks).enumerate() {
            let tape_res = res[k].item();
            let ref_res = RefNet::new(&p0[nz..], &hyper, n_ch).head(&base_gap[k], &m.1, base_phys[k], hyper.residual_scale);
            if (tape_res - ref_res).abs() > 1e-12 * (1.0 + ref_res.abs()) {
                return Err(format!("reference forward disagrees: {ref_res} vs {tape_res} ({:?})", s.target));
            }
        }
        let mut probe = model.clone();
        let mut p = p0.clone();
        for (i, &a) in analytic.iter().enumerate() {
            let mut at = |d: f64| -> f64 {
                p[i] = p0[i] + d;
                let net = RefNet::new(&p[nz..], &hyper, n_ch);
                let mut ph = Vec::with_capacity(samples.len());
                let mut rs = Vec::with_capacity(samples.len());
                for (k, (s, m)) in samples.iter().zip(&masks).enumerate() {
                    let phy = if i < nz {
                        probe.z[i] = p[i];
                        probe.physics_step(s.prev, s.prev2, &s.u, dt).expect("interior point")
                    } else {
                        base_phys[k]
                    };
                    let fresh;
                    let gap = if (nz..nz + n_conv).contains(&i) {
                        fresh = net.features(&s.x, &m.0);
                        &fresh
                    } else {
                        &base_gap[k]
                    };
                    rs.push(net.head(gap, &m.1, phy, hyper.residual_scale));
                    ph.push(phy);
                }
                loss_total(weights, loss_phy(&ph, &targets), loss_res(&rs, &ph, &targets))
            };
            let numeric = (at(-2.0 * H) - 8.0 * at(-H) + 8.0 * at(H) - at(2.0 * H)) / (12.0 * H);
            p[i] = p0[i];
            if i < nz {
                probe.z[i] = p0[i];
            }
            let err = relative_error(a, numeric, DEFAULT_FLOOR);
            if err > worst.0 {
                worst = (err, i, a, numeric);
            }
        }
    }
    let (err, idx, a, n) = worst;
    Ok(outcome(
        err < 1e-5,
        format!(
            "{POINTS} interior points x {n_params} parameters ({draws} drawn, kink margin {MARGIN:.0e}), \
             five-point central differences h={H:.0e} on an independent f64 forward pass; \
             max relative error {err:.2e} (< 1e-5) at parameter {idx} (analytic {a:.4e}, numeric {n:.4e})"
        ),
    ))
}

// ---------------------------------------------------------------- 3

/// Two antagonists whose fibers stay shorter than optimal, so the unexcited
/// joint swings as a pure pendulum.
fn pendulum(damping: f64) -> MskModel {
    MskModel {
        muscles: vec![
            MuscleParams::new(50.0, 0.10, 0.05, 0.1),
            MuscleParams::new(50.0, 0.10, 0.05, 0.1),
        ],
        activation: ActivationParams { a_shape: -1.0 },
        geometry: GeometryPoly {
            mtu_coeffs: vec![[0.12, -0.01, 0.0, 0.0], [0.12, 0.01, 0.0, 0.0]],
            theta_min: -1.5,
            theta_max: 1.5,
        },
        joint: JointParams {
            inertia: 0.01,
            damping,
            mass: 1.0,
            com_length: 0.1,
            gravity: 9.81,
        },
    }
}

fn swing(model: &MskModel, theta_0: f64, dt: f64, duration: f64) -> Result<Vec<f64>, String> {
    let plant = model.plant();
    let u = [0.0; 2];
    let n = (duration / dt).round() as usize;
    let mut prev2 = startup_angle(theta_0, 0.0, &u, &plant, dt).map_err(fmt)?;
    let mut prev = theta_0;
    let mut out = vec![theta_0];
    for _ in 0..n {
        let next: f64 = physics_step(prev, prev2, &u, &plant, dt).map_err(fmt)?;
        out.push(next);
        prev2 = prev;
        prev = next;
    }
    Ok(out)
}

fn integrator_oracle() -> Result<Outcome, String> {
    let model = pendulum(0.0);
    let dt = 0.01;
    let reference = swing(&model, 0.5, dt / 10.0, 1.0)?;
    let max_err = |h: f64| -> Result<f64, String> {
        let traj = swing(&model, 0.5, h, 1.0)?;
        let step = (h / (dt / 10.0)).round() as usize;
        Ok(traj
            .iter()
            .enumerate()
            .map(|(k, v)| (v - reference[k * step]).abs())
            .fold(0.0, f64::max))
    };
    let (e1, e2) = (max_err(dt)?, max_err(dt / 2.0)?);
    let ratio = e1 / e2;

    let h = 1e-3;
    let theta_0 = 0.2;
    let sim = SimConfig {
        dt: h,
        theta_0,
        excitation: ExcitationSpec::SumOfSines {
            components: 1,
            f_min_hz: 1.0,
            f_max_hz: 1.0,
            baseline: 0.0,
            amplitude: 0.0,
        },
        ..SimConfig::new(2.0, 0)
    };
    let trial = simulate_trajectory(&sim, &model).map_err(fmt)?;
    let j = &model.joint;
    let e0 = j.gravity_torque_scale() * (1.0 - theta_0.cos());
    let a = &trial.angle;
    let drift = (1..a.len() - 1)
        .map(|k| {
            let w = (a[k + 1] - a[k - 1]) / (2.0 * h);
            let e = 0.5 * j.inertia * w * w + j.gravity_torque_scale() * (1.0 - a[k].cos());
            (e - e0).abs() / e0
        })
        .fold(0.0, f64::max);
    Ok(outcome(
        (3.5..=4.5).contains(&ratio) && drift < 0.01,
        format!("max error {e1:.3e} at dt, {e2:.3e} at dt/2, ratio {ratio:.3} (in [3.5, 4.5]); energy drift {:.4}% (< 1%)", drift * 100.0),
    ))
}

// ---------------------------------------------------------------- 4

/// Closed-form magnitude of a bilinear-transformed Butterworth design.
fn analytic_magnitude(spec: &FilterSpec, f: f64) -> f64 {
    let w = |hz: f64| (PI * hz / spec.fs).tan();
    let (n, omega) = match spec.kind {
        FilterKind::Lowpass => (spec.order, w(f) / w(spec.cutoff_hz[0])),
        FilterKind::Highpass => (spec.order, w(spec.cutoff_hz[0]) / w(f)),
        FilterKind::Bandpass => {
            let (w1, w2) = (w(spec.cutoff_hz[0]), w(spec.cutoff_hz[1]));
            (spec.order / 2, (w(f) * w(f) - w1 * w2) / (w(f) * (w2 - w1)))
        }
    };
    (1.0 / (1.0 + omega.abs().powi(2 * n as i32))).sqrt()
}

fn filter_suite() -> Result<Outcome, String> {
    let specs = [
        (FilterSpec::lowpass(4, 4.0, 1000.0), 40.0),
        (FilterSpec::lowpass(2, 1.0, 1000.0), 10.0),
        (FilterSpec::highpass(4, 20.0, 1000.0), 2.0),
        (FilterSpec::bandpass(4, 20.0, 450.0, 2000.0), 2.0),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut notes = Vec::new();
    let mut pass = true;
    for (spec, stop_hz) in &specs {
        let sos = butterworth_design(spec).map_err(fmt)?;
        let dc_want = if spec.kind == FilterKind::Lowpass { 1.0 } else { 0.0 };
        let dc = (sos.magnitude(0.0) - dc_want).abs();
        let corner = spec
            .cutoff_hz
            .iter()
            .map(|&fc| (sos.magnitude(fc) - FRAC_1_SQRT_2).abs())
            .fold(0.0, f64::max);
        let want = analytic_magnitude(spec, *stop_hz);
        let stop = (sos.magnitude(*stop_hz) - want).abs() / want;
        let y = sos.filt_filt(&x).map_err(fmt)?;
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        let mut yr = sos.filt_filt(&rev).map_err(fmt)?;
        yr.reverse();
        let sym = y.iter().zip(&yr).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let ok = dc < 1e-12 && corner < 1e-6 && stop < 1e-6 && want < 0.01 && sym < 1e-9;
        pass &= ok;
        notes.push(format!(
            "{:?} {:?} Hz: dc err {dc:.1e}, corner err {corner:.1e}, stopband {stop_hz} Hz |H| {want:.2e} rel err {stop:.1e}, reversal err {sym:.1e}",
            spec.kind, spec.cutoff_hz
        ));
    }
    Ok(outcome(pass, notes.join("; ")))
}

// ---------------------------------------------------------------- 5

fn wrist_trials(n: usize, duration: f64, seed: u64) -> Result<Vec<Trial>, String> {
    let sim = SimConfig {
        stride: 10,
        ..SimConfig::new(duration, seed)
    };
    Ok(generate_synthetic_dataset(&sim, &MskModel::synthetic_wrist(), n)
        .map_err(fmt)?
        .iter()
        .map(|t| t.decimate(sim.stride))
        .collect())
}

/// Teacher-forced physics loss pooled over every scored sample.
fn pooled_l_phy(model: &PennModel, trials: &[Trial]) -> Result<f64, String> {
    let (mut sum, mut n) = (0.0, 0usize);
    for tr in trials {
        let t = teacher_forced(model, tr).map_err(fmt)?;
        let (theta, phy) = t.scored_phy();
        sum += theta.iter().zip(phy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        n += theta.len();
    }
    Ok(sum / n as f64)
}

fn parameter_recovery() -> Result<Outcome, String> {
    let data = wrist_trials(5, 20.0, 5)?;
    let mut base = MskModel::synthetic_wrist();
    for m in &mut base.muscles {
        m.f_max *= 1.2;
        m.l_tendon_slack *= 1.2;
    }
    let cfg = TrainConfig {
        seed: 5,
        ..TrainConfig::default()
    };
    let (train, heldout) = split_dataset(&data, cfg.train_fraction, cfg.stage_seed(0)).map_err(fmt)?;
    let mut model = PennModel::new(base, Hyper::default(), cfg.stage_seed(3)).map_err(fmt)?;
    let before = pooled_l_phy(&model, &train)?;
    let report = train_phase_one(&mut model, &train, &heldout, &cfg).map_err(fmt)?;
    let after = pooled_l_phy(&model, &train)?;
    let reduction = before / after;
    let mut worst: f64 = 0.0;
    for tr in &heldout {
        let t = teacher_forced(&model, tr).map_err(fmt)?;
        let (theta, hat) = t.scored();
        worst = worst.max(rmse(theta, hat).map_err(fmt)?.to_degrees());
    }
    Ok(outcome(
        reduction >= 10.0 && worst < 2.0,
        format!(
            "L_phy {before:.3e} -> {after:.3e} ({reduction:.1}x, >= 10x) after {} epochs ({:?}); held-out teacher-forced RMSE {worst:.4} deg (< 2)",
            report.epochs, report.stop
        ),
    ))
}

// ---------------------------------------------------------------- 6

fn free_metrics(model: &PennModel, trials: &[Trial]) -> Result<(f64, f64), String> {
    let (mut e, mut r2) = (0.0, f64::INFINITY);
    for tr in trials {
        let t = free_run(model, tr).map_err(fmt)?;
        let (theta, hat) = t.scored();
        e += rmse(theta, hat).map_err(fmt)?.to_degrees();
        r2 = r2.min(r_squared(theta, hat).map_err(fmt)?);
    }
    Ok((e / trials.len() as f64, r2))
}

fn two_phase_improvement() -> Result<Outcome, String> {
    let data = wrist_trials(6, 20.0, 21)?;
    let fresh = wrist_trials(2, 20.0, 1021)?;
    let mut base = MskModel::synthetic_wrist();
    base.geometry = base.geometry.with_scaled_moment_arms(0.8);
    let cfg = TrainConfig {
        seed: 3,
        ..TrainConfig::default()
    };
    let (train, heldout) = split_dataset(&data, cfg.train_fraction, cfg.stage_seed(0)).map_err(fmt)?;
    let mut model = PennModel::new(base, Hyper::default(), cfg.stage_seed(3)).map_err(fmt)?;
    train_phase_one(&mut model, &train, &heldout, &cfg).map_err(fmt)?;
    let (p1_split, _) = free_metrics(&model, &heldout)?;
    let (p1_fresh, _) = free_metrics(&model, &fresh)?;
    let report = train_phase_two(&mut model, &train, &heldout, &cfg).map_err(fmt)?;
    let (p2_split, r2_split) = free_metrics(&model, &heldout)?;
    let (p2_fresh, r2_fresh) = free_metrics(&model, &fresh)?;
    let gain = |a: f64, b: f64| 1.0 - b / a;
    let pass = gain(p1_split, p2_split) >= 0.25 && gain(p1_fresh, p2_fresh) >= 0.25 && r2_split > 0.9 && r2_fresh > 0.9;
    Ok(outcome(
        pass,
        format!(
            "held-out split RMSE {p1_split:.4} -> {p2_split:.4} deg ({:.0}% lower), min R2 {r2_split:.4}; \
             independent trials RMSE {p1_fresh:.4} -> {p2_fresh:.4} deg ({:.0}% lower), min R2 {r2_fresh:.4}; \
             phase two {} epochs ({:?}, best {})",
            100.0 * gain(p1_split, p2_split),
            100.0 * gain(p1_fresh, p2_fresh),
            report.epochs,
            report.stop,
            report.best_epoch
        ),
    ))
}

// ---------------------------------------------------------------- 7

fn architecture_identities() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0usize;
    let mut checked = 0usize;
    for seed in 0..20u64 {
        let window = rng.random_range(1..40);
        let hyper = Hyper {
            window,
            ..Hyper::default()
        };
        let model = PennModel::new(MskModel::synthetic_wrist(), hyper, seed).map_err(fmt)?;
        for k in 0..50 {
            let x = Tensor::new(vec![7, window], (0..7 * window).map(|_| rng.random_range(-10.0..10.0)).collect())
                .map_err(fmt)?;
            let prev = rng.random_range(-0.8..0.8);
            let prev2 = prev + rng.random_range(-0.01..0.01);
            let u: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let mode = if k % 2 == 0 { Mode::Train } else { Mode::Eval };
            let est = model.estimate(&x, prev, prev2, &u, 0.01, mode, &mut rng).map_err(fmt)?;
            checked += 1;
            if est.hat != est.phy || est.res != 0.0 {
                mismatches += 1;
            }
        }
    }
    let model = PennModel::new(MskModel::synthetic_wrist(), Hyper::default(), 0).map_err(fmt)?;
    for tr in wrist_trials(1, 5.0, 70)? {
        let t = free_run(&model, &tr).map_err(fmt)?;
        checked += t.len();
        mismatches += t.hat.iter().zip(&t.phy).filter(|(a, b)| a != b).count();
    }

    // any window length collapses to one scalar, for trained-looking weights too
    let mut non_scalar = Vec::new();
    for w in 1..=64 {
        let hyper = Hyper {
            window: w,
            ..Hyper::default()
        };
        let mut m = PennModel::new(MskModel::synthetic_wrist(), hyper.clone(), w as u64).map_err(fmt)?;
        let flat: Vec<f64> = m.net.flat().iter().map(|_| rng.random_range(-0.5..0.5)).collect();
        m.net.set_flat(&flat);
        let tape = Tape::new();
        let net = NetVars::constants(&tape, &m.net);
        let x = Tensor::new(vec![7, w], (0..7 * w).map(|_| rng.random_range(-1.0..1.0)).collect()).map_err(fmt)?;
        let out = residual_forward(&net, &x, tape.scalar_constant(0.1), &hyper, Mode::Eval, &mut rng).map_err(fmt)?;
        if !out.shape().is_empty() {
            non_scalar.push(w);
        }
    }

    let tape = Tape::new();
    let net = NetVars::constants(&tape, &model.net);
    let x = tape.constant(Tensor::zeros(&[7, 16]));
    let conv = conv1d(x, net.conv_w, net.conv_b, 1, 1).map_err(fmt)?;
    let pool = maxpool1d(conv.relu(), 2, 1, 1).map_err(fmt)?;
    let gap = global_avg_pool(pool).map_err(fmt)?;
    let hidden = dense(gap, net.dense_w, net.dense_b).map_err(fmt)?;
    let joined = concat(&[hidden, reshape(tape.scalar_constant(0.0), &[1]).map_err(fmt)?]).map_err(fmt)?;
    let fused = dense(joined, net.fusion_w, net.fusion_b).map_err(fmt)?;
    let shapes = [
        (model.net.conv_w.shape().to_vec(), vec![32, 7, 3]),
        (conv.shape(), vec![32, 16]),
        (pool.shape(), vec![32, 17]),
        (gap.shape(), vec![32]),
        (hidden.shape(), vec![32]),
        (joined.shape(), vec![33]),
        (fused.shape(), vec![1]),
    ];
    let shapes_ok = shapes.iter().all(|(got, want)| got == want);
    Ok(outcome(
        mismatches == 0 && non_scalar.is_empty() && shapes_ok,
        format!(
            "{checked} fresh estimates with theta_hat != theta_phy: {mismatches}; non-scalar outputs for W in 1..=64: {non_scalar:?}; \
             layer shapes conv {:?} pool {:?} gap {:?} dense {:?} concat {:?} fusion {:?}",
            shapes[1].0, shapes[2].0, shapes[3].0, shapes[4].0, shapes[5].0, shapes[6].0
        ),
    ))
}

// ---------------------------------------------------------------- 8

fn metric_oracles() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut e_rmse, mut e_r2): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let n = rng.random_range(2..300);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        let mut sq = 0.0;
        for i in 0..n {
            sq += (a[i] - b[i]) * (a[i] - b[i]);
        }
        let want_rmse = (sq / n as f64).sqrt();
        let mut mean = 0.0;
        for v in &a {
            mean += v;
        }
        mean /= n as f64;
        let mut tot = 0.0;
        for v in &a {
            tot += (v - mean) * (v - mean);
        }
        let want_r2 = 1.0 - sq / tot;
        e_rmse = e_rmse.max((rmse(&a, &b).map_err(fmt)? - want_rmse).abs());
        e_r2 = e_r2.max((r_squared(&a, &b).map_err(fmt)? - want_r2).abs());
    }

    let (mut e_t, mut e_p): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let n = rng.random_range(2..40);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(2.0..8.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + rng.random_range(-1.0..1.5)).collect();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let t = mean / (sd / (n as f64).sqrt());
        let got = paired_t_test(&a, &b).map_err(fmt)?;
        e_t = e_t.max((got.t - t).abs() / t.abs().max(1.0));
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(fmt)?;
        e_p = e_p.max((got.p - 2.0 * (1.0 - dist.cdf(t.abs()))).abs());
    }
    let crit = student_t_quantile(0.975, 5.0);
    let cdf_back = student_t_cdf(crit, 5.0);
    let pass = e_rmse < 1e-10 && e_r2 < 1e-10 && e_t < 1e-10 && (crit - 2.5706).abs() < 1e-3 && e_p < 1e-8;
    Ok(outcome(
        pass,
        format!(
            "rmse err {e_rmse:.1e}, R2 err {e_r2:.1e}, t err {e_t:.1e} (all < 1e-10); p err {e_p:.1e}; t_(0.975,5) = {crit:.6} (cdf {cdf_back:.12})"
        ),
    ))
}

// ---------------------------------------------------------------- 9

fn determinism() -> Result<Outcome, String> {
    let tmp = tempfile::tempdir().map_err(fmt)?;
    let sets: Vec<String> = [
        "sim.duration=8",
        "sim.n_trials=4",
        "muscles.0.f_max=130",
        "train.phase1_max_epochs=20",
        "train.phase2_max_epochs=20",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let cfg = RunConfig::load(Path::new(CONFIG), &sets).map_err(fmt)?;
    let data = tmp.path().join("data");
    let truth = RunConfig::load(Path::new(CONFIG), &sets[..2]).map_err(fmt)?;
    pipeline::simulate(&truth, &data).map_err(fmt)?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ra = pipeline::train(&cfg, &data, &a, None).map_err(fmt)?;
    pipeline::train(&cfg, &data, &b, None).map_err(fmt)?;
    let files = [
        "losses.csv",
        "checkpoint_phase1/weights.bin",
        "checkpoint_phase1/manifest.toml",
        "checkpoint_phase1/losses.csv",
        "checkpoint_phase2/weights.bin",
        "checkpoint_phase2/manifest.toml",
        "checkpoint_phase2/losses.csv",
    ];
    let mut differing = Vec::new();
    for f in files {
        let (x, y) = (std::fs::read(a.join(f)).map_err(fmt)?, std::fs::read(b.join(f)).map_err(fmt)?);
        if x != y {
            differing.push(f);
        }
    }
    let epochs = ra.records.iter().map(|r| r.epoch).max().unwrap_or(0);
    Ok(outcome(
        differing.is_empty(),
        format!(
            "{} files compared byte for byte, {} loss records up to epoch {epochs}; differing: {differing:?}",
            files.len(),
            ra.records.len()
        ),
    ))
}

type Check = fn() -> Result<Outcome, String>;

/// Runs every criterion, or only those whose numbers are given as arguments.
fn main() {
    let min = |m: u64| Duration::from_secs(60 * m);
    let criteria: [(usize, &str, Duration, Check); 9] = [
        (1, "Hill-model invariants", Duration::from_secs(1), hill_invariants),
        (2, "gradient fidelity", Duration::from_secs(30), gradient_fidelity),
        (3, "integrator oracle", min(1), integrator_oracle),
        (4, "filter suite", min(1), filter_suite),
        (5, "phase-one parameter recovery", min(5), parameter_recovery),
        (6, "two-phase improvement", min(15), two_phase_improvement),
        (7, "architecture identities", min(1), architecture_identities),
        (8, "metric oracles", min(1), metric_oracles),
        (9, "determinism", min(10), determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let results: Vec<bool> = criteria
        .into_iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.0))
        .map(|(n, name, budget, f)| run(n, name, budget, f))
        .collect();
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
