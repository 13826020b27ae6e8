//! Hill-type musculotendon model and single-hinge joint dynamics.
//!
//! Every function is generic over [`Real`] so the same code evaluates plain
//! `f64` values in the simulator and records a differentiable graph during
//! training. Geometry and joint parameters are fixed data; muscle and
//! activation parameters carry the scalar type.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::diffnet::Real;

/// Default activation-dependent shift of the optimal fiber length.
pub const LAMBDA_AL: f64 = 0.15;
/// Default maximum shortening velocity, in optimal fiber lengths per second.
pub const V_MAX_FACTOR: f64 = 10.0;
/// Default width of the active force-length curve.
pub const K_FL: f64 = 0.45;
/// Tolerance on excitations outside `[0, 1]` before they are rejected.
pub const EXCITATION_TOL: f64 = 1e-9;
/// Tolerance on the pennation arcsin argument above 1.
pub const ARCSIN_TOL: f64 = 1e-12;
/// Upper clamp of the force-velocity gain (lengthening asymptote 2.34/1.3).
pub const FV_MAX: f64 = 1.8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MskError {
    #[error("excitation {0} outside [0, 1]")]
    Excitation(f64),
    #[error("pennation undefined: arcsin argument {0} exceeds 1")]
    Pennation(f64),
    #[error("musculotendon length {l_mt} does not exceed tendon slack length {slack}")]
    Geometry { l_mt: f64, slack: f64 },
    #[error("joint angle {theta} outside configured range [{min}, {max}]")]
    Range { theta: f64, min: f64, max: f64 },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Per-muscle physiological parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuscleParams<S = f64> {
    /// Maximum isometric force (N).
    pub f_max: S,
    /// Optimal fiber length (m).
    pub l_opt: S,
    /// Tendon slack length (m).
    pub l_tendon_slack: S,
    /// Pennation angle at optimal fiber length (rad).
    pub phi_opt: S,
    /// Active force-length width.
    pub k_fl: S,
    #[serde(default = "default_lambda")]
    pub lambda_al: f64,
    #[serde(default = "default_vmax")]
    pub v_max_factor: f64,
}

fn default_lambda() -> f64 {
    LAMBDA_AL
}

fn default_vmax() -> f64 {
    V_MAX_FACTOR
}

impl MuscleParams<f64> {
    pub fn new(f_max: f64, l_opt: f64, l_tendon_slack: f64, phi_opt: f64) -> Self {
        Self {
            f_max,
            l_opt,
            l_tendon_slack,
            phi_opt,
            k_fl: K_FL,
            lambda_al: LAMBDA_AL,
            v_max_factor: V_MAX_FACTOR,
        }
    }

    pub fn validate(&self) -> Result<(), MskError> {
        let bad = |m: &str| Err(MskError::Invalid(m.to_string()));
        if !(self.f_max > 0.0) {
            return bad("f_max must be > 0");
        }
        if !(self.l_opt > 0.0) {
            return bad("l_opt must be > 0");
        }
        if !(self.l_tendon_slack >= 0.0) {
            return bad("l_tendon_slack must be >= 0");
        }
        if !(0.0..PI / 3.0).contains(&self.phi_opt) {
            return bad("phi_opt must lie in [0, pi/3)");
        }
        if !(self.k_fl > 0.0) {
            return bad("k_fl must be > 0");
        }
        if !(self.v_max_factor > 0.0) {
            return bad("v_max_factor must be > 0");
        }
        Ok(())
    }

    /// Lifts the parameters into another scalar context as constants.
    pub fn lift<S: Real>(&self, like: S) -> MuscleParams<S> {
        MuscleParams {
            f_max: like.constant(self.f_max),
            l_opt: like.constant(self.l_opt),
            l_tendon_slack: like.constant(self.l_tendon_slack),
            phi_opt: like.constant(self.phi_opt),
            k_fl: like.constant(self.k_fl),
            lambda_al: self.lambda_al,
            v_max_factor: self.v_max_factor,
        }
    }
}

impl<S: Real> MuscleParams<S> {
    pub fn values(&self) -> MuscleParams<f64> {
        MuscleParams {
            f_max: self.f_max.value(),
            l_opt: self.l_opt.value(),
            l_tendon_slack: self.l_tendon_slack.value(),
            phi_opt: self.phi_opt.value(),
            k_fl: self.k_fl.value(),
            lambda_al: self.lambda_al,
            v_max_factor: self.v_max_factor,
        }
    }
}

/// Shape of the excitation-to-activation nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationParams<S = f64> {
    pub a_shape: S,
}

impl ActivationParams<f64> {
    pub fn validate(&self) -> Result<(), MskError> {
        let a = self.a_shape.abs();
        if !(0.01..=5.0).contains(&a) {
            return Err(MskError::Invalid(format!(
                "a_shape {} outside [-5, -0.01] U [0.01, 5]",
                self.a_shape
            )));
        }
        Ok(())
    }
}

/// Rigid-body parameters of the hinge joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointParams {
    /// Moment of inertia about the hinge (kg m^2).
    pub inertia: f64,
    /// Viscous damping (N m s / rad).
    pub damping: f64,
    pub mass: f64,
    /// Hinge to center-of-mass distance (m).
    pub com_length: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

fn default_gravity() -> f64 {
    9.81
}

impl JointParams {
    pub fn validate(&self) -> Result<(), MskError> {
        if !(self.inertia > 0.0 && self.damping >= 0.0 && self.mass > 0.0 && self.com_length > 0.0)
        {
            return Err(MskError::Invalid(
                "joint needs inertia > 0, damping >= 0, mass > 0, com_length > 0".into(),
            ));
        }
        Ok(())
    }

    /// Gravity stiffness `m g L` about the hanging equilibrium.
    pub fn gravity_torque_scale(&self) -> f64 {
        self.mass * self.gravity * self.com_length
    }
}

/// Per-muscle cubic musculotendon length polynomials over a joint range.
///
/// Moment arms are not stored: they are the negated angle derivative of the
/// length polynomial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryPoly {
    pub mtu_coeffs: Vec<[f64; 4]>,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl GeometryPoly {
    pub fn n_muscles(&self) -> usize {
        self.mtu_coeffs.len()
    }

    fn coeffs(&self, theta: f64, muscle: usize) -> Result<&[f64; 4], MskError> {
        if !(self.theta_min..=self.theta_max).contains(&theta) {
            return Err(MskError::Range {
                theta,
                min: self.theta_min,
                max: self.theta_max,
            });
        }
        self.mtu_coeffs.get(muscle).ok_or_else(|| {
            MskError::Length(format!(
                "muscle {muscle} out of {} geometry entries",
                self.mtu_coeffs.len()
            ))
        })
    }

    /// `c0 + c1 theta + c2 theta^2 + c3 theta^3`
    pub fn mtu_length(&self, theta: f64, muscle: usize) -> Result<f64, MskError> {
        let c = self.coeffs(theta, muscle)?;
        Ok(c[0] + theta * (c[1] + theta * (c[2] + theta * c[3])))
    }

    /// `-(c1 + 2 c2 theta + 3 c3 theta^2)`; positive for flexors.
    pub fn moment_arm(&self, theta: f64, muscle: usize) -> Result<f64, MskError> {
        let c = self.coeffs(theta, muscle)?;
        Ok(-(c[1] + theta * (2.0 * c[2] + theta * 3.0 * c[3])))
    }

    /// Copy with every moment arm multiplied by `factor`, lengths at
    /// `theta = 0` unchanged.
    pub fn with_scaled_moment_arms(&self, factor: f64) -> Self {
        let mut g = self.clone();
        for c in &mut g.mtu_coeffs {
            for v in &mut c[1..] {
                *v *= factor;
            }
        }
        g
    }

    /// Smallest musculotendon length of `muscle` over the joint range.
    pub fn min_mtu_length(&self, muscle: usize) -> Result<f64, MskError> {
        let c = self.coeffs(self.theta_min, muscle)?;
        let mut candidates = vec![self.theta_min, self.theta_max];
        // Stationary points: c1 + 2 c2 t + 3 c3 t^2 = 0.
        let (a, b, cc) = (3.0 * c[3], 2.0 * c[2], c[1]);
        if a.abs() > 0.0 {
            let disc = b * b - 4.0 * a * cc;
            if disc >= 0.0 {
                let s = disc.sqrt();
                candidates.push((-b + s) / (2.0 * a));
                candidates.push((-b - s) / (2.0 * a));
            }
        } else if b.abs() > 0.0 {
            candidates.push(-cc / b);
        }
        candidates
            .into_iter()
            .filter(|t| (self.theta_min..=self.theta_max).contains(t))
            .map(|t| self.mtu_length(t, muscle))
            .try_fold(f64::INFINITY, |m, l| l.map(|l| m.min(l)))
    }

    /// Checks range ordering and that every musculotendon stays longer than
    /// its tendon over the whole range.
    pub fn validate(&self, muscles: &[MuscleParams]) -> Result<(), MskError> {
        if !(self.theta_min < self.theta_max) {
            return Err(MskError::Invalid("theta_min must be < theta_max".into()));
        }
        if muscles.len() != self.mtu_coeffs.len() {
            return Err(MskError::Length(format!(
                "{} muscles but {} geometry polynomials",
                muscles.len(),
                self.mtu_coeffs.len()
            )));
        }
        for (i, m) in muscles.iter().enumerate() {
            let l_min = self.min_mtu_length(i)?;
            if l_min <= m.l_tendon_slack {
                return Err(MskError::Geometry {
                    l_mt: l_min,
                    slack: m.l_tendon_slack,
                });
            }
        }
        Ok(())
    }
}

/// A complete single-joint musculoskeletal model with plain `f64` parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MskModel {
    pub muscles: Vec<MuscleParams>,
    pub activation: ActivationParams,
    pub geometry: GeometryPoly,
    pub joint: JointParams,
}

impl MskModel {
    pub fn validate(&self) -> Result<(), MskError> {
        if self.muscles.is_empty() {
            return Err(MskError::Invalid("at least one muscle is required".into()));
        }
        for m in &self.muscles {
            m.validate()?;
        }
        self.activation.validate()?;
        self.joint.validate()?;
        self.geometry.validate(&self.muscles)
    }

    pub fn n_muscles(&self) -> usize {
        self.muscles.len()
    }

    /// Five-muscle wrist flexion/extension model used for synthetic data.
    ///
    /// Two flexors and three extensors act on a hanging hand segment.
    /// Positive angles are flexion; every fiber sits at its optimal length
    /// at `theta = 0`.
    pub fn synthetic_wrist() -> Self {
        // (f_max, l_opt, l_tendon_slack, phi_opt, moment arm at 0, curvature)
        let table = [
            (110.0, 0.090, 0.060, 0.05, 0.016, -0.0015),
            (120.0, 0.085, 0.065, 0.20, 0.014, -0.0010),
            (90.0, 0.080, 0.070, 0.05, -0.012, 0.0010),
            (95.0, 0.075, 0.075, 0.15, -0.013, 0.0012),
            (70.0, 0.070, 0.060, 0.10, -0.009, 0.0008),
        ];
        let muscles: Vec<MuscleParams> = table
            .iter()
            .map(|&(f, lo, ls, phi, _, _)| MuscleParams::new(f, lo, ls, phi))
            .collect();
        let mtu_coeffs = table
            .iter()
            .map(|&(_, lo, ls, phi, r, c2)| [ls + lo * phi.cos(), -r, c2, 0.0])
            .collect();
        Self {
            muscles,
            activation: ActivationParams { a_shape: -1.0 },
            geometry: GeometryPoly {
                mtu_coeffs,
                theta_min: -PI / 2.0,
                theta_max: PI / 2.0,
            },
            joint: JointParams {
                inertia: 0.01,
                damping: 0.15,
                mass: 1.5,
                com_length: 0.08,
                gravity: 9.81,
            },
        }
    }

    pub fn plant(&self) -> Plant<'_, f64> {
        Plant {
            muscles: &self.muscles,
            activation: &self.activation,
            geometry: &self.geometry,
            joint: &self.joint,
        }
    }
}

/// Borrowed view of the model over scalar type `S`.
#[derive(Debug, Clone, Copy)]
pub struct Plant<'a, S> {
    pub muscles: &'a [MuscleParams<S>],
    pub activation: &'a ActivationParams<S>,
    pub geometry: &'a GeometryPoly,
    pub joint: &'a JointParams,
}

impl<S: Real> Plant<'_, S> {
    /// Joint acceleration produced by excitations `u` at state `(theta, theta_dot)`.
    pub fn acceleration(&self, theta: f64, theta_dot: f64, u: &[f64]) -> Result<S, MskError> {
        if u.len() != self.muscles.len() {
            return Err(MskError::Length(format!(
                "{} excitations for {} muscles",
                u.len(),
                self.muscles.len()
            )));
        }
        let mut forces = Vec::with_capacity(u.len());
        let mut arms = Vec::with_capacity(u.len());
        for (i, (m, &ui)) in self.muscles.iter().zip(u).enumerate() {
            let l_mt = self.geometry.mtu_length(theta, i)?;
            let r = self.geometry.moment_arm(theta, i)?;
            let v_mt = -r * theta_dot;
            forces.push(muscle_tendon_force(ui, l_mt, v_mt, m, self.activation)?);
            arms.push(r);
        }
        let tau = joint_torque_from_muscles(&forces, &arms)?;
        Ok(joint_acceleration(tau, theta, theta_dot, self.joint))
    }
}

/// `a = (e^{A u} - 1) / (e^A - 1)`; identity in the `A -> 0` limit.
pub fn activation<S: Real>(u: f64, p: &ActivationParams<S>) -> Result<S, MskError> {
    if !(-EXCITATION_TOL..=1.0 + EXCITATION_TOL).contains(&u) {
        return Err(MskError::Excitation(u));
    }
    let u = u.clamp(0.0, 1.0);
    let a = p.a_shape;
    if a.value().abs() < 1e-12 {
        return Ok(a.constant(u));
    }
    Ok(((a * u).exp() - 1.0) / (a.exp() - 1.0))
}

/// Pennation angle from constant fiber-projection height.
pub fn pennation_angle<S: Real>(l_m: S, p: &MuscleParams<S>) -> Result<S, MskError> {
    let arg = p.l_opt * p.phi_opt.sin() / l_m;
    let v = arg.value();
    if v > 1.0 + ARCSIN_TOL || v.is_nan() {
        return Err(MskError::Pennation(v));
    }
    if v > 1.0 {
        return Ok(arg.constant(PI / 2.0));
    }
    Ok(arg.asin())
}

/// Fiber length normalized by the activation-shifted optimal length.
pub fn normalized_active_fiber_length<S: Real>(l_m: S, a: S, p: &MuscleParams<S>) -> S {
    l_m / (p.l_opt * (a.rsub(1.0) * p.lambda_al + 1.0))
}

/// Gaussian active force-length gain, 1 at `l_bar_a = 1`.
pub fn active_force_length<S: Real>(l_bar_a: S, k_fl: S) -> S {
    let d = l_bar_a - 1.0;
    (-(d * d) / k_fl).exp()
}

/// Force-velocity gain; shortening for `v_bar <= 0`, lengthening above.
pub fn force_velocity<S: Real>(v_bar: S) -> S {
    let v = v_bar.value();
    let gain = if v <= -1.0 {
        return v_bar.constant(0.0);
    } else if v <= 0.0 {
        (v_bar + 1.0) * 0.3 / v_bar.rsub(0.3)
    } else {
        (v_bar * 2.34 + 0.039) / (v_bar * 1.3 + 0.039)
    };
    let g = gain.value();
    if g > FV_MAX {
        gain.constant(FV_MAX)
    } else if g < 0.0 {
        gain.constant(0.0)
    } else {
        gain
    }
}

/// Passive fiber force; zero up to the optimal length, exponential beyond.
pub fn passive_force<S: Real>(l_m: S, p: &MuscleParams<S>) -> S {
    if l_m.value() <= p.l_opt.value() {
        return l_m.constant(0.0);
    }
    let l_bar = l_m / p.l_opt;
    p.f_max * ((l_bar - 1.0) * 10.0).exp() / 5f64.exp()
}

/// Fiber length under a rigid tendon and constant-height pennation.
pub fn fiber_length_rigid_tendon<S: Real>(l_mt: f64, p: &MuscleParams<S>) -> Result<S, MskError> {
    let slack = p.l_tendon_slack.value();
    if l_mt <= slack {
        return Err(MskError::Geometry { l_mt, slack });
    }
    let along = p.l_tendon_slack.rsub(l_mt);
    let height = p.l_opt * p.phi_opt.sin();
    Ok((along * along + height * height).sqrt())
}

/// Time derivative of the rigid-tendon fiber length.
pub fn fiber_velocity<S: Real>(l_mt: f64, v_mt: f64, l_m: S, p: &MuscleParams<S>) -> S {
    p.l_tendon_slack.rsub(l_mt) * v_mt / l_m
}

/// Musculotendon force along the tendon for excitation `u`.
pub fn muscle_tendon_force<S: Real>(
    u: f64,
    l_mt: f64,
    v_mt: f64,
    p: &MuscleParams<S>,
    ap: &ActivationParams<S>,
) -> Result<S, MskError> {
    let a = activation(u, ap)?;
    let l_m = fiber_length_rigid_tendon(l_mt, p)?;
    let phi = pennation_angle(l_m, p)?;
    let v_bar = fiber_velocity(l_mt, v_mt, l_m, p) / (p.l_opt * p.v_max_factor);
    let l_bar_a = normalized_active_fiber_length(l_m, a, p);
    let active = p.f_max * active_force_length(l_bar_a, p.k_fl) * force_velocity(v_bar) * a;
    let passive = passive_force(l_m, p);
    Ok((active + passive) * phi.cos())
}

/// `(tau - C theta_dot - m g L sin theta) / I`
pub fn joint_acceleration<S: Real>(tau: S, theta: f64, theta_dot: f64, jp: &JointParams) -> S {
    (tau - jp.damping * theta_dot - jp.gravity_torque_scale() * theta.sin()) / jp.inertia
}

/// Net joint torque `sum_i r_i F_i`.
pub fn joint_torque_from_muscles<S: Real>(forces: &[S], arms: &[f64]) -> Result<S, MskError> {
    if forces.len() != arms.len() || forces.is_empty() {
        return Err(MskError::Length(format!(
            "{} forces vs {} moment arms",
            forces.len(),
            arms.len()
        )));
    }
    let mut tau = forces[0] * arms[0];
    for (f, r) in forces.iter().zip(arms).skip(1) {
        tau = tau + *f * *r;
    }
    Ok(tau)
}
