use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::diffnet::layers::{concat, conv1d, dense, dropout, global_avg_pool, maxpool1d, reshape};
use crate::diffnet::{Mode, Real, ShapeError, Tape, Tensor, Var};
use crate::msk::{ActivationParams, MskError, MskModel, MuscleParams, Plant};
use crate::sim::physics_step;

use super::PennError;

/// Trainable physics quantities per muscle, in storage order.
pub const MUSCLE_FIELDS: [&str; 5] = ["f_max", "l_tendon_slack", "k_fl", "l_opt", "phi_opt"];

/// Scale-factor range around each initial physics value.
pub const SCALE_RANGE: (f64, f64) = (0.5, 1.5);

/// Magnitude range of the activation shape factor.
pub const A_RANGE: (f64, f64) = (0.01, 5.0);

/// Maps unconstrained raw values `z` to bounded physics parameters
/// `lo + (hi - lo) * sigmoid(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsEncoding {
    /// Initial model; supplies geometry, joint and fixed muscle constants.
    pub base: MskModel,
    /// `(lo, hi)` per raw value, muscle-major then the activation shape.
    pub bounds: Vec<(f64, f64)>,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl PhysicsEncoding {
    pub fn new(base: MskModel) -> Result<Self, MskError> {
        base.validate()?;
        let (s_lo, s_hi) = SCALE_RANGE;
        let mut bounds = Vec::with_capacity(5 * base.n_muscles() + 1);
        for (i, m) in base.muscles.iter().enumerate() {
            // slack must stay below the shortest musculotendon length
            let l_mt_min = base.geometry.min_mtu_length(i)?;
            let slack_hi = (s_hi * m.l_tendon_slack).min(0.999 * l_mt_min);
            let phi_hi = (s_hi * m.phi_opt).min(PI / 3.0 * (1.0 - 1e-9));
            bounds.push((s_lo * m.f_max, s_hi * m.f_max));
            bounds.push((s_lo * m.l_tendon_slack, slack_hi));
            bounds.push((s_lo * m.k_fl, s_hi * m.k_fl));
            bounds.push((s_lo * m.l_opt, s_hi * m.l_opt));
            bounds.push((s_lo * m.phi_opt, phi_hi));
        }
        let a = base.activation.a_shape;
        // nudged inward so rounding in the decoder cannot leave the range
        let (a_lo, a_hi) = (A_RANGE.0 * (1.0 + 1e-9), A_RANGE.1 * (1.0 - 1e-9));
        bounds.push(if a < 0.0 { (-a_hi, -a_lo) } else { (a_lo, a_hi) });
        Ok(Self { base, bounds })
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    pub fn n_muscles(&self) -> usize {
        self.base.n_muscles()
    }

    /// Name of raw value `k`, e.g. `muscle[2].l_opt` or `a_shape`.
    pub fn name(&self, k: usize) -> String {
        if k == self.len() - 1 {
            "a_shape".into()
        } else {
            format!("muscle[{}].{}", k / 5, MUSCLE_FIELDS[k % 5])
        }
    }

    fn initial_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .base
            .muscles
            .iter()
            .flat_map(|m| [m.f_max, m.l_tendon_slack, m.k_fl, m.l_opt, m.phi_opt])
            .collect();
        v.push(self.base.activation.a_shape);
        v
    }

    /// Raw values that decode to the base model.
    pub fn initial_raw(&self) -> Vec<f64> {
        self.initial_values()
            .iter()
            .zip(&self.bounds)
            .map(|(&v, &(lo, hi))| {
                if hi - lo <= 0.0 {
                    0.0
                } else {
                    let p = ((v - lo) / (hi - lo)).clamp(1e-12, 1.0 - 1e-12);
                    if (p - 0.5).abs() < 1e-15 {
                        0.0
                    } else {
                        logit(p)
                    }
                }
            })
            .collect()
    }

    /// Bounded physics parameters in scalar context `S`.
    pub fn decode<S: Real>(&self, z: &[S]) -> (Vec<MuscleParams<S>>, ActivationParams<S>) {
        assert_eq!(z.len(), self.len(), "raw physics vector has the wrong length");
        let d = |k: usize| {
            let (lo, hi) = self.bounds[k];
            z[k].sigmoid() * (hi - lo) + lo
        };
        let muscles = self
            .base
            .muscles
            .iter()
            .enumerate()
            .map(|(i, m)| MuscleParams {
                f_max: d(5 * i),
                l_tendon_slack: d(5 * i + 1),
                k_fl: d(5 * i + 2),
                l_opt: d(5 * i + 3),
                phi_opt: d(5 * i + 4),
                lambda_al: m.lambda_al,
                v_max_factor: m.v_max_factor,
            })
            .collect();
        let activation = ActivationParams {
            a_shape: d(self.len() - 1),
        };
        (muscles, activation)
    }

    /// The plain model described by raw values `z`.
    pub fn decode_model(&self, z: &[f64]) -> MskModel {
        let (muscles, activation) = self.decode(z);
        MskModel {
            muscles,
            activation,
            ..self.base.clone()
        }
    }
}

/// One physics step under the parameters encoded by `z`.
pub fn physics_forward<S: Real>(
    enc: &PhysicsEncoding,
    z: &[S],
    theta_prev: f64,
    theta_prev2: f64,
    u: &[f64],
    dt: f64,
) -> Result<S, MskError> {
    let (muscles, activation) = enc.decode(z);
    let plant = Plant {
        muscles: &muscles,
        activation: &activation,
        geometry: &enc.base.geometry,
        joint: &enc.base.joint,
    };
    physics_step(theta_prev, theta_prev2, u, &plant, dt)
}

/// Architecture and regularization settings of the residual network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_width")]
    pub conv_channels: usize,
    #[serde(default = "default_width")]
    pub hidden: usize,
    #[serde(default = "default_one")]
    pub pool_stride: usize,
    /// Multiplies the fusion-layer output.
    #[serde(default = "default_scale")]
    pub residual_scale: f64,
}

fn default_window() -> usize {
    crate::signal::DEFAULT_WINDOW
}
fn default_dropout() -> f64 {
    0.3
}
fn default_width() -> usize {
    32
}
fn default_one() -> usize {
    1
}
fn default_scale() -> f64 {
    1.0
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            window: default_window(),
            dropout: default_dropout(),
            conv_channels: default_width(),
            hidden: default_width(),
            pool_stride: default_one(),
            residual_scale: default_scale(),
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<(), PennError> {
        let bad = |m: &str| Err(PennError::Config(m.to_string()));
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.conv_channels == 0 || self.hidden == 0 {
            return bad("layer widths must be >= 1");
        }
        if self.pool_stride == 0 {
            return bad("pool_stride must be >= 1");
        }
        if !(self.residual_scale > 0.0 && self.residual_scale.is_finite()) {
            return bad("residual_scale must be positive");
        }
        Ok(())
    }
}

/// Weights of the residual network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetWeights {
    pub conv_w: Tensor,
    pub conv_b: Tensor,
    pub dense_w: Tensor,
    pub dense_b: Tensor,
    pub fusion_w: Tensor,
    pub fusion_b: Tensor,
}

pub const NET_TENSORS: [&str; 6] = ["conv_w", "conv_b", "dense_w", "dense_b", "fusion_w", "fusion_b"];

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

impl NetWeights {
    /// He-uniform conv and dense weights, zero biases, zero fusion layer.
    pub fn init(n_channels: usize, hyper: &Hyper, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = n_channels + 2;
        let (c, h) = (hyper.conv_channels, hyper.hidden);
        Self {
            conv_w: he_uniform(&[c, rows, 3], rows * 3, &mut rng),
            conv_b: Tensor::zeros(&[c]),
            dense_w: he_uniform(&[h, c], c, &mut rng),
            dense_b: Tensor::zeros(&[h]),
            fusion_w: Tensor::zeros(&[1, h + 1]),
            fusion_b: Tensor::zeros(&[1]),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 6] {
        [
            &self.conv_w,
            &self.conv_b,
            &self.dense_w,
            &self.dense_b,
            &self.fusion_w,
            &self.fusion_b,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.dense_w,
            &mut self.dense_b,
            &mut self.fusion_w,
            &mut self.fusion_b,
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "flat network vector has the wrong length");
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Replaces tensor `name`, checking its shape.
    pub fn set_tensor(&mut self, name: &str, value: Tensor) -> Result<(), ShapeError> {
        let idx = NET_TENSORS
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| ShapeError(format!("unknown network tensor {name}")))?;
        let slot = &mut self.tensors_mut()[idx];
        if slot.shape() != value.shape() {
            return Err(ShapeError(format!(
                "{name}: expected shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        **slot = value;
        Ok(())
    }
}

/// Network weights recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct NetVars<'t> {
    pub conv_w: Var<'t>,
    pub conv_b: Var<'t>,
    pub dense_w: Var<'t>,
    pub dense_b: Var<'t>,
    pub fusion_w: Var<'t>,
    pub fusion_b: Var<'t>,
}

impl<'t> NetVars<'t> {
    pub fn leaves(tape: &'t Tape, w: &NetWeights) -> Self {
        Self::record(tape, w, true)
    }

    pub fn constants(tape: &'t Tape, w: &NetWeights) -> Self {
        Self::record(tape, w, false)
    }

    fn record(tape: &'t Tape, w: &NetWeights, trainable: bool) -> Self {
        let put = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        Self {
            conv_w: put(&w.conv_w),
            conv_b: put(&w.conv_b),
            dense_w: put(&w.dense_w),
            dense_b: put(&w.dense_b),
            fusion_w: put(&w.fusion_w),
            fusion_b: put(&w.fusion_b),
        }
    }

    /// Assembles tensors from scalar variables laid out as [`NetWeights::flat`].
    pub fn from_scalars(scalars: &[Var<'t>], like: &NetWeights) -> Result<Self, ShapeError> {
        let mut off = 0;
        let mut take = |t: &Tensor| {
            let n = t.len();
            let v = concat(&scalars[off..off + n]).and_then(|v| reshape(v, t.shape()));
            off += n;
            v
        };
        Ok(Self {
            conv_w: take(&like.conv_w)?,
            conv_b: take(&like.conv_b)?,
            dense_w: take(&like.dense_w)?,
            dense_b: take(&like.dense_b)?,
            fusion_w: take(&like.fusion_w)?,
            fusion_b: take(&like.fusion_b)?,
        })
    }

    pub fn all(&self) -> [Var<'t>; 6] {
        [
            self.conv_w,
            self.conv_b,
            self.dense_w,
            self.dense_b,
            self.fusion_w,
            self.fusion_b,
        ]
    }
}

/// Residual correction for one `(rows, w)` input matrix.
pub fn residual_forward<'t, R: Rng + ?Sized>(
    net: &NetVars<'t>,
    x: &Tensor,
    theta_phy: Var<'t>,
    hyper: &Hyper,
    mode: Mode,
    rng: &mut R,
) -> Result<Var<'t>, ShapeError> {
    let tape = theta_phy.tape();
    let x = tape.constant(x.clone());
    let h = conv1d(x, net.conv_w, net.conv_b, 1, 1)?.relu();
    let h = maxpool1d(h, 2, hyper.pool_stride, 1)?;
    let h = dropout(h, hyper.dropout, mode, rng);
    let h = global_avg_pool(h)?;
    let h = dense(h, net.dense_w, net.dense_b)?.relu();
    let h = dropout(h, hyper.dropout, mode, rng);
    let phy = reshape(theta_phy, &[1])?;
    let fused = dense(concat(&[h, phy])?, net.fusion_w, net.fusion_b)?;
    Ok(reshape(fused, &[])? * hyper.residual_scale)
}

/// All trainable state of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct PennModel {
    pub physics: PhysicsEncoding,
    /// Raw physics values, decoded through `physics`.
    pub z: Vec<f64>,
    pub net: NetWeights,
    pub hyper: Hyper,
}

/// Output of one estimator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub phy: f64,
    pub res: f64,
    pub hat: f64,
}

impl PennModel {
    pub fn new(base: MskModel, hyper: Hyper, seed: u64) -> Result<Self, PennError> {
        hyper.validate()?;
        let physics = PhysicsEncoding::new(base)?;
        let z = physics.initial_raw();
        let net = NetWeights::init(physics.n_muscles(), &hyper, seed);
        Ok(Self { physics, z, net, hyper })
    }

    pub fn n_channels(&self) -> usize {
        self.physics.n_muscles()
    }

    /// Input rows of the residual network.
    pub fn rows(&self) -> usize {
        self.n_channels() + 2
    }

    /// The musculoskeletal model at the current physics parameters.
    pub fn msk(&self) -> MskModel {
        self.physics.decode_model(&self.z)
    }

    /// Physics parameters followed by network weights.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.z.clone();
        v.extend(self.net.flat());
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let k = self.z.len();
        self.z.copy_from_slice(&flat[..k]);
        self.net.set_flat(&flat[k..]);
    }

    pub fn physics_step(&self, theta_prev: f64, theta_prev2: f64, u: &[f64], dt: f64) -> Result<f64, MskError> {
        physics_forward(&self.physics, &self.z, theta_prev, theta_prev2, u, dt)
    }

    /// `theta_hat = theta_phy + theta_res` for one input window.
    pub fn estimate<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        theta_prev: f64,
        theta_prev2: f64,
        u: &[f64],
        dt: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Estimate, PennError> {
        let phy = self.physics_step(theta_prev, theta_prev2, u, dt)?;
        let res = self.residual(x, phy, mode, rng)?;
        Ok(Estimate {
            phy,
            res,
            hat: phy + res,
        })
    }

    /// Residual correction with the current weights, without gradients.
    pub fn residual<R: Rng + ?Sized>(&self, x: &Tensor, theta_phy: f64, mode: Mode, rng: &mut R) -> Result<f64, PennError> {
        let tape = Tape::new();
        let net = NetVars::constants(&tape, &self.net);
        let phy = tape.scalar_constant(theta_phy);
        Ok(residual_forward(&net, x, phy, &self.hyper, mode, rng)?.item())
    }
}
