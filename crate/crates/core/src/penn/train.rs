use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{AdamState, Mode, Real, Tape, Tensor, Var};
use crate::signal::{fill_window, first_index};
use crate::sim::Trial;

use super::model::{physics_forward, residual_forward, NetVars, PennModel};
use super::PennError;

/// Weights of the physics and residual terms in the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_phy: f64,
    pub beta_res: f64,
}

impl LossWeights {
    pub const PHASE_ONE: Self = Self {
        lambda_phy: 1.0,
        beta_res: 0.0,
    };
    pub const PHASE_TWO: Self = Self {
        lambda_phy: 0.0,
        beta_res: 1.0,
    };
}

fn mean_square<S: Real>(errors: impl Iterator<Item = S>) -> S {
    let mut n = 0usize;
    let mut acc: Option<S> = None;
    for e in errors {
        let sq = e * e;
        acc = Some(match acc {
            Some(a) => a + sq,
            None => sq,
        });
        n += 1;
    }
    acc.expect("loss over an empty sequence") / n as f64
}

/// Mean squared error of the physics estimate.
pub fn loss_phy<S: Real>(phy: &[S], theta: &[f64]) -> S {
    assert_eq!(phy.len(), theta.len(), "sequence lengths differ");
    mean_square(phy.iter().zip(theta).map(|(&p, &t)| p - t))
}

/// Mean squared error of the corrected estimate `phy + res`.
pub fn loss_res<S: Real>(res: &[S], phy: &[S], theta: &[f64]) -> S {
    assert!(res.len() == phy.len() && phy.len() == theta.len(), "sequence lengths differ");
    mean_square(res.iter().zip(phy).zip(theta).map(|((&r, &p), &t)| r + p - t))
}

pub fn loss_total<S: Real>(w: LossWeights, l_phy: S, l_res: S) -> S {
    l_phy * w.lambda_phy + l_res * w.beta_res
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Filled from the run's master seed; never read from a config file.
    #[serde(skip)]
    pub seed: u64,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_batch1")]
    pub batch_phase1: usize,
    #[serde(default = "d_batch2")]
    pub batch_phase2: usize,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default = "d_fraction")]
    pub train_fraction: f64,
    #[serde(default = "d_max1")]
    pub phase1_max_epochs: usize,
    #[serde(default = "d_max2")]
    pub phase2_max_epochs: usize,
    /// Phase one stops once the training loss improves by less than this
    /// fraction over `convergence_window` epochs.
    #[serde(default = "d_tol")]
    pub convergence_tol: f64,
    #[serde(default = "d_window")]
    pub convergence_window: usize,
    /// Phase one stops immediately below this training loss (rad²).
    #[serde(default = "d_floor")]
    pub loss_floor: f64,
    #[serde(default = "d_true")]
    pub freeze_physics: bool,
    /// Fixed output scale of the residual network; derived from the
    /// phase-one residuals when absent.
    #[serde(default)]
    pub residual_scale: Option<f64>,
}

fn d_lr() -> f64 {
    1e-3
}
fn d_batch1() -> usize {
    1
}
fn d_batch2() -> usize {
    32
}
fn d_patience() -> usize {
    30
}
fn d_fraction() -> f64 {
    0.85
}
fn d_max1() -> usize {
    200
}
fn d_max2() -> usize {
    300
}
fn d_tol() -> f64 {
    1e-4
}
fn d_window() -> usize {
    5
}
fn d_floor() -> f64 {
    1e-20
}
fn d_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr: d_lr(),
            batch_phase1: d_batch1(),
            batch_phase2: d_batch2(),
            patience: d_patience(),
            train_fraction: d_fraction(),
            phase1_max_epochs: d_max1(),
            phase2_max_epochs: d_max2(),
            convergence_tol: d_tol(),
            convergence_window: d_window(),
            loss_floor: d_floor(),
            freeze_physics: true,
            residual_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PennError> {
        let bad = |m: &str| Err(PennError::Config(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if self.batch_phase1 == 0 || self.batch_phase2 == 0 {
            return bad("batch sizes must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if self.convergence_window == 0 {
            return bad("convergence_window must be >= 1");
        }
        if let Some(s) = self.residual_scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad("residual_scale must be positive");
            }
        }
        Ok(())
    }

    /// Independent stream seed for one stage of a run.
    pub fn stage_seed(&self, stage: u64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stage);
        rng.random()
    }
}

/// Trial-level split: `floor(fraction * n)` trials train, at least one on
/// each side.
pub fn split_dataset<T: Clone>(trials: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), PennError> {
    let n = trials.len();
    if n < 2 {
        return Err(PennError::Config(format!("need at least 2 trials to split, got {n}")));
    }
    let n_train = ((fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = idx.split_at(n_train);
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((
        a.iter().map(|&i| trials[i].clone()).collect(),
        b.iter().map(|&i| trials[i].clone()).collect(),
    ))
}

/// Patience counter on a monitored loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub bad_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Wait,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, value: f64) -> Verdict {
        if value < self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            Verdict::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Wait
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }
}

/// One row of a loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub phase: u8,
    pub l_phy: f64,
    pub l_res: f64,
    pub l_total: f64,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LossFloor,
    Converged,
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    pub phase: u8,
    pub epochs: usize,
    pub stop: StopReason,
    pub records: Vec<LossRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl PhaseReport {
    pub fn first(&self, split: Split) -> Option<&LossRecord> {
        self.records.iter().find(|r| r.split == split)
    }

    pub fn last(&self, split: Split) -> Option<&LossRecord> {
        self.records.iter().rev().find(|r| r.split == split)
    }
}

/// One teacher-forced example: trial index and target sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Sample {
    trial: usize,
    t: usize,
}

pub(crate) fn check_trials(model: &PennModel, trials: &[Trial]) -> Result<f64, PennError> {
    let first = trials
        .first()
        .ok_or_else(|| PennError::Config("no trials supplied".into()))?;
    let fs = first.fs;
    for (i, tr) in trials.iter().enumerate() {
        if tr.n_channels() != model.n_channels() {
            return Err(PennError::Config(format!(
                "trial {i} has {} channels, model expects {}",
                tr.n_channels(),
                model.n_channels()
            )));
        }
        if tr.fs != fs {
            return Err(PennError::Config(format!("trial {i} sampled at {} Hz, expected {fs} Hz", tr.fs)));
        }
        if tr.len() < model.hyper.window + 2 {
            return Err(PennError::Config(format!(
                "trial {i} has {} samples, needs at least {}",
                tr.len(),
                model.hyper.window + 2
            )));
        }
    }
    Ok(1.0 / fs)
}

fn samples(trials: &[Trial], w: usize) -> Vec<Sample> {
    trials
        .iter()
        .enumerate()
        .flat_map(|(trial, tr)| (first_index(w)..tr.len()).map(move |t| Sample { trial, t }))
        .collect()
}

fn excitations(tr: &Trial, t: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend(tr.emg.iter().map(|c| c[t]));
}

fn snapshot(model: &PennModel) -> Vec<(String, f64)> {
    let decoded = model.physics.decode::<f64>(&model.z);
    let mut out = Vec::new();
    for (i, m) in decoded.0.iter().enumerate() {
        for (name, v) in [
            ("f_max", m.f_max),
            ("l_tendon_slack", m.l_tendon_slack),
            ("k_fl", m.k_fl),
            ("l_opt", m.l_opt),
            ("phi_opt", m.phi_opt),
        ] {
            out.push((format!("muscle[{i}].{name}"), v));
        }
    }
    out.push(("a_shape".into(), decoded.1.a_shape));
    out
}

fn numerical(model: &PennModel, phase: u8, epoch: usize, reason: impl Into<String>) -> PennError {
    PennError::Numerical {
        phase,
        epoch,
        reason: reason.into(),
        snapshot: snapshot(model),
    }
}

/// Teacher-forced mean physics loss with the current parameters.
fn eval_phy(model: &PennModel, trials: &[Trial], set: &[Sample], dt: f64) -> Result<f64, PennError> {
    let mut u = Vec::new();
    let mut acc = 0.0;
    for s in set {
        let tr = &trials[s.trial];
        excitations(tr, s.t, &mut u);
        let phy = model.physics_step(tr.angle[s.t - 1], tr.angle[s.t - 2], &u, dt)?;
        acc += (phy - tr.angle[s.t]).powi(2);
    }
    Ok(acc / set.len() as f64)
}

/// Phase one: Adam on the physics parameters with `(lambda, beta) = (1, 0)`.
pub fn train_phase_one(
    model: &mut PennModel,
    train: &[Trial],
    heldout: &[Trial],
    cfg: &TrainConfig,
) -> Result<PhaseReport, PennError> {
    cfg.validate()?;
    if model.net.fusion_w.data().iter().chain(model.net.fusion_b.data()).any(|&v| v != 0.0) {
        return Err(PennError::Config("phase one needs a zero-initialized fusion layer".into()));
    }
    let dt = check_trials(model, train)?;
    if !heldout.is_empty() && check_trials(model, heldout)? != dt {
        return Err(PennError::Config("held-out trials use a different sample rate".into()));
    }
    let w = model.hyper.window;
    let train_set = samples(train, w);
    let mut order = train_set.clone();
    let held = samples(heldout, w);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(1));
    let mut adam = AdamState::new(model.z.len(), cfg.lr);
    let weights = LossWeights::PHASE_ONE;

    let mut records = Vec::new();
    let push = |records: &mut Vec<LossRecord>, epoch: usize, l: f64, split: Split| {
        // a zero fusion layer gives theta_res = 0, so the residual loss equals l
        records.push(LossRecord {
            epoch,
            phase: 1,
            l_phy: l,
            l_res: l,
            l_total: loss_total(weights, l, l),
            split,
        });
    };
    let evaluate = |model: &PennModel, records: &mut Vec<LossRecord>, epoch: usize| -> Result<f64, PennError> {
        let l = eval_phy(model, train, &train_set, dt)?;
        if !l.is_finite() {
            return Err(numerical(model, 1, epoch, format!("training loss {l}")));
        }
        push(records, epoch, l, Split::Train);
        if !held.is_empty() {
            let h = eval_phy(model, heldout, &held, dt)?;
            push(records, epoch, h, Split::Heldout);
            return Ok(h);
        }
        Ok(l)
    };

    let mut history = Vec::new();
    let monitor0 = evaluate(model, &mut records, 0)?;
    history.push(records.iter().rev().find(|r| r.split == Split::Train).map(|r| r.l_phy).unwrap());
    let mut stopper = EarlyStopping::new(cfg.patience);
    stopper.update(0, monitor0);
    let mut best_z = model.z.clone();
    if history[0] < cfg.loss_floor {
        return Ok(PhaseReport {
            phase: 1,
            epochs: 0,
            stop: StopReason::LossFloor,
            records,
            best_epoch: 0,
        });
    }

    let mut u = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    let mut epochs = 0;
    for epoch in 1..=cfg.phase1_max_epochs {
        epochs = epoch;
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_phase1) {
            let tape = Tape::new();
            let z: Vec<Var> = model.z.iter().map(|&v| tape.scalar_leaf(v)).collect();
            let mut phys = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for s in batch {
                let tr = &train[s.trial];
                excitations(tr, s.t, &mut u);
                let phy = physics_forward(&model.physics, &z, tr.angle[s.t - 1], tr.angle[s.t - 2], &u, dt)
                    .map_err(|e| numerical(model, 1, epoch, e.to_string()))?;
                phys.push(phy);
                targets.push(tr.angle[s.t]);
            }
            let loss = loss_phy(&phys, &targets) * weights.lambda_phy;
            let grads = tape.backward(loss);
            let g: Vec<f64> = z.iter().map(|&v| grads.scalar(v)).collect();
            if g.iter().any(|v| !v.is_finite()) {
                return Err(numerical(model, 1, epoch, "non-finite gradient"));
            }
            adam.step(&mut model.z, &g);
        }
        let monitor = evaluate(model, &mut records, epoch)?;
        let l = records.iter().rev().find(|r| r.split == Split::Train).unwrap().l_phy;
        history.push(l);
        if stopper.update(epoch, monitor) == Verdict::Improved {
            best_z.clone_from(&model.z);
        }
        if l < cfg.loss_floor {
            stop = StopReason::LossFloor;
            break;
        }
        let k = cfg.convergence_window;
        if history.len() > k {
            let before = history[history.len() - 1 - k];
            if (before - l) / before < cfg.convergence_tol {
                stop = StopReason::Converged;
                break;
            }
        }
        if stopper.bad_epochs >= stopper.patience {
            stop = StopReason::Patience;
            break;
        }
    }
    // patience restores the best held-out parameters; convergence keeps the last
    let best_epoch = if stop == StopReason::Patience {
        model.z = best_z;
        stopper.best_epoch
    } else {
        epochs
    };
    Ok(PhaseReport {
        phase: 1,
        epochs,
        stop,
        records,
        best_epoch,
    })
}

/// Teacher-forced physics estimates for every sample.
fn precompute_phy(model: &PennModel, trials: &[Trial], set: &[Sample], dt: f64) -> Result<Vec<f64>, PennError> {
    let mut u = Vec::new();
    set.iter()
        .map(|s| {
            let tr = &trials[s.trial];
            excitations(tr, s.t, &mut u);
            Ok(model.physics_step(tr.angle[s.t - 1], tr.angle[s.t - 2], &u, dt)?)
        })
        .collect()
}

fn window_tensor(model: &PennModel, tr: &Trial, t: usize, buf: &mut Vec<f64>) -> Tensor {
    fill_window(&tr.emg, tr.angle[t - 1], tr.angle[t - 2], t, model.hyper.window, buf);
    Tensor::new(vec![model.rows(), model.hyper.window], buf.clone()).expect("window shape")
}

/// Held-out style evaluation of the residual loss in evaluation mode.
fn eval_res(model: &PennModel, trials: &[Trial], set: &[Sample], phy: &[f64]) -> Result<f64, PennError> {
    let mut buf = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut acc = 0.0;
    for (s, &p) in set.iter().zip(phy) {
        let tr = &trials[s.trial];
        let x = window_tensor(model, tr, s.t, &mut buf);
        let r = model.residual(&x, p, Mode::Eval, &mut rng)?;
        acc += (r + p - tr.angle[s.t]).powi(2);
    }
    Ok(acc / set.len() as f64)
}

/// Root-mean-square teacher-forced physics residual over `trials`.
pub fn residual_rms(model: &PennModel, trials: &[Trial]) -> Result<f64, PennError> {
    let dt = check_trials(model, trials)?;
    let set = samples(trials, model.hyper.window);
    Ok(eval_phy(model, trials, &set, dt)?.sqrt())
}

/// Phase two: Adam on the residual network with `(lambda, beta) = (0, 1)`,
/// early stopping on the held-out residual loss.
pub fn train_phase_two(
    model: &mut PennModel,
    train: &[Trial],
    heldout: &[Trial],
    cfg: &TrainConfig,
) -> Result<PhaseReport, PennError> {
    phase_two(model, train, heldout, cfg, None)
}

/// Phase two with optional precomputed physics estimates for the train and
/// held-out samples (frozen physics only).
pub(crate) fn phase_two(
    model: &mut PennModel,
    train: &[Trial],
    heldout: &[Trial],
    cfg: &TrainConfig,
    fixed_phy: Option<(Vec<f64>, Vec<f64>)>,
) -> Result<PhaseReport, PennError> {
    cfg.validate()?;
    let dt = check_trials(model, train)?;
    if heldout.is_empty() {
        return Err(PennError::Config("phase two needs held-out trials for early stopping".into()));
    }
    if check_trials(model, heldout)? != dt {
        return Err(PennError::Config("held-out trials use a different sample rate".into()));
    }
    let w = model.hyper.window;
    let train_set = samples(train, w);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let held_set = samples(heldout, w);
    let frozen = cfg.freeze_physics;
    let (train_phy, held_phy) = match fixed_phy {
        Some((a, b)) => {
            if !frozen || a.len() != train_set.len() || b.len() != held_set.len() {
                return Err(PennError::Config("fixed physics estimates need frozen physics and one value per sample".into()));
            }
            (a, b)
        }
        None => (
            precompute_phy(model, train, &train_set, dt)?,
            precompute_phy(model, heldout, &held_set, dt)?,
        ),
    };
    let l_phy_train = mean_square(train_phy.iter().zip(&train_set).map(|(p, s)| p - train[s.trial].angle[s.t]));
    let l_phy_held = mean_square(held_phy.iter().zip(&held_set).map(|(p, s)| p - heldout[s.trial].angle[s.t]));

    model.hyper.residual_scale = match cfg.residual_scale {
        Some(s) => s,
        None => l_phy_train.sqrt().max(1e-9),
    };

    let mut params = if frozen { model.net.flat() } else { model.flat_params() };
    let mut adam = AdamState::new(params.len(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(2));
    let weights = LossWeights::PHASE_TWO;
    let mut records = Vec::new();
    let record = |records: &mut Vec<LossRecord>, epoch: usize, l_phy: f64, l_res: f64, split: Split| {
        records.push(LossRecord {
            epoch,
            phase: 2,
            l_phy,
            l_res,
            l_total: loss_total(weights, l_phy, l_res),
            split,
        });
    };

    let l_train0 = eval_res(model, train, &train_set, &train_phy)?;
    let l_held0 = eval_res(model, heldout, &held_set, &held_phy)?;
    record(&mut records, 0, l_phy_train, l_train0, Split::Train);
    record(&mut records, 0, l_phy_held, l_held0, Split::Heldout);
    let mut stopper = EarlyStopping::new(cfg.patience);
    stopper.update(0, l_held0);
    let mut best = params.clone();

    let mut buf = Vec::new();
    let mut u = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    let mut epochs = 0;
    for epoch in 1..=cfg.phase2_max_epochs {
        epochs = epoch;
        order.shuffle(&mut rng);
        let mut running = 0.0;
        let mut running_phy = 0.0;
        for batch in order.chunks(cfg.batch_phase2) {
            let tape = Tape::new();
            let (zv, net) = if frozen {
                (Vec::new(), NetVars::leaves(&tape, &model.net))
            } else {
                let zv: Vec<Var> = model.z.iter().map(|&v| tape.scalar_leaf(v)).collect();
                (zv, NetVars::leaves(&tape, &model.net))
            };
            let mut res = Vec::with_capacity(batch.len());
            let mut phys = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = train_set[i];
                let tr = &train[s.trial];
                let phy = if frozen {
                    tape.scalar_constant(train_phy[i])
                } else {
                    excitations(tr, s.t, &mut u);
                    physics_forward(&model.physics, &zv, tr.angle[s.t - 1], tr.angle[s.t - 2], &u, dt)
                        .map_err(|e| numerical(model, 2, epoch, e.to_string()))?
                };
                let x = window_tensor(model, tr, s.t, &mut buf);
                res.push(residual_forward(&net, &x, phy, &model.hyper, Mode::Train, &mut rng)?);
                phys.push(phy);
                targets.push(tr.angle[s.t]);
            }
            let l_res = loss_res(&res, &phys, &targets);
            let l_phy = loss_phy(&phys, &targets);
            let loss = loss_total(weights, l_phy, l_res);
            running += l_res.item() * batch.len() as f64;
            running_phy += l_phy.item() * batch.len() as f64;
            let grads = tape.backward(loss);
            let mut g = Vec::with_capacity(params.len());
            g.extend(zv.iter().map(|&v| grads.scalar(v)));
            for v in net.all() {
                g.extend(grads.dense(v));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(numerical(model, 2, epoch, "non-finite gradient"));
            }
            adam.step(&mut params, &g);
            if frozen {
                model.net.set_flat(&params);
            } else {
                model.set_flat_params(&params);
            }
        }
        let n = train_set.len() as f64;
        let l_train = running / n;
        if !l_train.is_finite() {
            return Err(numerical(model, 2, epoch, format!("training loss {l_train}")));
        }
        let held_phy_now = if frozen {
            held_phy.clone()
        } else {
            precompute_phy(model, heldout, &held_set, dt)?
        };
        let l_held = eval_res(model, heldout, &held_set, &held_phy_now)?;
        let l_phy_held_now = if frozen {
            l_phy_held
        } else {
            mean_square(held_phy_now.iter().zip(&held_set).map(|(p, s)| p - heldout[s.trial].angle[s.t]))
        };
        record(&mut records, epoch, running_phy / n, l_train, Split::Train);
        record(&mut records, epoch, l_phy_held_now, l_held, Split::Heldout);
        match stopper.update(epoch, l_held) {
            Verdict::Improved => best.clone_from(&params),
            Verdict::Stop => {
                stop = StopReason::Patience;
                break;
            }
            Verdict::Wait => {}
        }
    }
    if frozen {
        model.net.set_flat(&best);
    } else {
        model.set_flat_params(&best);
    }
    Ok(PhaseReport {
        phase: 2,
        epochs,
        stop,
        records,
        best_epoch: stopper.best_epoch,
    })
}

/// Both phases in sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub phase1: PhaseReport,
    pub phase2: PhaseReport,
}

impl TrainReport {
    pub fn records(&self) -> impl Iterator<Item = &LossRecord> {
        self.phase1.records.iter().chain(&self.phase2.records)
    }
}

pub fn train(model: &mut PennModel, train: &[Trial], heldout: &[Trial], cfg: &TrainConfig) -> Result<TrainReport, PennError> {
    let phase1 = train_phase_one(model, train, heldout, cfg)?;
    let phase2 = train_phase_two(model, train, heldout, cfg)?;
    Ok(TrainReport { phase1, phase2 })
}
