use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffnet::{Mode, Tensor};
use crate::signal::{fill_window, first_index};
use crate::sim::Trial;

use super::model::PennModel;
use super::train::check_trials;
use super::PennError;

/// Estimated angle sequences for one trial.
///
/// Samples before `start` are seeded from the measured angle; there `phy`
/// and `hat` copy the truth and `res` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub fs: f64,
    pub start: usize,
    pub theta: Vec<f64>,
    pub phy: Vec<f64>,
    pub res: Vec<f64>,
    pub hat: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.fs
    }

    /// Measured and estimated angles over the scored range.
    pub fn scored(&self) -> (&[f64], &[f64]) {
        (&self.theta[self.start..], &self.hat[self.start..])
    }

    pub fn scored_phy(&self) -> (&[f64], &[f64]) {
        (&self.theta[self.start..], &self.phy[self.start..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum History {
    Measured,
    Estimated,
}

fn run(model: &PennModel, trial: &Trial, history: History) -> Result<Trajectory, PennError> {
    let dt = check_trials(model, std::slice::from_ref(trial))?;
    let w = model.hyper.window;
    let start = first_index(w);
    let n = trial.len();
    let mut phy = trial.angle.clone();
    let mut res = vec![0.0; n];
    let mut hat = trial.angle.clone();
    let mut buf = Vec::new();
    let mut u = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for t in start..n {
        let (p1, p2) = match history {
            History::Measured => (trial.angle[t - 1], trial.angle[t - 2]),
            History::Estimated => (hat[t - 1], hat[t - 2]),
        };
        fill_window(&trial.emg, p1, p2, t, w, &mut buf);
        let x = Tensor::new(vec![model.rows(), w], buf.clone())?;
        u.clear();
        u.extend(trial.emg.iter().map(|c| c[t]));
        let e = model.estimate(&x, p1, p2, &u, dt, Mode::Eval, &mut rng)?;
        phy[t] = e.phy;
        res[t] = e.res;
        hat[t] = e.hat;
    }
    Ok(Trajectory {
        fs: trial.fs,
        start,
        theta: trial.angle.clone(),
        phy,
        res,
        hat,
    })
}

/// Recursive estimation: after the seed samples each step consumes only
/// past EMG and the model's own previous two estimates.
pub fn free_run(model: &PennModel, trial: &Trial) -> Result<Trajectory, PennError> {
    run(model, trial, History::Estimated)
}

/// One-step-ahead estimation from the measured history.
pub fn teacher_forced(model: &PennModel, trial: &Trial) -> Result<Trajectory, PennError> {
    run(model, trial, History::Measured)
}
