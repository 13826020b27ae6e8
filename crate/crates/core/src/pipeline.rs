//! End-to-end commands over files: simulate, preprocess, train and
//! evaluate. Each writes its resolved configuration and input hashes next to
//! its outputs.

use std::path::{Path, PathBuf};

use crate::config::{ConfigError, RunConfig};
use crate::eval::{comparison_block, EvalError, MetricReport, TrialMetrics};
use crate::io::{self, CheckpointInfo, FinalLosses, IoError, Manifest, SplitNames};
use crate::penn::{
    free_run, split_dataset, teacher_forced, train_phase_one, train_phase_two, LossRecord, PennError, PennModel,
    PhaseReport, Split, Trajectory,
};
use crate::signal::{preprocess_emg, resample_linear, smooth_angle, SignalError};
use crate::sim::{generate_synthetic_dataset, SimError, Trial, TrialMeta};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Penn(#[from] PennError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    /// 2 for configuration or input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Sim(SimError::Diverged { .. } | SimError::Model(_)) => 3,
            PipelineError::Penn(PennError::Numerical { .. } | PennError::Model(_)) => 3,
            _ => 2,
        }
    }
}

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const INPUTS_FILE: &str = "inputs.toml";
pub const LOSSES_FILE: &str = "losses.csv";
pub const PHASE1_DIR: &str = "checkpoint_phase1";
pub const PHASE2_DIR: &str = "checkpoint_phase2";

fn write_provenance(out: &Path, cfg: Option<&RunConfig>, inputs: &[(&str, String)]) -> Result<(), IoError> {
    io::create_dir(out)?;
    if let Some(cfg) = cfg {
        io::write_text(&out.join(RESOLVED_CONFIG), &cfg.to_toml())?;
    }
    let mut text = String::new();
    for (k, v) in inputs {
        text.push_str(&format!("{k} = {}\n", toml::Value::String(v.clone())));
    }
    io::write_text(&out.join(INPUTS_FILE), &text)
}

fn trial_name(k: usize) -> String {
    format!("trial_{k:03}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub files: Vec<PathBuf>,
    pub fs: f64,
    pub duration: f64,
    pub dt: f64,
}

/// Synthetic trials written at the physics rate `1 / (dt * stride)`.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<SimOutcome, PipelineError> {
    let sim = cfg.sim_config();
    let trials = generate_synthetic_dataset(&sim, &cfg.msk_model(), cfg.sim.n_trials)?;
    write_provenance(out, Some(cfg), &[])?;
    let mut files = Vec::with_capacity(trials.len());
    let mut fs = 0.0;
    for (k, t) in trials.iter().enumerate() {
        let t = t.decimate(sim.stride);
        fs = t.fs;
        let p = out.join(format!("{}.csv", trial_name(k)));
        io::write_trial(&p, &t)?;
        files.push(p);
    }
    Ok(SimOutcome {
        files,
        fs,
        duration: sim.duration,
        dt: sim.physics_dt(),
    })
}

/// Raw EMG and angle CSVs to normalized envelopes and a smoothed angle at
/// `filters.fs_out`.
pub fn preprocess(cfg: &RunConfig, raw_dir: &Path, mvc_path: &Path, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mvc = io::read_mvc(mvc_path)?;
    let files = io::trial_files(raw_dir)?;
    write_provenance(out, Some(cfg), &[("mvc_sha256", io::sha256_file(mvc_path)?)])?;
    let p = &cfg.filters;
    let mut written = Vec::with_capacity(files.len());
    for f in &files {
        let raw = io::read_trial(f)?;
        if raw.n_channels() != mvc.len() {
            return Err(PipelineError::Input(format!(
                "{}: {} EMG channels but {} MVC entries",
                f.display(),
                raw.n_channels(),
                mvc.len()
            )));
        }
        let emg = preprocess_emg(&raw.emg, raw.fs, &mvc, p)?;
        let angle = smooth_angle(&resample_linear(&raw.angle, raw.fs, p.fs_out), p.fs_out, p)?;
        let meta = TrialMeta {
            source: f.display().to_string(),
            seed: raw.meta.seed,
            note: format!("preprocessed from {} Hz", raw.fs),
        };
        let t = Trial::new(p.fs_out, emg, angle, meta)?;
        let dst = out.join(f.file_name().expect("listed files have names"));
        io::write_trial(&dst, &t)?;
        written.push(dst);
    }
    Ok(written)
}

fn common_fs(trials: &[(String, Trial)], n_channels: usize) -> Result<f64, PipelineError> {
    let fs = trials[0].1.fs;
    for (name, t) in trials {
        if t.fs != fs {
            return Err(PipelineError::Input(format!("{name}: sampled at {} Hz, others at {fs} Hz", t.fs)));
        }
        if t.n_channels() != n_channels {
            return Err(PipelineError::Input(format!(
                "{name}: {} EMG channels, model has {n_channels} muscles",
                t.n_channels()
            )));
        }
    }
    Ok(fs)
}

fn pick(trials: &[(String, Trial)], names: &[String]) -> Result<Vec<Trial>, PipelineError> {
    names
        .iter()
        .map(|n| {
            trials
                .iter()
                .find(|(m, _)| m == n)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| PipelineError::Input(format!("trial {n} not found in the dataset")))
        })
        .collect()
}

fn final_losses(report: &PhaseReport) -> FinalLosses {
    let at = |split: Split| {
        report
            .records
            .iter()
            .find(|r| r.epoch == report.best_epoch && r.split == split)
            .or_else(|| report.last(split))
            .map(|r| (r.l_phy, r.l_res))
            .unwrap_or((f64::NAN, f64::NAN))
    };
    let (train_l_phy, train_l_res) = at(Split::Train);
    let (heldout_l_phy, heldout_l_res) = at(Split::Heldout);
    FinalLosses {
        train_l_phy,
        train_l_res,
        heldout_l_phy,
        heldout_l_res,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub phase1: Option<PhaseReport>,
    pub phase2: PhaseReport,
    pub records: Vec<LossRecord>,
    pub split: SplitNames,
    pub model: PennModel,
}

/// Phase one then phase two. With `resume_from` the phase-one checkpoint
/// (and its loss curve) is loaded instead of retraining.
pub fn train(cfg: &RunConfig, data_dir: &Path, out: &Path, resume_from: Option<&Path>) -> Result<TrainOutcome, PipelineError> {
    let (trials, data_hash) = io::read_dataset(data_dir)?;
    let fs = common_fs(&trials, cfg.muscles.len())?;
    let tc = &cfg.train;

    let (mut model, split, phase1, mut records) = match resume_from {
        Some(dir) => {
            let (model, manifest) = io::load_checkpoint(dir)?;
            check_resume(cfg, &manifest, &data_hash, &model)?;
            let records = io::read_losses(&dir.join(LOSSES_FILE))?;
            (model, manifest.split, None, records)
        }
        None => {
            let names: Vec<String> = trials.iter().map(|(n, _)| n.clone()).collect();
            let (train_names, heldout_names) = split_dataset(&names, tc.train_fraction, tc.stage_seed(0))?;
            let split = SplitNames {
                train: train_names,
                heldout: heldout_names,
            };
            let mut model = PennModel::new(cfg.msk_model(), cfg.model.clone(), tc.stage_seed(3))?;
            let (tr, ho) = (pick(&trials, &split.train)?, pick(&trials, &split.heldout)?);
            let report = train_phase_one(&mut model, &tr, &ho, tc)?;
            (model, split, Some(report), Vec::new())
        }
    };
    write_provenance(out, Some(cfg), &[("dataset_sha256", data_hash.clone())])?;
    let info = |report: &PhaseReport| CheckpointInfo {
        phase: report.phase,
        epoch: report.best_epoch,
        seed: cfg.seed,
        fs,
        dataset_sha256: data_hash.clone(),
        losses: final_losses(report),
        split: split.clone(),
    };
    if let Some(report) = &phase1 {
        let dir = out.join(PHASE1_DIR);
        io::save_checkpoint(&dir, &model, &info(report))?;
        io::write_losses(&dir.join(LOSSES_FILE), &report.records)?;
        records.extend(report.records.iter().copied());
    }
    let (tr, ho) = (pick(&trials, &split.train)?, pick(&trials, &split.heldout)?);
    let phase2 = train_phase_two(&mut model, &tr, &ho, tc)?;
    let dir = out.join(PHASE2_DIR);
    io::save_checkpoint(&dir, &model, &info(&phase2))?;
    io::write_losses(&dir.join(LOSSES_FILE), &phase2.records)?;
    records.extend(phase2.records.iter().copied());
    io::write_losses(&out.join(LOSSES_FILE), &records)?;
    Ok(TrainOutcome {
        phase1,
        phase2,
        records,
        split,
        model,
    })
}

fn check_resume(cfg: &RunConfig, m: &Manifest, data_hash: &str, model: &PennModel) -> Result<(), PipelineError> {
    let bad = |msg: &str| Err(PipelineError::Input(format!("cannot resume: {msg}")));
    if m.phase != 1 {
        return bad("checkpoint is not from phase one");
    }
    if m.dataset_sha256 != data_hash {
        return bad("dataset differs from the one the checkpoint was trained on");
    }
    if m.seed != cfg.seed {
        return bad("master seed differs from the checkpoint");
    }
    if model.physics.base != cfg.msk_model() {
        return bad("model parameters differ from the checkpoint");
    }
    let mut h = cfg.model.clone();
    h.residual_scale = m.hyper.residual_scale;
    if h != m.hyper {
        return bad("network hyperparameters differ from the checkpoint");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub free_running: MetricReport,
    pub teacher_forced: MetricReport,
    pub comparison: Option<(MetricReport, String)>,
    pub text: String,
}

fn run_all(model: &PennModel, trials: &[(String, Trial)], f: fn(&PennModel, &Trial) -> Result<Trajectory, PennError>) -> Result<Vec<Trajectory>, PennError> {
    std::thread::scope(|s| {
        let handles: Vec<_> = trials.iter().map(|(_, t)| s.spawn(move || f(model, t))).collect();
        handles.into_iter().map(|h| h.join().expect("estimation thread panicked")).collect()
    })
}

fn metrics(names: &[String], trajs: &[Trajectory], phy_only: bool) -> Result<Vec<TrialMetrics>, EvalError> {
    names
        .iter()
        .zip(trajs)
        .map(|(n, t)| {
            let (truth, est) = if phy_only { t.scored_phy() } else { t.scored() };
            TrialMetrics::from_radians(n.clone(), truth, est)
        })
        .collect()
}

fn method_label(m: &Manifest) -> String {
    format!("PENN phase {} (epoch {})", m.phase, m.epoch)
}

/// Free-running evaluation of `checkpoint` on the trials in `data_dir`,
/// optionally restricted to its held-out split and compared against a
/// second checkpoint.
pub fn evaluate(
    checkpoint: &Path,
    data_dir: &Path,
    out: &Path,
    heldout_only: bool,
    compare: Option<&Path>,
) -> Result<EvalOutcome, PipelineError> {
    let (model, manifest) = io::load_checkpoint(checkpoint)?;
    let (mut trials, data_hash) = io::read_dataset(data_dir)?;
    if heldout_only {
        trials.retain(|(n, _)| manifest.split.heldout.contains(n));
        if trials.is_empty() {
            return Err(PipelineError::Input("no held-out trials of the checkpoint in the dataset".into()));
        }
    }
    let fs = common_fs(&trials, manifest.n_channels)?;
    if fs != manifest.fs {
        return Err(PipelineError::Input(format!("data sampled at {fs} Hz, checkpoint trained at {} Hz", manifest.fs)));
    }
    let names: Vec<String> = trials.iter().map(|(n, _)| n.clone()).collect();
    let free = run_all(&model, &trials, free_run)?;
    let forced = run_all(&model, &trials, teacher_forced)?;

    let mut inputs = vec![
        ("checkpoint", checkpoint.display().to_string()),
        ("checkpoint_weights_sha256", manifest.weights_sha256.clone()),
        ("dataset_sha256", data_hash.clone()),
    ];
    let report = |method: String, rows| MetricReport {
        method,
        checkpoint: checkpoint.display().to_string(),
        dataset_hash: data_hash.clone(),
        trials: rows,
    };
    let free_report = report(format!("{} free-running", method_label(&manifest)), metrics(&names, &free, false)?);
    let tf_report = report(format!("{} teacher-forced", method_label(&manifest)), metrics(&names, &forced, false)?);
    let phy_report = report(format!("{} physics only, free-running", method_label(&manifest)), metrics(&names, &free, true)?);

    let comparison = match compare {
        Some(other) => {
            let (m2, man2) = io::load_checkpoint(other)?;
            if man2.n_channels != manifest.n_channels || man2.fs != manifest.fs {
                return Err(PipelineError::Input("comparison checkpoint expects different data".into()));
            }
            inputs.push(("compare_weights_sha256", man2.weights_sha256.clone()));
            let trajs = run_all(&m2, &trials, free_run)?;
            let r = MetricReport {
                method: format!("{} free-running", method_label(&man2)),
                checkpoint: other.display().to_string(),
                dataset_hash: data_hash.clone(),
                trials: metrics(&names, &trajs, false)?,
            };
            let block = comparison_block(&free_report, &r)?;
            Some((r, block))
        }
        None => None,
    };

    write_provenance(out, None, &inputs)?;
    let tdir = out.join("trajectories");
    io::create_dir(&tdir)?;
    for (n, t) in names.iter().zip(&free) {
        io::write_trajectory(&tdir.join(format!("{n}.csv")), t)?;
    }
    io::write_metrics(&out.join("metrics.csv"), &free_report.trials)?;
    io::write_metrics(&out.join("metrics_teacher_forced.csv"), &tf_report.trials)?;
    io::write_metrics(&out.join("metrics_physics_only.csv"), &phy_report.trials)?;
    let mut text = String::new();
    for r in [&free_report, &phy_report, &tf_report] {
        text.push_str(&r.table());
        text.push('\n');
    }
    if let Some((r, block)) = &comparison {
        io::write_metrics(&out.join("metrics_compare.csv"), &r.trials)?;
        text.push_str(&r.table());
        text.push('\n');
        text.push_str(block);
    }
    io::write_text(&out.join("report.txt"), &text)?;
    Ok(EvalOutcome {
        free_running: free_report,
        teacher_forced: tf_report,
        comparison,
        text,
    })
}

/// Tables for metric CSVs and paired tests of each against the first.
pub fn report(metric_files: &[PathBuf]) -> Result<String, PipelineError> {
    if metric_files.is_empty() {
        return Err(PipelineError::Input("no metric files given".into()));
    }
    let reports: Vec<MetricReport> = metric_files
        .iter()
        .map(|p| {
            Ok(MetricReport {
                method: p.display().to_string(),
                checkpoint: String::new(),
                dataset_hash: String::new(),
                trials: io::read_metrics(p)?,
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut text = String::new();
    for r in &reports {
        text.push_str(&r.table());
        text.push('\n');
    }
    let first = &reports[0];
    for r in &reports[1..] {
        let a: Vec<&str> = first.trials.iter().map(|t| t.trial.as_str()).collect();
        let b: Vec<&str> = r.trials.iter().map(|t| t.trial.as_str()).collect();
        if a != b {
            return Err(PipelineError::Input(format!("{} and {} list different trials", first.method, r.method)));
        }
        text.push_str(&comparison_block(first, r)?);
    }
    Ok(text)
}
