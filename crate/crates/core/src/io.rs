//! File formats: trial CSVs, checkpoints, loss curves, metrics and
//! trajectories. Angles are degrees on disk and radians in memory.

use std::fs::{self, File};
use std::io::{BufWriter, Read};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffnet::Tensor;
use crate::eval::TrialMetrics;
use crate::msk::MskModel;
use crate::penn::{Hyper, LossRecord, NetWeights, PennModel, PhysicsEncoding, Split, Trajectory, NET_TENSORS};
use crate::sim::{Trial, TrialMeta};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl IoError {
    fn format(path: &Path, message: impl Into<String>) -> Self {
        IoError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |e| IoError::format(path, e.to_string())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn create_dir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Sidecar next to each trial CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrialSidecar {
    fs: f64,
    source: String,
    /// Hex, since TOML integers are signed 64-bit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<String>,
    #[serde(default)]
    note: String,
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.toml")
}

/// Writes `time_s, emg_1..emg_N, angle_deg` plus a `.meta.toml` sidecar.
pub fn write_trial(path: &Path, trial: &Trial) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["time_s".to_string()];
    header.extend((1..=trial.n_channels()).map(|i| format!("emg_{i}")));
    header.push("angle_deg".into());
    w.write_record(&header).map_err(csv_err(path))?;
    let mut row = Vec::with_capacity(header.len());
    for k in 0..trial.len() {
        row.clear();
        row.push((k as f64 / trial.fs).to_string());
        row.extend(trial.emg.iter().map(|c| c[k].to_string()));
        row.push(trial.angle[k].to_degrees().to_string());
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    let side = TrialSidecar {
        fs: trial.fs,
        source: trial.meta.source.clone(),
        seed: trial.meta.seed.map(|s| format!("{s:016x}")),
        note: trial.meta.note.clone(),
    };
    let sp = sidecar_path(path);
    write_text(&sp, &toml::to_string(&side).expect("sidecar serializes"))
}

/// Reads a trial CSV. The sample rate comes from the sidecar when present,
/// otherwise from the first time step.
pub fn read_trial(path: &Path) -> Result<Trial, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let n = cols.len();
    if n < 3 || cols[0] != "time_s" || cols[n - 1] != "angle_deg" {
        return Err(IoError::format(path, "expected header time_s,emg_1..emg_N,angle_deg"));
    }
    for (i, c) in cols[1..n - 1].iter().enumerate() {
        if *c != format!("emg_{}", i + 1) {
            return Err(IoError::format(path, format!("column {} should be emg_{}, found {c}", i + 2, i + 1)));
        }
    }
    let n_ch = n - 2;
    let mut time = Vec::new();
    let mut emg = vec![Vec::new(); n_ch];
    let mut angle = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let val = |i: usize| -> Result<f64, IoError> {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| IoError::format(path, format!("line {}: `{}` in column {} is not a number", line + 2, &rec[i], cols[i])))
        };
        time.push(val(0)?);
        for (c, ch) in emg.iter_mut().enumerate() {
            ch.push(val(c + 1)?);
        }
        angle.push(val(n - 1)?.to_radians());
    }
    let sp = sidecar_path(path);
    let (fs, meta) = if sp.exists() {
        let text = fs::read_to_string(&sp).map_err(io_err(&sp))?;
        let side: TrialSidecar = toml::from_str(&text).map_err(|e| IoError::format(&sp, e.to_string()))?;
        let seed = side
            .seed
            .map(|s| u64::from_str_radix(&s, 16).map_err(|_| IoError::format(&sp, "seed is not hex")))
            .transpose()?;
        (
            side.fs,
            TrialMeta {
                source: side.source,
                seed,
                note: side.note,
            },
        )
    } else {
        if time.len() < 2 || !(time[1] > time[0]) {
            return Err(IoError::format(path, "cannot infer the sample rate: need two increasing time stamps"));
        }
        (
            1.0 / (time[1] - time[0]),
            TrialMeta {
                source: path.display().to_string(),
                seed: None,
                note: String::new(),
            },
        )
    };
    Trial::new(fs, emg, angle, meta).map_err(|e| IoError::format(path, e.to_string()))
}

/// Trial CSVs in `dir`, sorted by file name.
pub fn trial_files(dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(IoError::format(dir, "no trial CSV files"));
    }
    Ok(files)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Named trials from a directory plus a hash over names and bytes.
pub fn read_dataset(dir: &Path) -> Result<(Vec<(String, Trial)>, String), IoError> {
    let files = trial_files(dir)?;
    let mut hasher = Sha256::new();
    let mut trials = Vec::with_capacity(files.len());
    for f in &files {
        let name = file_stem(f);
        hasher.update(name.as_bytes());
        hasher.update(fs::read(f).map_err(io_err(f))?);
        trials.push((name, read_trial(f)?));
    }
    Ok((trials, hex::encode(hasher.finalize())))
}

/// `channel,mvc` rows, channels numbered from 1.
pub fn read_mvc(path: &Path) -> Result<Vec<f64>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut rows: Vec<(usize, f64)> = Vec::new();
    for rec in r.deserialize::<(usize, f64)>() {
        rows.push(rec.map_err(csv_err(path))?);
    }
    rows.sort_by_key(|r| r.0);
    for (i, (ch, _)) in rows.iter().enumerate() {
        if *ch != i + 1 {
            return Err(IoError::format(path, format!("missing MVC entry for channel {}", i + 1)));
        }
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}

pub fn write_losses<'a>(path: &Path, records: impl IntoIterator<Item = &'a LossRecord>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["epoch", "phase", "l_phy", "l_res", "l_total", "split"])
        .map_err(csv_err(path))?;
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.phase.to_string(),
            format!("{:e}", r.l_phy),
            format!("{:e}", r.l_res),
            format!("{:e}", r.l_total),
            r.split.as_str().to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_losses(path: &Path) -> Result<Vec<LossRecord>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize::<(usize, u8, f64, f64, f64, Split)>()
        .map(|rec| {
            let (epoch, phase, l_phy, l_res, l_total, split) = rec.map_err(csv_err(path))?;
            Ok(LossRecord {
                epoch,
                phase,
                l_phy,
                l_res,
                l_total,
                split,
            })
        })
        .collect()
}

pub fn write_metrics(path: &Path, rows: &[TrialMetrics]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["trial", "rmse_deg", "r2"]).map_err(csv_err(path))?;
    for m in rows {
        w.write_record([m.trial.clone(), m.rmse_deg.to_string(), m.r2.to_string()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_metrics(path: &Path) -> Result<Vec<TrialMetrics>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize::<(String, f64, f64)>()
        .map(|rec| {
            let (trial, rmse_deg, r2) = rec.map_err(csv_err(path))?;
            Ok(TrialMetrics { trial, rmse_deg, r2 })
        })
        .collect()
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["time_s", "theta_deg", "theta_phy_deg", "theta_res_deg", "theta_hat_deg"])
        .map_err(csv_err(path))?;
    for k in 0..traj.len() {
        w.write_record([
            traj.time(k).to_string(),
            traj.theta[k].to_degrees().to_string(),
            traj.phy[k].to_degrees().to_string(),
            traj.res[k].to_degrees().to_string(),
            traj.hat[k].to_degrees().to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub const WEIGHTS_MAGIC: &[u8; 8] = b"PENNW\0\0\0";
pub const WEIGHTS_VERSION: u32 = 1;
pub const PHYSICS_TENSOR: &str = "physics.raw";

/// Named tensors in a little-endian blob: magic, version, count, then per
/// tensor a name, its shape and the `f64` data.
pub fn encode_weights(tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.write_u32::<LittleEndian>(WEIGHTS_VERSION).unwrap();
    out.write_u32::<LittleEndian>(tensors.len() as u32).unwrap();
    for (name, t) in tensors {
        out.write_u16::<LittleEndian>(name.len() as u16).unwrap();
        out.extend_from_slice(name.as_bytes());
        out.write_u8(t.shape().len() as u8).unwrap();
        for &d in t.shape() {
            out.write_u64::<LittleEndian>(d as u64).unwrap();
        }
        for &v in t.data() {
            out.write_f64::<LittleEndian>(v).unwrap();
        }
    }
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, String> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| "truncated header")?;
    if &magic != WEIGHTS_MAGIC {
        return Err("not a weights file".into());
    }
    let e = |_| "truncated weights file".to_string();
    let version = r.read_u32::<LittleEndian>().map_err(e)?;
    if version != WEIGHTS_VERSION {
        return Err(format!("weights format version {version}, expected {WEIGHTS_VERSION}"));
    }
    let count = r.read_u32::<LittleEndian>().map_err(e)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.read_u16::<LittleEndian>().map_err(e)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(e)?;
        let name = String::from_utf8(name).map_err(|_| "tensor name is not UTF-8")?;
        let ndim = r.read_u8().map_err(e)? as usize;
        let shape: Vec<usize> = (0..ndim)
            .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
            .collect::<Result<_, _>>()
            .map_err(e)?;
        let n: usize = shape.iter().product();
        if n > r.len() / 8 {
            return Err("truncated weights file".into());
        }
        let data: Vec<f64> = (0..n).map(|_| r.read_f64::<LittleEndian>()).collect::<Result<_, _>>().map_err(e)?;
        out.push((name.clone(), Tensor::new(shape, data).map_err(|s| format!("{name}: {s}"))?));
    }
    if !r.is_empty() {
        return Err("trailing bytes after the last tensor".into());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Final losses of the phase that produced a checkpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalLosses {
    pub train_l_phy: f64,
    pub train_l_res: f64,
    pub heldout_l_phy: f64,
    pub heldout_l_res: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitNames {
    pub train: Vec<String>,
    pub heldout: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub phase: u8,
    pub epoch: usize,
    pub seed: u64,
    pub n_channels: usize,
    pub fs: f64,
    pub dataset_sha256: String,
    pub weights_sha256: String,
    pub losses: FinalLosses,
    pub split: SplitNames,
    pub hyper: Hyper,
    pub tensors: Vec<TensorEntry>,
    /// Current physics parameters, for reading only.
    pub decoded: MskModel,
    pub physics: PhysicsEncoding,
}

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const WEIGHTS_FILE: &str = "weights.bin";

/// Run facts stored alongside the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointInfo {
    pub phase: u8,
    pub epoch: usize,
    pub seed: u64,
    pub fs: f64,
    pub dataset_sha256: String,
    pub losses: FinalLosses,
    pub split: SplitNames,
}

fn model_tensors(model: &PennModel) -> Vec<(&str, Tensor)> {
    let mut v = vec![(PHYSICS_TENSOR, Tensor::vector(model.z.clone()))];
    for (name, t) in NET_TENSORS.iter().zip(model.net.tensors()) {
        v.push((name, t.clone()));
    }
    v
}

pub fn save_checkpoint(dir: &Path, model: &PennModel, info: &CheckpointInfo) -> Result<Manifest, IoError> {
    create_dir(dir)?;
    let named = model_tensors(model);
    let refs: Vec<(&str, &Tensor)> = named.iter().map(|(n, t)| (*n, t)).collect();
    let blob = encode_weights(&refs);
    let wp = dir.join(WEIGHTS_FILE);
    fs::write(&wp, &blob).map_err(io_err(&wp))?;
    let manifest = Manifest {
        format_version: WEIGHTS_VERSION,
        phase: info.phase,
        epoch: info.epoch,
        seed: info.seed,
        n_channels: model.n_channels(),
        fs: info.fs,
        dataset_sha256: info.dataset_sha256.clone(),
        weights_sha256: sha256_hex(&blob),
        losses: info.losses,
        split: info.split.clone(),
        hyper: model.hyper.clone(),
        tensors: named
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        decoded: model.msk(),
        physics: model.physics.clone(),
    };
    let mp = dir.join(MANIFEST_FILE);
    let text = toml::to_string_pretty(&manifest).map_err(|e| IoError::format(&mp, e.to_string()))?;
    write_text(&mp, &text)?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(PennModel, Manifest), IoError> {
    let mp = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mp).map_err(io_err(&mp))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| IoError::format(&mp, e.to_string()))?;
    if manifest.format_version != WEIGHTS_VERSION {
        return Err(IoError::format(&mp, format!("unsupported format version {}", manifest.format_version)));
    }
    let wp = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&wp).map_err(io_err(&wp))?;
    if sha256_hex(&blob) != manifest.weights_sha256 {
        return Err(IoError::format(&wp, "checksum does not match the manifest"));
    }
    let tensors = decode_weights(&blob).map_err(|m| IoError::format(&wp, m))?;
    let listed: Vec<(&str, &[usize])> = manifest.tensors.iter().map(|t| (t.name.as_str(), t.shape.as_slice())).collect();
    let stored: Vec<(&str, &[usize])> = tensors.iter().map(|(n, t)| (n.as_str(), t.shape())).collect();
    if listed != stored {
        return Err(IoError::format(&wp, "tensor table differs from the manifest"));
    }
    manifest.hyper.validate().map_err(|e| IoError::format(&mp, e.to_string()))?;
    let mut net = NetWeights::init(manifest.n_channels, &manifest.hyper, 0);
    let mut z = None;
    let mut seen = Vec::new();
    for (name, t) in tensors {
        if name == PHYSICS_TENSOR {
            if t.len() != manifest.physics.len() {
                return Err(IoError::format(&wp, "physics vector length differs from its encoding"));
            }
            z = Some(t.into_data());
        } else {
            net.set_tensor(&name, t).map_err(|e| IoError::format(&wp, e.to_string()))?;
        }
        seen.push(name);
    }
    let z = z.ok_or_else(|| IoError::format(&wp, format!("missing tensor {PHYSICS_TENSOR}")))?;
    if let Some(missing) = NET_TENSORS.iter().find(|n| !seen.iter().any(|s| s == *n)) {
        return Err(IoError::format(&wp, format!("missing tensor {missing}")));
    }
    if manifest.physics.n_muscles() != manifest.n_channels {
        return Err(IoError::format(&mp, "channel count differs from the muscle count"));
    }
    let model = PennModel {
        physics: manifest.physics.clone(),
        z,
        net,
        hyper: manifest.hyper.clone(),
    };
    Ok((model, manifest))
}
