//! EMG and kinematics pre-processing plus window assembly.

mod butter;
mod window;

pub use butter::{butterworth_design, Biquad, FilterKind, FilterSpec, Sos};
pub use window::{fill_window, first_index, make_windows, WindowSample, DEFAULT_WINDOW};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SignalError {
    #[error("invalid filter or pipeline spec: {0}")]
    InvalidSpec(String),
    #[error("signal has {len} samples, needs at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("channel {channel}: MVC must be > 0, got {value}")]
    Mvc { channel: usize, value: f64 },
    #[error("expected {expected} MVC values, got {got}")]
    MvcCount { expected: usize, got: usize },
    #[error("raw sample rate {fs} Hz below twice the bandpass upper corner ({min} Hz)")]
    SampleRate { fs: f64, min: f64 },
    #[error("channels and angle differ in length")]
    LengthMismatch,
}

/// Raw EMG to normalized envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmgPipeline {
    #[serde(default = "default_band")]
    pub band_hz: [f64; 2],
    #[serde(default = "default_order")]
    pub band_order: usize,
    #[serde(default = "default_envelope_hz")]
    pub envelope_hz: f64,
    #[serde(default = "default_order")]
    pub envelope_order: usize,
    #[serde(default = "default_fs_out")]
    pub fs_out: f64,
    #[serde(default = "default_angle_hz")]
    pub angle_cutoff_hz: f64,
    #[serde(default = "default_angle_order")]
    pub angle_order: usize,
}

fn default_band() -> [f64; 2] {
    [20.0, 450.0]
}
fn default_order() -> usize {
    4
}
fn default_envelope_hz() -> f64 {
    4.0
}
fn default_fs_out() -> f64 {
    1000.0
}
fn default_angle_hz() -> f64 {
    1.0
}
fn default_angle_order() -> usize {
    2
}

impl Default for EmgPipeline {
    fn default() -> Self {
        Self {
            band_hz: default_band(),
            band_order: default_order(),
            envelope_hz: default_envelope_hz(),
            envelope_order: default_order(),
            fs_out: default_fs_out(),
            angle_cutoff_hz: default_angle_hz(),
            angle_order: default_angle_order(),
        }
    }
}

fn check_mvc(n: usize, mvc: &[f64]) -> Result<(), SignalError> {
    if mvc.len() != n {
        return Err(SignalError::MvcCount {
            expected: n,
            got: mvc.len(),
        });
    }
    for (channel, &value) in mvc.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(SignalError::Mvc { channel, value });
        }
    }
    Ok(())
}

fn per_channel<F>(raw: &[Vec<f64>], f: F) -> Result<Vec<Vec<f64>>, SignalError>
where
    F: Fn(usize, &[f64]) -> Result<Vec<f64>, SignalError> + Sync,
{
    std::thread::scope(|scope| {
        let handles: Vec<_> = raw
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let f = &f;
                scope.spawn(move || f(i, c))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("filter thread panicked"))
            .collect()
    })
}

/// Lowpass, MVC normalization and clipping of an already rectified signal.
pub fn envelope_stage(
    rectified: &[Vec<f64>],
    fs: f64,
    mvc: &[f64],
    pipeline: &EmgPipeline,
) -> Result<Vec<Vec<f64>>, SignalError> {
    check_mvc(rectified.len(), mvc)?;
    let lp = butterworth_design(&FilterSpec::lowpass(pipeline.envelope_order, pipeline.envelope_hz, fs))?;
    per_channel(rectified, |i, c| {
        Ok(lp
            .filt_filt(c)?
            .into_iter()
            .map(|v| (v / mvc[i]).clamp(0.0, 1.0))
            .collect())
    })
}

/// Raw EMG at `fs_raw` to `[0, 1]` envelopes at `pipeline.fs_out`:
/// bandpass, full-wave rectification, envelope lowpass, division by MVC,
/// clipping and linear resampling.
pub fn preprocess_emg(
    raw: &[Vec<f64>],
    fs_raw: f64,
    mvc: &[f64],
    pipeline: &EmgPipeline,
) -> Result<Vec<Vec<f64>>, SignalError> {
    check_mvc(raw.len(), mvc)?;
    let min_fs = 2.0 * pipeline.band_hz[1];
    if !(fs_raw >= min_fs) {
        return Err(SignalError::SampleRate { fs: fs_raw, min: min_fs });
    }
    if raw.windows(2).any(|p| p[0].len() != p[1].len()) {
        return Err(SignalError::LengthMismatch);
    }
    let band = FilterSpec::bandpass(pipeline.band_order, pipeline.band_hz[0], pipeline.band_hz[1], fs_raw);
    let bp = butterworth_design(&band)?;
    let rectified = per_channel(raw, |_, c| Ok(bp.filt_filt(c)?.into_iter().map(f64::abs).collect()))?;
    let env = envelope_stage(&rectified, fs_raw, mvc, pipeline)?;
    Ok(env.iter().map(|c| resample_linear(c, fs_raw, pipeline.fs_out)).collect())
}

/// Zero-phase lowpass of a joint-angle trace.
pub fn smooth_angle(angle: &[f64], fs: f64, pipeline: &EmgPipeline) -> Result<Vec<f64>, SignalError> {
    butterworth_design(&FilterSpec::lowpass(pipeline.angle_order, pipeline.angle_cutoff_hz, fs))?.filt_filt(angle)
}

/// Linear interpolation onto a grid with period `1 / fs_out` starting at the
/// first sample and not extending past the last.
pub fn resample_linear(x: &[f64], fs_in: f64, fs_out: f64) -> Vec<f64> {
    if x.is_empty() || fs_in == fs_out {
        return x.to_vec();
    }
    let ratio = fs_in / fs_out;
    let n_out = (((x.len() - 1) as f64 / ratio) + 1e-9).floor() as usize + 1;
    (0..n_out)
        .map(|k| {
            let pos = k as f64 * ratio;
            let i = (pos.floor() as usize).min(x.len() - 1);
            let frac = pos - i as f64;
            if i + 1 < x.len() {
                x[i] + frac * (x[i + 1] - x[i])
            } else {
                x[i]
            }
        })
        .collect()
}
