//! Butterworth design as cascaded biquads, plus causal and zero-phase
//! application.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::SignalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Lowpass,
    Highpass,
    Bandpass,
}

/// A Butterworth filter request.
///
/// `order` counts poles of the digital filter. A bandpass of order 4 is
/// therefore built from a second-order lowpass prototype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: usize,
    /// One corner for low/highpass, `[low, high]` for bandpass.
    pub cutoff_hz: Vec<f64>,
    pub fs: f64,
}

impl FilterSpec {
    pub fn lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Self {
        Self {
            kind: FilterKind::Lowpass,
            order,
            cutoff_hz: vec![cutoff_hz],
            fs,
        }
    }

    pub fn highpass(order: usize, cutoff_hz: f64, fs: f64) -> Self {
        Self {
            kind: FilterKind::Highpass,
            order,
            cutoff_hz: vec![cutoff_hz],
            fs,
        }
    }

    pub fn bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Self {
        Self {
            kind: FilterKind::Bandpass,
            order,
            cutoff_hz: vec![low_hz, high_hz],
            fs,
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        let bad = |m: String| Err(SignalError::InvalidSpec(m));
        if self.order < 2 || self.order % 2 != 0 {
            return bad(format!("order must be an even integer >= 2, got {}", self.order));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return bad(format!("sample rate must be positive, got {}", self.fs));
        }
        let nyq = self.fs / 2.0;
        let in_band = |f: f64| f > 0.0 && f < nyq;
        match self.kind {
            FilterKind::Lowpass | FilterKind::Highpass => {
                if self.cutoff_hz.len() != 1 {
                    return bad("low/highpass takes exactly one cutoff".into());
                }
                if !in_band(self.cutoff_hz[0]) {
                    return bad(format!(
                        "cutoff {} Hz outside (0, {nyq}) Hz",
                        self.cutoff_hz[0]
                    ));
                }
            }
            FilterKind::Bandpass => {
                if self.cutoff_hz.len() != 2 {
                    return bad("bandpass takes [low, high] cutoffs".into());
                }
                let (lo, hi) = (self.cutoff_hz[0], self.cutoff_hz[1]);
                if !(in_band(lo) && in_band(hi) && lo < hi) {
                    return bad(format!("band [{lo}, {hi}] Hz invalid for fs = {} Hz", self.fs));
                }
            }
        }
        Ok(())
    }
}

/// `y = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2) x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2]) / (1.0 + z_inv * self.a[1] + z2 * self.a[2])
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2])
    }

    /// Transposed direct-form II state that holds a constant unit input.
    fn unit_steady_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        let s2 = self.b[2] - self.a[2] * y;
        let s1 = self.b[1] - self.a[1] * y + s2;
        [s1, s2]
    }

    #[inline]
    fn tick(&self, x: f64, s: &mut [f64; 2]) -> f64 {
        let y = self.b[0] * x + s[0];
        s[0] = self.b[1] * x - self.a[1] * y + s[1];
        s[1] = self.b[2] * x - self.a[2] * y;
        y
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }
}

/// Cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
    pub order: usize,
    pub fs: f64,
}

impl Sos {
    /// Complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / self.fs);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |h, s| h * s.response(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    /// Single causal pass from a zero state.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut state = vec![[0.0; 2]; self.sections.len()];
        self.run(x.iter().copied(), &mut state)
    }

    fn run(&self, x: impl Iterator<Item = f64>, state: &mut [[f64; 2]]) -> Vec<f64> {
        x.map(|mut v| {
            for (sec, s) in self.sections.iter().zip(state.iter_mut()) {
                v = sec.tick(v, s);
            }
            v
        })
        .collect()
    }

    /// Section states for a constant input equal to `x0`.
    fn steady_state(&self, x0: f64) -> Vec<[f64; 2]> {
        let mut level = x0;
        self.sections
            .iter()
            .map(|s| {
                let [s1, s2] = s.unit_steady_state();
                let st = [s1 * level, s2 * level];
                level *= s.dc_gain();
                st
            })
            .collect()
    }

    /// Causal pass started in steady state for the first sample.
    fn primed(&self, x: &[f64]) -> Vec<f64> {
        let mut state = self.steady_state(x[0]);
        self.run(x.iter().copied(), &mut state)
    }

    /// Minimum signal length accepted by [`Sos::filt_filt`] is one more
    /// than this.
    pub fn min_pad_len(&self) -> usize {
        3 * self.order
    }

    /// Samples for the slowest pole to decay by a factor of 1e6.
    fn decay_len(&self) -> usize {
        let r = self.poles().iter().map(|p| p.norm()).fold(0.0, f64::max);
        if r <= 0.0 {
            return 0;
        }
        ((1e-6f64).ln() / r.ln()).ceil() as usize
    }

    /// Reflected samples per edge for a signal of length `n`: long enough for
    /// the start-up transient to decay when the signal allows it.
    pub fn pad_len(&self, n: usize) -> usize {
        self.min_pad_len().max(self.decay_len()).min(n.saturating_sub(1))
    }

    /// Zero-phase filtering.
    ///
    /// The signal is extended at both ends by odd reflection, then run
    /// forward-backward and backward-forward from steady-state initial
    /// conditions. Averaging the two passes makes the operator commute
    /// exactly with time reversal.
    pub fn filt_filt(&self, x: &[f64]) -> Result<Vec<f64>, SignalError> {
        let n = x.len();
        if n <= self.min_pad_len() {
            return Err(SignalError::TooShort {
                len: n,
                needed: self.min_pad_len() + 1,
            });
        }
        let pad = self.pad_len(n);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let fb = {
            let mut y = self.primed(&ext);
            y.reverse();
            let mut y = self.primed(&y);
            y.reverse();
            y
        };
        let bf = {
            let mut r = ext.clone();
            r.reverse();
            let mut y = self.primed(&r);
            y.reverse();
            self.primed(&y)
        };
        Ok(fb[pad..pad + n]
            .iter()
            .zip(&bf[pad..pad + n])
            .map(|(a, b)| 0.5 * (a + b))
            .collect())
    }
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    let k = 2.0 * fs;
    (k + s) / (k - s)
}

fn prewarp(f_hz: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f_hz / fs).tan()
}

/// Digital Butterworth filter via bilinear transform with pre-warped corners.
///
/// Lowpass filters have unit DC gain, highpass filters unit Nyquist gain,
/// and bandpass filters unit gain at the centre frequency.
pub fn butterworth_design(spec: &FilterSpec) -> Result<Sos, SignalError> {
    spec.validate()?;
    let fs = spec.fs;
    let proto_order = match spec.kind {
        FilterKind::Bandpass => spec.order / 2,
        _ => spec.order,
    };
    // left-half-plane prototype poles with non-negative imaginary part; the
    // conjugates are implied
    let proto: Vec<Complex64> = (0..proto_order.div_ceil(2))
        .map(|k| {
            let theta = PI * (2 * k + 1 + proto_order) as f64 / (2 * proto_order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect();

    // each entry: digital poles of one section, its numerator, and whether
    // the section is first order
    let mut sections = Vec::new();
    let (num_lp, num_hp, num_bp) = ([1.0, 2.0, 1.0], [1.0, -2.0, 1.0], [1.0, 0.0, -1.0]);
    let real_pole = |p: Complex64| p.im.abs() < 1e-12;
    let from_pair = |z: Complex64, b: [f64; 3]| Biquad {
        b,
        a: [1.0, -2.0 * z.re, z.norm_sqr()],
    };
    let from_single = |z: Complex64, b: [f64; 3]| Biquad {
        b,
        a: [1.0, -z.re, 0.0],
    };

    let (ref_z_inv, section_list) = match spec.kind {
        FilterKind::Lowpass | FilterKind::Highpass => {
            let wc = prewarp(spec.cutoff_hz[0], fs);
            let hp = spec.kind == FilterKind::Highpass;
            for &p in &proto {
                let s = if hp { wc / p } else { wc * p };
                let z = bilinear(s, fs);
                if real_pole(p) {
                    let b = if hp { [1.0, -1.0, 0.0] } else { [1.0, 1.0, 0.0] };
                    sections.push(from_single(z, b));
                } else {
                    sections.push(from_pair(z, if hp { num_hp } else { num_lp }));
                }
            }
            let ref_z_inv = if hp { -1.0 } else { 1.0 };
            (Complex64::new(ref_z_inv, 0.0), sections)
        }
        FilterKind::Bandpass => {
            let w1 = prewarp(spec.cutoff_hz[0], fs);
            let w2 = prewarp(spec.cutoff_hz[1], fs);
            let (w0sq, bw) = (w1 * w2, w2 - w1);
            for &p in &proto {
                // each prototype pole splits into the roots of s^2 - p bw s + w0^2
                let roots = |p: Complex64| {
                    let disc = (p * p * bw * bw - 4.0 * w0sq).sqrt();
                    [(p * bw + disc) / 2.0, (p * bw - disc) / 2.0]
                };
                if real_pole(p) {
                    let [s1, s2] = roots(Complex64::new(p.re, 0.0));
                    let (z1, z2) = (bilinear(s1, fs), bilinear(s2, fs));
                    sections.push(Biquad {
                        b: num_bp,
                        a: [1.0, -(z1 + z2).re, (z1 * z2).re],
                    });
                } else {
                    for s in roots(p) {
                        sections.push(from_pair(bilinear(s, fs), num_bp));
                    }
                }
            }
            let f0 = (w0sq.sqrt() / (2.0 * fs)).atan() * fs / PI;
            (Complex64::from_polar(1.0, -2.0 * PI * f0 / fs), sections)
        }
    };

    let sections = section_list
        .into_iter()
        .map(|mut s| {
            let g = s.response(ref_z_inv).norm();
            for b in &mut s.b {
                *b /= g;
            }
            s
        })
        .collect();
    Ok(Sos {
        sections,
        order: spec.order,
        fs,
    })
}
