use super::SignalError;

/// Default window length in samples.
pub const DEFAULT_WINDOW: usize = 16;

/// One training example ending at sample `t_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Row-major `(n_channels + 2, w)` matrix. Rows `0..n_channels` hold the
    /// EMG over samples `t - w + 1 ..= t`; the last two rows hold
    /// `theta[t-1]` and `theta[t-2]` from the history stream, repeated in
    /// every column.
    pub x: Vec<f64>,
    pub rows: usize,
    pub w: usize,
    pub target: f64,
    pub t_index: usize,
    /// Excitations at `t`, fed to the physics step.
    pub u_t: Vec<f64>,
    pub theta_prev: f64,
    pub theta_prev2: f64,
}

/// First estimable sample index for window length `w`.
///
/// Samples `0..=w` seed the recursion, so the first window ends at `w + 1`.
pub fn first_index(w: usize) -> usize {
    w + 1
}

/// Fills the `(n + 2, w)` input matrix for target index `t` into `out`.
pub fn fill_window(emg: &[Vec<f64>], theta_prev: f64, theta_prev2: f64, t: usize, w: usize, out: &mut Vec<f64>) {
    out.clear();
    for channel in emg {
        out.extend_from_slice(&channel[t + 1 - w..=t]);
    }
    out.extend(std::iter::repeat_n(theta_prev, w));
    out.extend(std::iter::repeat_n(theta_prev2, w));
}

/// Stride-1 windows over every estimable index `t` in `[w + 1, T - 1]`.
///
/// `history` supplies the two past angles per window: ground truth under
/// teacher forcing, or previous estimates when run recursively. `angle`
/// supplies the targets.
pub fn make_windows(
    emg: &[Vec<f64>],
    angle: &[f64],
    history: &[f64],
    w: usize,
) -> Result<Vec<WindowSample>, SignalError> {
    if w == 0 {
        return Err(SignalError::InvalidSpec("window length must be >= 1".into()));
    }
    let t_len = angle.len();
    if emg.iter().any(|c| c.len() != t_len) || history.len() != t_len {
        return Err(SignalError::LengthMismatch);
    }
    if t_len < w + 2 {
        return Err(SignalError::TooShort {
            len: t_len,
            needed: w + 2,
        });
    }
    let rows = emg.len() + 2;
    Ok((first_index(w)..t_len)
        .map(|t| {
            let mut x = Vec::with_capacity(rows * w);
            fill_window(emg, history[t - 1], history[t - 2], t, w, &mut x);
            WindowSample {
                x,
                rows,
                w,
                target: angle[t],
                t_index: t,
                u_t: emg.iter().map(|c| c[t]).collect(),
                theta_prev: history[t - 1],
                theta_prev2: history[t - 2],
            }
        })
        .collect())
}
