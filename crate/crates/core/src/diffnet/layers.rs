//! Neural network primitives recorded on a [`Tape`].

use rand::Rng;

use super::tape::{Op, Var};
use super::tensor::Tensor;
use super::ShapeError;

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn shape_err(msg: String) -> ShapeError {
    ShapeError(msg)
}

/// Output positions `j` whose kernel tap `kk` reads inside the input.
pub(crate) fn conv_taps(kk: usize, stride: usize, padding: usize, len: usize, l_out: usize) -> std::ops::Range<usize> {
    let lo = padding.saturating_sub(kk).div_ceil(stride);
    let hi = if len + padding > kk {
        ((len + padding - kk - 1) / stride + 1).min(l_out)
    } else {
        0
    };
    lo..hi.max(lo)
}

/// 1-D cross-correlation of `x: (C_in, L)` with `w: (C_out, C_in, K)` plus `b: (C_out)`.
pub fn conv1d<'t>(
    x: Var<'t>,
    w: Var<'t>,
    b: Var<'t>,
    stride: usize,
    padding: usize,
) -> Result<Var<'t>, ShapeError> {
    let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
    if xs.len() != 2 || ws.len() != 3 || bs.len() != 1 {
        return Err(shape_err(format!(
            "conv1d expects x:(C,L) w:(O,C,K) b:(O), got {xs:?} {ws:?} {bs:?}"
        )));
    }
    let (c_in, len) = (xs[0], xs[1]);
    let (c_out, k) = (ws[0], ws[2]);
    if ws[1] != c_in || bs[0] != c_out {
        return Err(shape_err(format!(
            "conv1d channel mismatch: x {xs:?}, w {ws:?}, b {bs:?}"
        )));
    }
    if stride == 0 || len + 2 * padding < k {
        return Err(shape_err(format!(
            "conv1d needs L + 2*padding >= K and stride > 0 (L={len}, K={k}, padding={padding})"
        )));
    }
    let l_out = (len + 2 * padding - k) / stride + 1;
    let tape = x.tape();
    let value = {
        let xt = x.tensor();
        let wt = w.tensor();
        let bt = b.tensor();
        let (xd, wd) = (xt.data(), wt.data());
        let mut out = vec![0.0; c_out * l_out];
        let taps: Vec<_> = (0..k).map(|kk| conv_taps(kk, stride, padding, len, l_out)).collect();
        // each output accumulates bias, then channel-major, tap-minor terms
        for (o, row) in out.chunks_mut(l_out).enumerate() {
            row.fill(bt.data()[o]);
            for c in 0..c_in {
                let xrow = &xd[c * len..(c + 1) * len];
                for kk in 0..k {
                    let wv = wd[(o * c_in + c) * k + kk];
                    let r = taps[kk].clone();
                    if stride == 1 {
                        let src = &xrow[r.start + kk - padding..r.end + kk - padding];
                        for (y, xv) in row[r].iter_mut().zip(src) {
                            *y += wv * xv;
                        }
                    } else {
                        for j in r {
                            row[j] += wv * xrow[j * stride + kk - padding];
                        }
                    }
                }
            }
        }
        Tensor::from_parts(vec![c_out, l_out], out)
    };
    let flops = (c_out * l_out * c_in * k) as u64;
    Ok(tape.push(
        value,
        Op::Conv1d {
            x: x.id(),
            w: w.id(),
            b: b.id(),
            stride,
            padding,
        },
        flops,
    ))
}

/// Max pooling over the last axis of `x: (C, L)` with `-inf` padding.
///
/// Ties route the gradient to the lowest input index.
pub fn maxpool1d(
    x: Var<'_>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Var<'_>, ShapeError> {
    let xs = x.shape();
    if xs.len() != 2 || xs[1] == 0 {
        return Err(shape_err(format!("maxpool1d expects a non-empty (C,L), got {xs:?}")));
    }
    if kernel == 0 || stride == 0 || padding >= kernel {
        return Err(shape_err(format!(
            "maxpool1d needs kernel > padding and stride > 0 (kernel={kernel}, stride={stride}, padding={padding})"
        )));
    }
    let (channels, len) = (xs[0], xs[1]);
    if len + 2 * padding < kernel {
        return Err(shape_err(format!("maxpool1d window longer than padded input ({len})")));
    }
    let l_out = (len + 2 * padding - kernel) / stride + 1;
    let xt = x.tensor();
    let xd = xt.data();
    // Input span of each window; never empty because padding < kernel.
    let spans: Vec<(usize, usize)> = (0..l_out)
        .map(|j| {
            let start = j * stride;
            (start.saturating_sub(padding), (start + kernel - padding).min(len))
        })
        .collect();
    let mut out = vec![f64::NEG_INFINITY; channels * l_out];
    let mut argmax = vec![0usize; channels * l_out];
    for c in 0..channels {
        let row = &xd[c * len..(c + 1) * len];
        for (j, &(lo, hi)) in spans.iter().enumerate() {
            let mut best = lo;
            for pos in lo + 1..hi {
                if row[pos] > row[best] {
                    best = pos;
                }
            }
            out[c * l_out + j] = row[best];
            argmax[c * l_out + j] = c * len + best;
        }
    }
    let flops = (channels * l_out * kernel) as u64;
    Ok(x.tape().push(
        Tensor::from_parts(vec![channels, l_out], out),
        Op::MaxPool1d { x: x.id(), argmax },
        flops,
    ))
}

/// Per-channel mean of `x: (C, L)`.
pub fn global_avg_pool(x: Var<'_>) -> Result<Var<'_>, ShapeError> {
    let xs = x.shape();
    if xs.len() != 2 || xs[1] == 0 {
        return Err(shape_err(format!("global_avg_pool expects a non-empty (C,L), got {xs:?}")));
    }
    let (channels, len) = (xs[0], xs[1]);
    let xt = x.tensor();
    let out = xt
        .data()
        .chunks(len)
        .map(|row| row.iter().sum::<f64>() / len as f64)
        .collect();
    Ok(x.tape().push(
        Tensor::from_parts(vec![channels], out),
        Op::GlobalAvgPool(x.id()),
        (channels * len) as u64,
    ))
}

/// Affine map `w x + b` with `x: (F_in)`, `w: (F_out, F_in)`, `b: (F_out)`.
pub fn dense<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>, ShapeError> {
    let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
    if xs.len() != 1 || ws.len() != 2 || bs.len() != 1 || ws[1] != xs[0] || bs[0] != ws[0] {
        return Err(shape_err(format!(
            "dense expects x:(F) w:(O,F) b:(O), got {xs:?} {ws:?} {bs:?}"
        )));
    }
    let (f_out, f_in) = (ws[0], ws[1]);
    let (xt, wt, bt) = (x.tensor(), w.tensor(), b.tensor());
    let out = (0..f_out)
        .map(|o| {
            let row = &wt.data()[o * f_in..(o + 1) * f_in];
            row.iter()
                .zip(xt.data())
                .fold(bt.data()[o], |acc, (wv, xv)| acc + wv * xv)
        })
        .collect();
    Ok(x.tape().push(
        Tensor::from_parts(vec![f_out], out),
        Op::Dense {
            x: x.id(),
            w: w.id(),
            b: b.id(),
        },
        (f_out * f_in) as u64,
    ))
}

/// Concatenation of 1-D or scalar values into one vector.
pub fn concat<'t>(parts: &[Var<'t>]) -> Result<Var<'t>, ShapeError> {
    let first = parts
        .first()
        .ok_or_else(|| shape_err("concat of nothing".into()))?;
    let mut data = Vec::new();
    for p in parts {
        let t = p.tensor();
        if t.shape().len() > 1 {
            return Err(shape_err(format!("concat expects vectors, got {:?}", t.shape())));
        }
        data.extend_from_slice(t.data());
    }
    let n = data.len() as u64;
    Ok(first.tape().push(
        Tensor::vector(data),
        Op::Concat(parts.iter().map(Var::id).collect()),
        n,
    ))
}

/// Same values under a new shape.
pub fn reshape<'t>(x: Var<'t>, shape: &[usize]) -> Result<Var<'t>, ShapeError> {
    let t = x.tensor();
    let out = Tensor::new(shape.to_vec(), t.into_data())?;
    // Concat of a single part has the identity adjoint.
    Ok(x.tape().push(out, Op::Concat(vec![x.id()]), 0))
}

/// Sum of all elements as a scalar.
pub fn sum_elements(x: Var<'_>) -> Var<'_> {
    let t = x.tensor();
    let total = t.data().iter().sum();
    x.tape()
        .push(Tensor::scalar(total), Op::SumElements(x.id()), t.len() as u64)
}

/// Inverted dropout: zeroes each element with probability `rate` and rescales
/// survivors by `1/(1-rate)` in training mode; identity in evaluation mode.
pub fn dropout<'t, R: Rng + ?Sized>(x: Var<'t>, rate: f64, mode: Mode, rng: &mut R) -> Var<'t> {
    if mode == Mode::Eval || rate == 0.0 {
        return x;
    }
    assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
    let keep = 1.0 / (1.0 - rate);
    let xt = x.tensor();
    let mask: Vec<f64> = (0..xt.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let out = xt.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    x.tape().push(
        Tensor::from_parts(xt.shape().to_vec(), out),
        Op::Dropout { x: x.id(), mask },
        xt.len() as u64,
    )
}
