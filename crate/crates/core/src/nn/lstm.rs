//! LSTM cells run along image rows or columns, in both directions.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{shape_err, Result};
use crate::linalg::{gemm, sigmoid, Real};

/// Weights of one direction; gate blocks are stacked in the order i, f, g, o.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a, T> {
    pub input: usize,
    pub hidden: usize,
    /// `4s x input`
    pub wx: &'a [T],
    /// `4s x s`
    pub wh: &'a [T],
    /// `4s`
    pub b: &'a [T],
}

impl<T: Real> LstmWeights<'_, T> {
    fn check(&self) -> Result<()> {
        let g = 4 * self.hidden;
        if self.wx.len() != g * self.input || self.wh.len() != g * self.hidden || self.b.len() != g {
            return shape_err(format!("LSTM weights do not match input {} / hidden {}", self.input, self.hidden));
        }
        Ok(())
    }
}

pub struct LstmGrads<'a, T> {
    pub wx: &'a mut [T],
    pub wh: &'a mut [T],
    pub b: &'a mut [T],
}

/// One LSTM step for a single sequence.
pub fn lstm_cell_step<T: Real>(p: &LstmWeights<T>, x: &[T], h_prev: &[T], c_prev: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    p.check()?;
    let s = p.hidden;
    if x.len() != p.input || h_prev.len() != s || c_prev.len() != s {
        return shape_err("lstm_cell_step: state sizes do not match weights");
    }
    let mut z = p.b.to_vec();
    gemm(false, false, 4 * s, 1, p.input, T::one(), p.wx, x, T::one(), &mut z);
    gemm(false, false, 4 * s, 1, s, T::one(), p.wh, h_prev, T::one(), &mut z);
    let mut h = vec![T::zero(); s];
    let mut c = vec![T::zero(); s];
    for j in 0..s {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[s + j]);
        let g = z[2 * s + j].tanh();
        let o = sigmoid(z[3 * s + j]);
        c[j] = f * c_prev[j] + i * g;
        h[j] = o * c[j].tanh();
    }
    Ok((h, c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    /// Sequences are rows, stepping along `x`.
    Horizontal,
    /// Sequences are columns, stepping along `y`.
    Vertical,
}

#[derive(Debug, Clone, Copy)]
struct Seqs {
    h: usize,
    w: usize,
    axis: Axis,
    count: usize,
    len: usize,
}

impl Seqs {
    fn new(n: usize, h: usize, w: usize, axis: Axis) -> Self {
        match axis {
            Axis::Horizontal => Seqs { h, w, axis, count: n * h, len: w },
            Axis::Vertical => Seqs { h, w, axis, count: n * w, len: h },
        }
    }

    /// `(sample, flat spatial index)` of sequence `b` at step `t`.
    #[inline]
    fn pos(&self, b: usize, t: usize) -> (usize, usize) {
        match self.axis {
            Axis::Horizontal => (b / self.h, (b % self.h) * self.w + t),
            Axis::Vertical => (b / self.w, t * self.w + b % self.w),
        }
    }
}

/// Per-step activations of one direction: gates `(4s x B)`, cells and outputs `(s x B)`.
#[derive(Debug, Clone, Default)]
pub struct DirCache<T> {
    pub gates: Vec<T>,
    pub cells: Vec<T>,
    pub hs: Vec<T>,
}

#[derive(Debug, Clone, Default)]
pub struct BiLstmCache<T> {
    pub fwd: DirCache<T>,
    pub bwd: DirCache<T>,
}

/// Step-major copy of the input: column `t * nb + b` is sequence `b` at step `t`.
fn step_major<T: Real>(x: &Tensor<T>, sq: Seqs) -> Vec<T> {
    let hw = x.plane();
    let cols = sq.len * sq.count;
    let mut xs = vec![T::zero(); x.c * cols];
    for t in 0..sq.len {
        for b in 0..sq.count {
            let (smp, idx) = sq.pos(b, t);
            let k = t * sq.count + b;
            for ch in 0..x.c {
                xs[ch * cols + k] = x.data[(smp * x.c + ch) * hw + idx];
            }
        }
    }
    xs
}

/// `zx` holds the input projections `(4s x len*nb)` in step-major order.
fn run_direction<T: Real>(
    zx: &[T],
    p: &LstmWeights<T>,
    sq: Seqs,
    reverse: bool,
    out: &mut Tensor<T>,
    channel_offset: usize,
    keep: bool,
) -> DirCache<T> {
    let s = p.hidden;
    let g4 = 4 * s;
    let hw = out.plane();
    let nb = sq.count;
    let cols = sq.len * nb;
    let mut hs_all = vec![T::zero(); s * cols];
    let mut cache = DirCache::default();
    if keep {
        cache.gates = vec![T::zero(); sq.len * g4 * nb];
        cache.cells = vec![T::zero(); sq.len * s * nb];
        cache.hs = vec![T::zero(); sq.len * s * nb];
    }
    let mut h = vec![T::zero(); s * nb];
    let mut c = vec![T::zero(); s * nb];
    let mut z = vec![T::zero(); g4 * nb];
    let oc = out.c;
    for step in 0..sq.len {
        let t = if reverse { sq.len - 1 - step } else { step };
        for r in 0..g4 {
            let src = &zx[r * cols + t * nb..][..nb];
            for (d, &v) in z[r * nb..(r + 1) * nb].iter_mut().zip(src) {
                *d = v + p.b[r];
            }
        }
        gemm(false, false, g4, nb, s, T::one(), p.wh, &h, T::one(), &mut z);
        for j in 0..s {
            for b in 0..nb {
                let k = j * nb + b;
                let i = sigmoid(z[k]);
                let f = sigmoid(z[s * nb + k]);
                let g = z[2 * s * nb + k].tanh();
                let o = sigmoid(z[3 * s * nb + k]);
                c[k] = f * c[k] + i * g;
                h[k] = o * c[k].tanh();
                z[k] = i;
                z[s * nb + k] = f;
                z[2 * s * nb + k] = g;
                z[3 * s * nb + k] = o;
            }
        }
        if keep {
            cache.gates[step * g4 * nb..][..g4 * nb].copy_from_slice(&z);
            cache.cells[step * s * nb..][..s * nb].copy_from_slice(&c);
            cache.hs[step * s * nb..][..s * nb].copy_from_slice(&h);
        }
        for j in 0..s {
            hs_all[j * cols + t * nb..][..nb].copy_from_slice(&h[j * nb..(j + 1) * nb]);
        }
    }
    for t in 0..sq.len {
        for b in 0..nb {
            let (smp, idx) = sq.pos(b, t);
            for j in 0..s {
                out.data[(smp * oc + channel_offset + j) * hw + idx] = hs_all[j * cols + t * nb + b];
            }
        }
    }
    cache
}

/// Runs a forward and a backward LSTM over every row or column; output is `(n, 2s, h, w)`.
pub fn bilstm_axis<T: Real>(
    x: &Tensor<T>,
    axis: Axis,
    fwd: &LstmWeights<T>,
    bwd: &LstmWeights<T>,
    keep_cache: bool,
) -> Result<(Tensor<T>, BiLstmCache<T>)> {
    fwd.check()?;
    bwd.check()?;
    if fwd.input != x.c || bwd.input != x.c || fwd.hidden != bwd.hidden {
        return shape_err(format!("bilstm_axis: {} input channels for LSTM input {}", x.c, fwd.input));
    }
    let s = fwd.hidden;
    let sq = Seqs::new(x.n, x.h, x.w, axis);
    let mut out = Tensor::zeros(x.n, 2 * s, x.h, x.w);
    let xs = step_major(x, sq);
    let cols = sq.len * sq.count;
    let g4 = 4 * s;
    let mut wx = Vec::with_capacity(2 * g4 * x.c);
    wx.extend_from_slice(fwd.wx);
    wx.extend_from_slice(bwd.wx);
    let mut zx = vec![T::zero(); 2 * g4 * cols];
    gemm(false, false, 2 * g4, cols, x.c, T::one(), &wx, &xs, T::zero(), &mut zx);
    drop(xs);
    let (zf, zb) = zx.split_at(g4 * cols);
    let f = run_direction(zf, fwd, sq, false, &mut out, 0, keep_cache);
    let b = run_direction(zb, bwd, sq, true, &mut out, s, keep_cache);
    Ok((out, BiLstmCache { fwd: f, bwd: b }))
}

#[allow(clippy::too_many_arguments)]
fn backprop_direction<T: Real>(
    x: &Tensor<T>,
    p: &LstmWeights<T>,
    sq: Seqs,
    reverse: bool,
    cache: &DirCache<T>,
    dy: &Tensor<T>,
    channel_offset: usize,
    grads: LstmGrads<T>,
    dx: &mut Tensor<T>,
) {
    let s = p.hidden;
    let g4 = 4 * s;
    let hw = x.plane();
    let nb = sq.count;
    let mut dzx = vec![T::zero(); x.n * g4 * hw];
    let mut dh_next = vec![T::zero(); s * nb];
    let mut dc_next = vec![T::zero(); s * nb];
    let mut dz = vec![T::zero(); g4 * nb];
    let zeros = vec![T::zero(); s * nb];
    let one = T::one();
    for step in (0..sq.len).rev() {
        let t = if reverse { sq.len - 1 - step } else { step };
        let gates = &cache.gates[step * g4 * nb..][..g4 * nb];
        let cells = &cache.cells[step * s * nb..][..s * nb];
        let (c_prev, h_prev) = if step == 0 {
            (&zeros[..], &zeros[..])
        } else {
            (&cache.cells[(step - 1) * s * nb..][..s * nb], &cache.hs[(step - 1) * s * nb..][..s * nb])
        };
        for b in 0..nb {
            let (smp, idx) = sq.pos(b, t);
            for j in 0..s {
                dh_next[j * nb + b] += dy.data[(smp * dy.c + channel_offset + j) * hw + idx];
            }
        }
        for k in 0..s * nb {
            let i = gates[k];
            let f = gates[s * nb + k];
            let g = gates[2 * s * nb + k];
            let o = gates[3 * s * nb + k];
            let tc = cells[k].tanh();
            let dh = dh_next[k];
            let dc = dc_next[k] + dh * o * (one - tc * tc);
            dz[k] = dc * g * i * (one - i);
            dz[s * nb + k] = dc * c_prev[k] * f * (one - f);
            dz[2 * s * nb + k] = dc * i * (one - g * g);
            dz[3 * s * nb + k] = dh * tc * o * (one - o);
            dc_next[k] = dc * f;
        }
        gemm(false, true, g4, s, nb, one, &dz, h_prev, one, grads.wh);
        gemm(true, false, s, nb, g4, one, p.wh, &dz, T::zero(), &mut dh_next);
        for r in 0..g4 {
            grads.b[r] += dz[r * nb..(r + 1) * nb].iter().copied().sum::<T>();
        }
        for b in 0..nb {
            let (smp, idx) = sq.pos(b, t);
            let base = smp * g4 * hw + idx;
            for r in 0..g4 {
                dzx[base + r * hw] = dz[r * nb + b];
            }
        }
    }
    for i in 0..x.n {
        let d = &dzx[i * g4 * hw..][..g4 * hw];
        gemm(false, true, g4, x.c, hw, one, d, x.sample(i), one, grads.wx);
        gemm(true, false, x.c, hw, g4, one, p.wx, d, one, dx.sample_mut(i));
    }
}

/// Gradient with respect to the input; parameter gradients are accumulated.
#[allow(clippy::too_many_arguments)]
pub fn bilstm_axis_backward<T: Real>(
    x: &Tensor<T>,
    axis: Axis,
    fwd: &LstmWeights<T>,
    bwd: &LstmWeights<T>,
    cache: &BiLstmCache<T>,
    dy: &Tensor<T>,
    gf: LstmGrads<T>,
    gb: LstmGrads<T>,
) -> Result<Tensor<T>> {
    let s = fwd.hidden;
    let sq = Seqs::new(x.n, x.h, x.w, axis);
    if cache.fwd.gates.len() != sq.len * 4 * s * sq.count || cache.bwd.gates.len() != cache.fwd.gates.len() {
        return shape_err("bilstm_axis_backward: forward cache missing or mismatched");
    }
    let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
    backprop_direction(x, fwd, sq, false, &cache.fwd, dy, 0, gf, &mut dx);
    backprop_direction(x, bwd, sq, true, &cache.bwd, dy, s, gb, &mut dx);
    Ok(dx)
}
