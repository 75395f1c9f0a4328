//! Stateless layer kernels with explicit backward passes.

use super::tensor::Tensor;
use crate::error::{shape_err, Result};
use crate::linalg::{gemm, gemm_ld, sigmoid, Real};

/// Target size of one im2col block, in elements.
const COL_BLOCK: usize = 1 << 18;

/// Output rows per im2col block.
fn rows_per_block(ck: usize, h: usize, w: usize) -> usize {
    (COL_BLOCK / (ck * w).max(1)).clamp(1, h)
}

/// Lays out the `k x k` receptive fields of output rows `y0..y1` as a `(cin*k*k) x ((y1-y0)*w)` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, k: usize, y0: usize, y1: usize, cols: &mut [T]) {
    let p = (k / 2) as isize;
    let hw = h * w;
    let len = (y1 - y0) * w;
    for ci in 0..cin {
        let src = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * len..][..len];
                let dx = kx as isize - p;
                let dy = ky as isize - p;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in y0..y1 {
                    let sy = y as isize + dy;
                    let out = &mut row[(y - y0) * w..(y - y0 + 1) * w];
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        out.fill(T::zero());
                        continue;
                    }
                    let base = sy as usize * w;
                    out[..x0].fill(T::zero());
                    out[x1..].fill(T::zero());
                    let s0 = (x0 as isize + dx) as usize;
                    out[x0..x1].copy_from_slice(&src[base + s0..base + s0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients back onto the input grid.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(cols: &[T], cin: usize, h: usize, w: usize, k: usize, y0: usize, y1: usize, dx: &mut [T]) {
    let p = (k / 2) as isize;
    let hw = h * w;
    let len = (y1 - y0) * w;
    for ci in 0..cin {
        let dst = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * len..][..len];
                let ox = kx as isize - p;
                let oy = ky as isize - p;
                let x0 = (-ox).max(0) as usize;
                let x1 = (w as isize - ox).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in y0..y1 {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let base = sy as usize * w;
                    let s0 = (x0 as isize + ox) as usize;
                    let r = (y - y0) * w;
                    for (d, &g) in dst[base + s0..base + s0 + (x1 - x0)].iter_mut().zip(&row[r + x0..r + x1]) {
                        *d += g;
                    }
                }
            }
        }
    }
}

/// Same-size cross-correlation with zero padding; `weight` is `(cout, cin, k, k)`, `k` odd.
pub fn conv2d<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], cout: usize, k: usize) -> Result<Tensor<T>> {
    if k % 2 == 0 {
        return shape_err(format!("conv2d kernel size {k} must be odd"));
    }
    let cin = x.c;
    if weight.len() != cout * cin * k * k || bias.len() != cout {
        return shape_err(format!(
            "conv2d: input has {cin} channels, kernel holds {} values for {cout} outputs",
            weight.len()
        ));
    }
    let hw = x.plane();
    let ck = cin * k * k;
    let mut y = Tensor::zeros(x.n, cout, x.h, x.w);
    let rows = rows_per_block(ck, x.h, x.w);
    let mut cols = if k == 1 { Vec::new() } else { vec![T::zero(); ck * rows * x.w] };
    for i in 0..x.n {
        let xs = x.sample(i);
        let ys = y.sample_mut(i);
        for (co, row) in ys.chunks_exact_mut(hw).enumerate() {
            row.fill(bias[co]);
        }
        if k == 1 {
            gemm(false, false, cout, hw, cin, T::one(), weight, xs, T::one(), ys);
            continue;
        }
        for y0 in (0..x.h).step_by(rows) {
            let y1 = (y0 + rows).min(x.h);
            let len = (y1 - y0) * x.w;
            im2col(xs, cin, x.h, x.w, k, y0, y1, &mut cols);
            gemm_ld(false, false, cout, len, ck, T::one(), weight, ck, &cols, len, T::one(), &mut ys[y0 * x.w..], hw);
        }
    }
    Ok(y)
}

/// Returns `dx`, accumulating into `dweight` and `dbias`.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    cout: usize,
    k: usize,
    dy: &Tensor<T>,
    dweight: &mut [T],
    dbias: &mut [T],
) -> Tensor<T> {
    let cin = x.c;
    let hw = x.plane();
    let ck = cin * k * k;
    let mut dx = Tensor::zeros(x.n, cin, x.h, x.w);
    let rows = rows_per_block(ck, x.h, x.w);
    let (mut cols, mut dcols) = if k == 1 {
        (Vec::new(), Vec::new())
    } else {
        (vec![T::zero(); ck * rows * x.w], vec![T::zero(); ck * rows * x.w])
    };
    for i in 0..x.n {
        let dys = dy.sample(i);
        for (co, row) in dys.chunks_exact(hw).enumerate() {
            dbias[co] += row.iter().copied().sum::<T>();
        }
        let xs = x.sample(i);
        if k == 1 {
            gemm(false, true, cout, cin, hw, T::one(), dys, xs, T::one(), dweight);
            gemm(true, false, cin, hw, cout, T::one(), weight, dys, T::zero(), dx.sample_mut(i));
            continue;
        }
        for y0 in (0..x.h).step_by(rows) {
            let y1 = (y0 + rows).min(x.h);
            let len = (y1 - y0) * x.w;
            im2col(xs, cin, x.h, x.w, k, y0, y1, &mut cols);
            let dyb = &dys[y0 * x.w..];
            gemm_ld(false, true, cout, ck, len, T::one(), dyb, hw, &cols, len, T::one(), dweight, ck);
            gemm_ld(true, false, ck, len, cout, T::one(), weight, ck, dyb, hw, T::zero(), &mut dcols, len);
            col2im(&dcols, cin, x.h, x.w, k, y0, y1, dx.sample_mut(i));
        }
    }
    dx
}

pub fn relu_in_place<T: Real>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `dy` by the positive part of the rectifier output `y`.
pub fn relu_backward_in_place<T: Real>(y: &Tensor<T>, dy: &mut Tensor<T>) {
    for (g, &v) in dy.data.iter_mut().zip(&y.data) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Convolution followed by the rectifier.
pub fn conv_block<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], cout: usize, k: usize) -> Result<Tensor<T>> {
    let mut y = conv2d(x, weight, bias, cout, k)?;
    relu_in_place(&mut y);
    Ok(y)
}

fn require_even<T>(x: &Tensor<T>, op: &str) -> Result<()> {
    if x.h % 2 != 0 || x.w % 2 != 0 {
        return shape_err(format!("{op} needs even spatial dims, got {}x{}", x.h, x.w));
    }
    Ok(())
}

/// 2x2 max-pool; also returns the flat input index of each maximum (first index on ties).
pub fn maxpool2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    require_even(x, "maxpool2")?;
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.n, x.c, h2, w2);
    let mut arg = vec![0u32; y.data.len()];
    let mut o = 0;
    for nc in 0..x.n * x.c {
        let base = nc * x.plane();
        for i in 0..h2 {
            for j in 0..w2 {
                let cand = [
                    base + 2 * i * x.w + 2 * j,
                    base + 2 * i * x.w + 2 * j + 1,
                    base + (2 * i + 1) * x.w + 2 * j,
                    base + (2 * i + 1) * x.w + 2 * j + 1,
                ];
                let mut best = cand[0];
                for &c in &cand[1..] {
                    if x.data[c] > x.data[best] {
                        best = c;
                    }
                }
                y.data[o] = x.data[best];
                arg[o] = best as u32;
                o += 1;
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2_backward<T: Real>(input_shape: [usize; 4], argmax: &[u32], dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input_shape;
    let mut dx = Tensor::zeros(n, c, h, w);
    for (&a, &g) in argmax.iter().zip(&dy.data) {
        dx.data[a as usize] += g;
    }
    dx
}

/// Nearest-neighbour x2 replication.
pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut y = Tensor::zeros(x.n, x.c, h2, w2);
    for nc in 0..x.n * x.c {
        let src = &x.data[nc * x.plane()..(nc + 1) * x.plane()];
        let dst = &mut y.data[nc * h2 * w2..(nc + 1) * h2 * w2];
        for yy in 0..h2 {
            let srow = &src[(yy / 2) * x.w..(yy / 2 + 1) * x.w];
            for (xx, d) in dst[yy * w2..(yy + 1) * w2].iter_mut().enumerate() {
                *d = srow[xx / 2];
            }
        }
    }
    y
}

/// Sums each 2x2 block of child gradients.
pub fn upsample2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for nc in 0..dy.n * dy.c {
        let src = &dy.data[nc * dy.plane()..(nc + 1) * dy.plane()];
        let dst = &mut dx.data[nc * h * w..(nc + 1) * h * w];
        for yy in 0..dy.h {
            for xx in 0..dy.w {
                dst[(yy / 2) * w + xx / 2] += src[yy * dy.w + xx];
            }
        }
    }
    dx
}

/// Stacks `a`'s channels before `b`'s.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.n != b.n || a.h != b.h || a.w != b.w {
        return shape_err(format!("concat_channels: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    for i in 0..a.n {
        data.extend_from_slice(a.sample(i));
        data.extend_from_slice(b.sample(i));
    }
    Tensor::from_vec(a.n, a.c + b.c, a.h, a.w, data)
}

/// Splits a gradient into the `ca` leading and remaining channels.
pub fn split_channels<T: Real>(dy: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let cb = dy.c - ca;
    let p = dy.plane();
    let mut a = Vec::with_capacity(dy.n * ca * p);
    let mut b = Vec::with_capacity(dy.n * cb * p);
    for i in 0..dy.n {
        let s = dy.sample(i);
        a.extend_from_slice(&s[..ca * p]);
        b.extend_from_slice(&s[ca * p..]);
    }
    (Tensor { n: dy.n, c: ca, h: dy.h, w: dy.w, data: a }, Tensor { n: dy.n, c: cb, h: dy.h, w: dy.w, data: b })
}

/// Offsets `(dy, dx)` of the four 2x2 positions in channel-group order.
pub const PARTITION_ORDER: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// `(n, c, h, w) -> (n, 4c, h/2, w/2)`; group `q` holds position `PARTITION_ORDER[q]` of every block.
pub fn partition2d<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    require_even(x, "partition2d")?;
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.n, 4 * x.c, h2, w2);
    for n in 0..x.n {
        for (q, &(oy, ox)) in PARTITION_ORDER.iter().enumerate() {
            for c in 0..x.c {
                let dst = &mut y.data[((n * 4 * x.c) + q * x.c + c) * h2 * w2..][..h2 * w2];
                let src = &x.data[(n * x.c + c) * x.plane()..][..x.plane()];
                for i in 0..h2 {
                    for j in 0..w2 {
                        dst[i * w2 + j] = src[(2 * i + oy) * x.w + 2 * j + ox];
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Inverse of [`partition2d`], also its exact gradient.
pub fn unpartition2d<T: Real>(y: &Tensor<T>) -> Result<Tensor<T>> {
    if y.c % 4 != 0 {
        return shape_err(format!("unpartition2d: {} channels not divisible by 4", y.c));
    }
    let c = y.c / 4;
    let (h, w) = (y.h * 2, y.w * 2);
    let mut x = Tensor::zeros(y.n, c, h, w);
    let p = y.plane();
    for n in 0..y.n {
        for (q, &(oy, ox)) in PARTITION_ORDER.iter().enumerate() {
            for ch in 0..c {
                let src = &y.data[((n * 4 * c) + q * c + ch) * p..][..p];
                let dst = &mut x.data[(n * c + ch) * h * w..][..h * w];
                for i in 0..y.h {
                    for j in 0..y.w {
                        dst[(2 * i + oy) * w + 2 * j + ox] = src[i * y.w + j];
                    }
                }
            }
        }
    }
    Ok(x)
}

pub fn sigmoid_tensor<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid)
}

pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &v) in dx.data.iter_mut().zip(&y.data) {
        *g *= v * (T::one() - v);
    }
    dx
}
