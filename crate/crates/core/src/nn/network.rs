//! Encoder–decoder with long skips, two gated recurrent blocks and a logistic head.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    concat_channels, conv2d, conv2d_backward, conv_block, maxpool2, maxpool2_backward, partition2d,
    relu_backward_in_place, sigmoid_backward, sigmoid_tensor, split_channels, unpartition2d, upsample2,
    upsample2_backward,
};
use super::lstm::{bilstm_axis, bilstm_axis_backward, Axis, BiLstmCache, LstmGrads, LstmWeights};
use super::params::{ParamId, Parameters};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::linalg::Real;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub blocks: Vec<usize>,
    pub recurrent_hidden: Vec<usize>,
    pub recurrent: bool,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            in_channels: 18,
            widths: vec![32, 64, 128],
            blocks: vec![4, 2, 2],
            recurrent_hidden: vec![64, 32],
            recurrent: true,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("network needs at least one input channel".into()));
        }
        if self.widths.is_empty() || self.widths.len() != self.blocks.len() {
            return Err(Error::Config(format!(
                "network widths {:?} and block counts {:?} must be nonempty and equally long",
                self.widths, self.blocks
            )));
        }
        if self.widths.contains(&0) || self.blocks.contains(&0) {
            return Err(Error::Config("network widths and block counts must be positive".into()));
        }
        if self.recurrent && (self.recurrent_hidden.is_empty() || self.recurrent_hidden.contains(&0)) {
            return Err(Error::Config("recurrent blocks need positive hidden sizes".into()));
        }
        Ok(())
    }

    /// Spatial dims of the input must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        let pools = 1 << (self.widths.len() - 1);
        if self.recurrent {
            pools.max(2)
        } else {
            pools
        }
    }

    /// Multiply-accumulates of one forward pass on an `h x w` input.
    pub fn forward_macs(&self, h: usize, w: usize) -> u64 {
        let mut macs = 0u64;
        let conv = |hw: usize, cin: usize, cout: usize, k: usize| (hw * cin * cout * k * k) as u64;
        let mut c = self.in_channels;
        let levels = self.widths.len();
        for l in 0..levels {
            let hw = (h >> l) * (w >> l);
            for b in 0..self.blocks[l] {
                macs += conv(hw, if b == 0 { c } else { self.widths[l] }, self.widths[l], 3);
            }
            c = self.widths[l];
        }
        for l in (0..levels - 1).rev() {
            let hw = (h >> l) * (w >> l);
            macs += conv(hw, self.widths[l + 1], self.widths[l], 3);
            for b in 0..self.blocks[l] {
                macs += conv(hw, if b == 0 { 2 * self.widths[l] } else { self.widths[l] }, self.widths[l], 3);
            }
        }
        c = self.widths[0];
        if self.recurrent {
            let pos = (h / 2 * w / 2) as u64;
            for &s in &self.recurrent_hidden {
                let s64 = s as u64;
                macs += 2 * pos * 4 * s64 * (4 * c as u64 + s64);
                macs += 2 * pos * 4 * s64 * (2 * s64 + s64);
                c = 2 * s;
            }
        }
        macs + (h * w * c) as u64
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
    cout: usize,
    k: usize,
}

#[derive(Debug, Clone, Copy)]
struct BiLstmLayer {
    /// `[wx, wh, b]` of the forward and the backward direction, registered contiguously.
    fwd: [ParamId; 3],
    bwd: [ParamId; 3],
    input: usize,
    hidden: usize,
}

#[derive(Debug, Clone, Copy)]
struct Grb {
    h: BiLstmLayer,
    v: BiLstmLayer,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    enc: Vec<Vec<Conv>>,
    up: Vec<Conv>,
    dec: Vec<Vec<Conv>>,
    grbs: Vec<Grb>,
    head: Conv,
}

struct Init<T> {
    params: Parameters<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Init<T> {
    fn gaussian(&mut self, n: usize, std: f64) -> Vec<T> {
        let d = Normal::new(0.0, std).expect("positive std");
        (0..n).map(|_| T::lit(d.sample(&mut self.rng))).collect()
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
        let fan_in = cin * k * k;
        let w = self.gaussian(cout * fan_in, (2.0 / fan_in as f64).sqrt());
        let w = self.params.add(format!("{name}.w"), &[cout, cin, k, k], w);
        let b = self.params.add(format!("{name}.b"), &[cout], std::iter::repeat(T::zero()));
        Conv { w, b, cout, k }
    }

    /// Gram–Schmidt on a Gaussian `s x s` matrix.
    fn orthogonal(&mut self, s: usize) -> Vec<f64> {
        let d = Normal::new(0.0, 1.0).expect("unit normal");
        let mut m: Vec<f64> = (0..s * s).map(|_| d.sample(&mut self.rng)).collect();
        for i in 0..s {
            for j in 0..i {
                let dot: f64 = (0..s).map(|k| m[i * s + k] * m[j * s + k]).sum();
                for k in 0..s {
                    m[i * s + k] -= dot * m[j * s + k];
                }
            }
            let norm = (0..s).map(|k| m[i * s + k] * m[i * s + k]).sum::<f64>().sqrt().max(1e-12);
            for k in 0..s {
                m[i * s + k] /= norm;
            }
        }
        m
    }

    fn lstm_dir(&mut self, name: &str, input: usize, s: usize) -> [ParamId; 3] {
        let wx = self.gaussian(4 * s * input, 0.01);
        let wx = self.params.add(format!("{name}.wx"), &[4 * s, input], wx);
        let mut wh = Vec::with_capacity(4 * s * s);
        for _ in 0..4 {
            wh.extend(self.orthogonal(s).into_iter().map(T::lit));
        }
        let wh = self.params.add(format!("{name}.wh"), &[4 * s, s], wh);
        let b = (0..4 * s).map(|r| if (s..2 * s).contains(&r) { T::one() } else { T::zero() });
        let b = self.params.add(format!("{name}.b"), &[4 * s], b);
        [wx, wh, b]
    }

    fn bilstm(&mut self, name: &str, input: usize, s: usize) -> BiLstmLayer {
        let fwd = self.lstm_dir(&format!("{name}.fwd"), input, s);
        let bwd = self.lstm_dir(&format!("{name}.bwd"), input, s);
        BiLstmLayer { fwd, bwd, input, hidden: s }
    }
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache<T> {
    conv_io: Vec<(Tensor<T>, Tensor<T>)>,
    pools: Vec<([usize; 4], Vec<u32>)>,
    grb: Vec<GrbCache<T>>,
    output: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
struct GrbCache<T> {
    part: Tensor<T>,
    h_cache: BiLstmCache<T>,
    h_out: Tensor<T>,
    v_cache: BiLstmCache<T>,
}

/// Mutable views of disjoint, ascending ranges of one buffer.
fn disjoint_mut<'a, T>(mut buf: &'a mut [T], ranges: &[Range<usize>]) -> Vec<&'a mut [T]> {
    let mut out = Vec::with_capacity(ranges.len());
    let mut consumed = 0;
    for r in ranges {
        assert!(r.start >= consumed, "ranges must be ascending and disjoint");
        let rest = std::mem::take(&mut buf);
        let (_, tail) = rest.split_at_mut(r.start - consumed);
        let (mid, tail) = tail.split_at_mut(r.len());
        out.push(mid);
        buf = tail;
        consumed = r.end;
    }
    out
}

impl Network {
    /// Registers all parameters with seeded initial values.
    pub fn build<T: Real>(spec: &NetworkSpec, seed: u64) -> Result<(Network, Parameters<T>)> {
        spec.validate()?;
        let mut init = Init { params: Parameters::default(), rng: ChaCha8Rng::seed_from_u64(seed) };
        let levels = spec.widths.len();
        let mut enc = Vec::with_capacity(levels);
        let mut c = spec.in_channels;
        for l in 0..levels {
            let w = spec.widths[l];
            let convs = (0..spec.blocks[l])
                .map(|b| init.conv(&format!("enc{l}.conv{b}"), if b == 0 { c } else { w }, w, 3))
                .collect();
            enc.push(convs);
            c = w;
        }
        let mut up = vec![None; levels - 1];
        let mut dec = vec![Vec::new(); levels - 1];
        for l in (0..levels - 1).rev() {
            let w = spec.widths[l];
            up[l] = Some(init.conv(&format!("dec{l}.up"), spec.widths[l + 1], w, 3));
            dec[l] = (0..spec.blocks[l])
                .map(|b| init.conv(&format!("dec{l}.conv{b}"), if b == 0 { 2 * w } else { w }, w, 3))
                .collect();
        }
        let mut c = spec.widths[0];
        let mut grbs = Vec::new();
        if spec.recurrent {
            for (g, &s) in spec.recurrent_hidden.iter().enumerate() {
                let h = init.bilstm(&format!("grb{g}.h"), 4 * c, s);
                let v = init.bilstm(&format!("grb{g}.v"), 2 * s, s);
                grbs.push(Grb { h, v });
                c = 2 * s;
            }
        }
        let head = init.conv("head", c, 1, 1);
        let net = Network {
            spec: spec.clone(),
            enc,
            up: up.into_iter().map(|u| u.expect("decoder level initialized")).collect(),
            dec,
            grbs,
            head,
        };
        Ok((net, init.params))
    }

    fn lstm_view<'a, T: Real>(p: &'a Parameters<T>, ids: [ParamId; 3], l: &BiLstmLayer) -> LstmWeights<'a, T> {
        LstmWeights { input: l.input, hidden: l.hidden, wx: p.get(ids[0]), wh: p.get(ids[1]), b: p.get(ids[2]) }
    }

    pub fn check_input<T: Real>(&self, x: &Tensor<T>) -> Result<()> {
        let m = self.spec.spatial_multiple();
        if x.c != self.spec.in_channels {
            return shape_err(format!("network expects {} channels, got {}", self.spec.in_channels, x.c));
        }
        if x.h == 0 || x.w == 0 || x.h % m != 0 || x.w % m != 0 {
            return shape_err(format!("network input {}x{} not divisible by {m}", x.h, x.w));
        }
        Ok(())
    }

    /// Probability map `(n, 1, h, w)`.
    pub fn forward<T: Real>(&self, p: &Parameters<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(p, x, false).map(|(y, _)| y)
    }

    pub fn forward_cached<T: Real>(&self, p: &Parameters<T>, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.run(p, x, true)
    }

    fn run<T: Real>(&self, p: &Parameters<T>, x: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let mut cache = ForwardCache::default();
        let conv = |c: &Conv, a: Tensor<T>, relu: bool, cache: &mut ForwardCache<T>| -> Result<Tensor<T>> {
            let y = if relu {
                conv_block(&a, p.get(c.w), p.get(c.b), c.cout, c.k)?
            } else {
                conv2d(&a, p.get(c.w), p.get(c.b), c.cout, c.k)?
            };
            if keep {
                cache.conv_io.push((a, y.clone()));
            }
            Ok(y)
        };
        let levels = self.spec.widths.len();
        let mut a = x.clone();
        let mut skips = Vec::with_capacity(levels - 1);
        for l in 0..levels {
            for c in &self.enc[l] {
                a = conv(c, a, true, &mut cache)?;
            }
            if l + 1 < levels {
                let (pooled, arg) = maxpool2(&a)?;
                if keep {
                    cache.pools.push((a.shape(), arg));
                }
                skips.push(a);
                a = pooled;
            }
        }
        for l in (0..levels - 1).rev() {
            a = conv(&self.up[l], upsample2(&a), true, &mut cache)?;
            a = concat_channels(&skips[l], &a)?;
            for c in &self.dec[l] {
                a = conv(c, a, true, &mut cache)?;
            }
        }
        for g in &self.grbs {
            let part = partition2d(&a)?;
            let (h_out, h_cache) = bilstm_axis(
                &part,
                Axis::Horizontal,
                &Self::lstm_view(p, g.h.fwd, &g.h),
                &Self::lstm_view(p, g.h.bwd, &g.h),
                keep,
            )?;
            let (v_out, v_cache) = bilstm_axis(
                &h_out,
                Axis::Vertical,
                &Self::lstm_view(p, g.v.fwd, &g.v),
                &Self::lstm_view(p, g.v.bwd, &g.v),
                keep,
            )?;
            a = upsample2(&v_out);
            if keep {
                cache.grb.push(GrbCache { part, h_cache, h_out, v_cache });
            }
        }
        let logits = conv(&self.head, a, false, &mut cache)?;
        let out = sigmoid_tensor(&logits);
        if !out.is_finite() {
            return Err(Error::Numeric("network produced non-finite output".into()));
        }
        if keep {
            cache.output = Some(out.clone());
        }
        Ok((out, cache))
    }

    fn conv_back<T: Real>(
        &self,
        c: &Conv,
        p: &Parameters<T>,
        grads: &mut [T],
        cache: &mut ForwardCache<T>,
        mut d: Tensor<T>,
        relu: bool,
    ) -> Result<Tensor<T>> {
        let (x, y) = cache.conv_io.pop().ok_or_else(|| Error::Shape("forward cache exhausted".into()))?;
        if relu {
            relu_backward_in_place(&y, &mut d);
        }
        let rw = p.entries[c.w.0].range();
        let rb = p.entries[c.b.0].range();
        let mut s = disjoint_mut(grads, &[rw, rb]);
        let (dw, db) = s.split_at_mut(1);
        Ok(conv2d_backward(&x, p.get(c.w), c.cout, c.k, &d, dw[0], db[0]))
    }

    fn lstm_back<T: Real>(
        p: &Parameters<T>,
        grads: &mut [T],
        l: &BiLstmLayer,
        x: &Tensor<T>,
        axis: Axis,
        cache: &BiLstmCache<T>,
        d: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let ranges: Vec<Range<usize>> = l.fwd.iter().chain(&l.bwd).map(|id| p.entries[id.0].range()).collect();
        let mut s = disjoint_mut(grads, &ranges).into_iter();
        let mut next = || s.next().expect("six gradient slices");
        let gf = LstmGrads { wx: next(), wh: next(), b: next() };
        let gb = LstmGrads { wx: next(), wh: next(), b: next() };
        bilstm_axis_backward(
            x,
            axis,
            &Self::lstm_view(p, l.fwd, l),
            &Self::lstm_view(p, l.bwd, l),
            cache,
            d,
            gf,
            gb,
        )
    }

    /// Parameter gradients of `sum(dout * output)`, consuming the cache.
    pub fn backward<T: Real>(&self, p: &Parameters<T>, mut cache: ForwardCache<T>, dout: &Tensor<T>) -> Result<Vec<T>> {
        let out = cache.output.take().ok_or_else(|| Error::Shape("backward called without a forward cache".into()))?;
        if out.shape() != dout.shape() {
            return shape_err(format!("backward: output {:?} vs gradient {:?}", out.shape(), dout.shape()));
        }
        let mut grads = p.zeros_like();
        let mut d = sigmoid_backward(&out, dout);
        d = self.conv_back(&self.head, p, &mut grads, &mut cache, d, false)?;
        for g in self.grbs.iter().rev() {
            let gc = cache.grb.pop().ok_or_else(|| Error::Shape("forward cache exhausted".into()))?;
            d = upsample2_backward(&d);
            d = Self::lstm_back(p, &mut grads, &g.v, &gc.h_out, Axis::Vertical, &gc.v_cache, &d)?;
            d = Self::lstm_back(p, &mut grads, &g.h, &gc.part, Axis::Horizontal, &gc.h_cache, &d)?;
            d = unpartition2d(&d)?;
        }
        let levels = self.spec.widths.len();
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; levels - 1];
        for l in 0..levels - 1 {
            for c in self.dec[l].iter().rev() {
                d = self.conv_back(c, p, &mut grads, &mut cache, d, true)?;
            }
            let (ds, du) = split_channels(&d, self.spec.widths[l]);
            skip_grads[l] = Some(ds);
            d = self.conv_back(&self.up[l], p, &mut grads, &mut cache, du, true)?;
            d = upsample2_backward(&d);
        }
        for l in (0..levels).rev() {
            if l + 1 < levels {
                let (shape, arg) = cache.pools.pop().ok_or_else(|| Error::Shape("forward cache exhausted".into()))?;
                d = maxpool2_backward(shape, &arg, &d);
                d.add_assign(skip_grads[l].as_ref().expect("skip gradient recorded"));
            }
            for c in self.enc[l].iter().rev() {
                d = self.conv_back(c, p, &mut grads, &mut cache, d, true)?;
            }
        }
        Ok(grads)
    }
}

impl Network {
    /// Smallest distance of any rectifier input from 0 or of any pooling window's top two values.
    pub fn kink_margin(&self, p: &Parameters<f64>, x: &Tensor<f64>) -> Result<f64> {
        let (_, cache) = self.forward_cached(p, x)?;
        let mut order: Vec<Conv> = self.enc.iter().flatten().copied().collect();
        for l in (0..self.dec.len()).rev() {
            order.push(self.up[l]);
            order.extend(self.dec[l].iter().copied());
        }
        let mut margin = f64::INFINITY;
        for (c, (xin, _)) in order.iter().zip(&cache.conv_io) {
            let z = conv2d(xin, p.get(c.w), p.get(c.b), c.cout, c.k)?;
            margin = z.data.iter().fold(margin, |m, v| m.min(v.abs()));
        }
        let mut k = 0;
        for l in 0..self.enc.len() - 1 {
            k += self.enc[l].len();
            let y = &cache.conv_io[k - 1].1;
            let (h2, w2) = (y.h / 2, y.w / 2);
            for nc in 0..y.n * y.c {
                for i in 0..h2 {
                    for j in 0..w2 {
                        let at = |dy: usize, dx: usize| y.data[(nc * y.h + 2 * i + dy) * y.w + 2 * j + dx];
                        let mut v = [at(0, 0), at(0, 1), at(1, 0), at(1, 1)];
                        v.sort_by(|a, b| b.total_cmp(a));
                        if v[0] > 0.0 {
                            margin = margin.min(v[0] - v[1]);
                        }
                    }
                }
            }
        }
        Ok(margin)
    }

    /// Jitters the conv biases of `p` until the input `x` sits at least `margin` from every
    /// rectifier and pooling kink; zero biases put dead channels exactly on the kink.
    pub fn smooth_point(&self, p: &mut Parameters<f64>, x: &Tensor<f64>, margin: f64, seed: u64) -> Result<()> {
        let base = p.clone();
        for s in seed..seed + 200 {
            *p = base.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let noise = Normal::new(0.0, 0.05).expect("valid std");
            for e in p.entries.clone() {
                if (e.name.starts_with("enc") || e.name.starts_with("dec")) && e.name.ends_with(".b") {
                    for i in e.range() {
                        p.data[i] += noise.sample(&mut rng);
                    }
                }
            }
            if self.kink_margin(p, x)? > margin {
                return Ok(());
            }
        }
        Err(Error::Numeric("no smooth finite-difference point found".into()))
    }
}
