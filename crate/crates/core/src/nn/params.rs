//! Flat named-parameter registry and the Adam optimizer.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::linalg::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Every trainable array lives in one contiguous buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub entries: Vec<ParamEntry>,
    pub data: Vec<T>,
}

impl<T: Real> Default for Parameters<T> {
    fn default() -> Self {
        Parameters { entries: Vec::new(), data: Vec::new() }
    }
}

impl<T: Real> Parameters<T> {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: impl IntoIterator<Item = T>) -> ParamId {
        let offset = self.data.len();
        let entry = ParamEntry { name: name.into(), shape: shape.to_vec(), offset };
        let len = entry.len();
        self.data.extend(init.into_iter().take(len));
        assert_eq!(self.data.len(), offset + len, "initializer too short for {}", entry.name);
        self.entries.push(entry);
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.data[self.entries[id.0].range()]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.data.len()]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        Parameters {
            entries: self.entries.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan())).collect(),
        }
    }
}

/// Splits a flat gradient buffer by parameter id.
pub fn grad_slice<'a, T>(params: &Parameters<impl Real>, grads: &'a mut [T], id: ParamId) -> &'a mut [T] {
    &mut grads[params.entries[id.0].range()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub cfg: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0, cfg: AdamConfig::default() }
    }
}

/// Bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return shape_err(format!(
            "adam_step: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    state.t += 1;
    let c = state.cfg;
    let t = state.t as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let (ob1, ob2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
    let step = T::lit(lr / bc1);
    let inv_bc2 = T::lit(1.0 / bc2);
    let eps = T::lit(c.eps);
    for i in 0..params.len() {
        let g = grads[i];
        let m = b1 * state.m[i] + ob1 * g;
        let v = b2 * state.v[i] + ob2 * g * g;
        state.m[i] = m;
        state.v[i] = v;
        params[i] -= step * m / ((v * inv_bc2).sqrt() + eps);
    }
    Ok(())
}
