//! Named trainable parameters and their gradients.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    /// Excluded from weight decay (biases, norms, tokens).
    pub no_decay: bool,
}

/// Flat, insertion-ordered parameter storage. Modules keep `ParamId`s into it.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix, no_decay: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            no_decay,
        });
        ParamId(self.params.len() - 1)
    }

    /// Xavier-uniform weight of shape `fan_in x fan_out`.
    pub fn add_xavier(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> ParamId {
        let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let m = Matrix::from_fn(fan_in, fan_out, |_, _| rng.uniform(-bound, bound));
        self.add(name, m, false)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Matrix::zeros(rows, cols), true)
    }

    pub fn add_ones(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Matrix::filled(rows, cols, 1.0), true)
    }

    pub fn add_normal(&mut self, name: impl Into<String>, rows: usize, cols: usize, std: f64, rng: &mut SeededRng) -> ParamId {
        let m = Matrix::from_fn(rows, cols, |_, _| rng.normal() * std);
        self.add(name, m, true)
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Overwrites the value of `name` with `value`, checking the shape.
    pub fn assign(&mut self, name: &str, value: &Matrix) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Data(alloc::format!("no parameter named `{name}`")))?;
        let slot = &mut self.params[id.0].value;
        if slot.shape() != value.shape() {
            return Err(Error::shape(alloc::format!(
                "parameter `{name}` is {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        slot.as_mut_slice().copy_from_slice(value.as_slice());
        Ok(())
    }

    /// Copies every parameter whose name starts with `src_prefix` onto the
    /// parameter obtained by swapping that prefix for `dst_prefix`.
    /// Returns the number of tensors copied.
    pub fn copy_prefixed(&mut self, src: &ParamStore, src_prefix: &str, dst_prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for p in &src.params {
            if let Some(rest) = p.name.strip_prefix(src_prefix) {
                let mut target = dst_prefix.to_string();
                target.push_str(rest);
                self.assign(&target, &p.value)?;
                copied += 1;
            }
        }
        Ok(copied)
    }
}

/// Per-parameter gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ParamGrads {
    grads: Vec<Option<Matrix>>,
}

impl ParamGrads {
    pub fn new(len: usize) -> Self {
        Self {
            grads: (0..len).map(|_| None).collect(),
        }
    }

    pub(crate) fn from_vec(grads: Vec<Option<Matrix>>) -> Self {
        Self { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Option<&Matrix>)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g.as_ref()))
    }

    /// `self += scale * other`.
    pub fn accumulate(&mut self, other: &ParamGrads, scale: f64) {
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(src) = src {
                match dst {
                    Some(d) => {
                        for (a, b) in d.as_mut_slice().iter_mut().zip(src.as_slice()) {
                            *a += scale * b;
                        }
                    }
                    None => {
                        let mut m = src.clone();
                        m.scale_assign(scale);
                        *dst = Some(m);
                    }
                }
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        let sq: f64 = self
            .grads
            .iter()
            .flatten()
            .map(|g| g.as_slice().iter().map(|v| v * v).sum::<f64>())
            .sum();
        libm::sqrt(sq)
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }
}
