//! Named, ordered parameter storage shared by the encoder and the network.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Trainable tensors in declaration order, each with a gradient buffer of
/// the same shape. Declaration order is also checkpoint order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `[−√(1/fan_in), √(1/fan_in)]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        self.add(name, Tensor::uniform(shape, bound, rng))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> (&mut [Tensor], &mut [Tensor]) {
        (&mut self.values, &mut self.grads)
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }

    /// Records every parameter as a constant (inference).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self.values.iter().map(|v| tape.constant(v.clone())).collect(),
        }
    }

    /// Adds the tape gradients of `bound` into the parameter gradient buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &BoundParams) {
        for (g, &v) in self.grads.iter_mut().zip(&bound.vars) {
            if let Some(tg) = tape.grad(v) {
                for (a, b) in g.data_mut().iter_mut().zip(tg.data()) {
                    *a += b;
                }
            }
        }
    }

    /// Tape gradients of `bound`, one tensor per parameter (zeros where the
    /// tape produced none).
    pub fn tape_grads(&self, tape: &Tape, bound: &BoundParams) -> Vec<Tensor> {
        self.values
            .iter()
            .zip(&bound.vars)
            .map(|(v, &var)| tape.grad(var).unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect()
    }

    /// Adds a gradient list laid out like this set.
    pub fn add_grads(&mut self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.grads.len() {
            return Err(Error::Contract(format!(
                "gradient list has {} tensors, expected {}",
                grads.len(),
                self.grads.len()
            )));
        }
        for (g, o) in self.grads.iter_mut().zip(grads) {
            if g.shape() != o.shape() {
                return Err(Error::shape("add_grads", g.shape(), o.shape()));
            }
            for (a, b) in g.data_mut().iter_mut().zip(o.data()) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Replaces every value, keeping names. Shapes must match.
    pub fn load_values(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::CheckpointCorrupt(format!(
                "expected {} tensors, found {}",
                self.values.len(),
                values.len()
            )));
        }
        for (i, (cur, new)) in self.values.iter().zip(&values).enumerate() {
            if cur.shape() != new.shape() {
                return Err(Error::CheckpointCorrupt(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    self.names[i],
                    new.shape(),
                    cur.shape()
                )));
            }
        }
        self.values = values;
        Ok(())
    }
}

/// Tape handles for every parameter of a [`ParamSet`], by [`ParamId`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}
