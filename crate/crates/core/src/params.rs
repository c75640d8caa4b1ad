//! Named trainable tensors.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::numerics::{Matrix, Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Every trainable matrix of a model, addressed by [`ParamId`] or by name.
/// Insertion order is stable and defines the checkpoint order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.id(&name).is_some() {
            return Err(Error::InvalidConfig(format!("duplicate parameter `{name}`")));
        }
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Replaces values from another store with identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::InvalidConfig("parameter names do not match the model".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load_from",
                    lhs: dst.shape(),
                    rhs: src.shape(),
                });
            }
            dst.clone_from(src);
        }
        Ok(())
    }

    /// Registers every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        Bindings(self.values.iter().map(|v| tape.param(v.clone())).collect())
    }

    /// Registers every parameter as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bindings {
        Bindings(self.values.iter().map(|v| tape.constant(v.clone())).collect())
    }
}

/// Tape variables for one forward pass, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    /// Uses `vars[i]` for the i-th parameter of a store.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    /// Gradients after [`Tape::backward`]; `None` where a parameter did not
    /// contribute to the loss.
    pub fn grads<'t>(&self, tape: &'t Tape) -> Vec<Option<&'t Matrix>> {
        self.0.iter().map(|&v| tape.grad(v)).collect()
    }
}

/// Uniform Glorot initialization, `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = crate::math::sqrt(6.0 / (rows + cols) as f64);
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit))
}
