use rand_chacha::ChaCha8Rng;

use super::params::{BoundParams, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::Result;

/// Affine layer x·W + b whose tensors live in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Glorot weights, zero bias, registered as `<name>.w` and `<name>.b`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.insert_glorot(format!("{name}.w"), fan_in, fan_out, rng);
        let bias = store.insert(format!("{name}.b"), Tensor::zeros(1, fan_out));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    /// Set b = −Σᵢ Wᵢⱼ so an input of all ones maps to zero. Placed after
    /// elu+1, this cancels the activation's +1 offset at initialization.
    pub fn center_for_unit_offset(&self, store: &mut ParamStore) {
        let w = store.tensor(self.weight).clone();
        let b = store.tensor_mut(self.bias);
        for j in 0..self.fan_out {
            let sum: f64 = (0..self.fan_in).map(|i| w.data()[i * self.fan_out + j]).sum();
            b.data_mut()[j] = -sum;
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &BoundParams, x: Var) -> Result<Var> {
        tape.dense(x, bound.var(self.weight), bound.var(self.bias))
    }
}
