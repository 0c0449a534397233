use crate::error::{DcrError, Result};
use crate::numerics::{Gradients, SeededRng, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, kept in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// All values concatenated in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.values().iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_len() {
            return Err(DcrError::shape("assign_flat", &[self.total_len()], &[flat.len()]));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Redraws every value i.i.d. from the open interval `(-range, range)`.
    pub fn init_uniform(&mut self, range: f64, rng: &mut SeededRng) {
        for t in &mut self.tensors {
            for v in t.values_mut() {
                *v = loop {
                    let x = rng.uniform(-range, range);
                    if x != -range {
                        break x;
                    }
                };
            }
        }
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams(self.tensors.iter().map(|t| tape.leaf(t.clone())).collect())
    }
}

/// Tape handles for a [`ParamSet`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct BoundParams(Vec<Var>);

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    /// Per-parameter gradients (zeros where nothing flowed), registration order.
    pub fn gradients(&self, grads: &Gradients, params: &ParamSet) -> Vec<Vec<f64>> {
        self.0
            .iter()
            .zip(params.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t.len()))
            .collect()
    }
}
