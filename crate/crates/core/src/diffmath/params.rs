use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered parameter buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn filled(&mut self, name: impl Into<String>, shape: &[usize], v: T) -> ParamId {
        self.add(name, Tensor::filled(shape, v))
    }

    /// Uniform(-b, b) with `b = sqrt(6 / fan_in)` scaled by `gain`.
    pub fn kaiming_uniform<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> ParamId {
        let bound = gain * (6.0 / fan_in.max(1) as f64).sqrt();
        self.uniform(name, shape, bound, rng)
    }

    pub fn uniform<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut R) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
        self.add(name, Tensor { shape: shape.to_vec(), data })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Registers every parameter on an empty tape, so that parameter `i`
    /// is `Var(i)`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<()> {
        if !tape.is_empty() {
            return Err(Error::Tape("parameters must be bound to an empty tape".into()));
        }
        for t in &self.tensors {
            tape.leaf(t.clone());
        }
        Ok(())
    }

    /// Collects parameter gradients after a backward pass (zeros when a
    /// parameter was unused).
    pub fn grads(&self, tape: &Tape<T>) -> Vec<Vec<T>> {
        (0..self.len())
            .map(|i| tape.grad(Var(i)).unwrap_or_else(|| vec![T::zero(); self.tensors[i].len()]))
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }
}

/// Parameter `id` as bound by [`ParamStore::bind`].
pub fn param(id: ParamId) -> Var {
    Var(id.0)
}
