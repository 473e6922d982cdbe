use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use super::tensor::{Real, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// Normal with the given standard deviation, resampled outside two
    /// standard deviations.
    TruncatedNormal {
        std: f64,
    },
}

impl Init {
    fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Init::Zeros => 0.0,
            Init::Ones => 1.0,
            Init::Constant(v) => v,
            Init::TruncatedNormal { std } => loop {
                let z = standard_normal(rng);
                if z.abs() <= 2.0 {
                    break z * std;
                }
            },
        }
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller; u1 in (0, 1].
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Named trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    decay: Vec<bool>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            decay: Vec::new(),
        }
    }

    /// Registers a tensor. `Zeros`, `Ones` and `Constant` initializers mark the
    /// parameter as exempt from weight decay (biases, norm gains, offsets).
    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        let data = (0..rows * cols).map(|_| T::lit(init.sample(rng))).collect();
        let decay = matches!(init, Init::TruncatedNormal { .. });
        self.insert(name, Tensor::from_vec(rows, cols, data), decay)
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, decay: bool) -> Result<ParamId> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        self.names.push(name.to_string());
        self.values.push(value);
        self.decay.push(decay);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id.0]
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Zero tensors shaped like every parameter, for gradient accumulation.
    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.values.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect()
    }

    /// Replaces the value of `name` with `value`, which must have the same shape.
    pub fn load(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self.id(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let cur = &self.values[id.0];
        if cur.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "ParamStore::load",
                left: cur.shape(),
                right: value.shape(),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            decay: self.decay.clone(),
        }
    }
}
