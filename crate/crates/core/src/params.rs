//! Named parameter sets and their seeded initialization.

use std::collections::BTreeMap;

use crate::error::{CheckpointError, Error, Result};
use crate::rng::{hash_str, mix_seed, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    /// `[fan_in, fan_out]` weight, uniform on `±1/sqrt(fan_in)`.
    pub fn weight(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        ParamSpec::new(name, &[fan_in, fan_out], Init::Uniform(1.0 / (fan_in as f64).sqrt()))
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        ParamSpec::new(name, shape, Init::Zeros)
    }

    pub fn ones(name: impl Into<String>, shape: &[usize]) -> Self {
        ParamSpec::new(name, shape, Init::Ones)
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Initial tensor. Each parameter draws from its own stream keyed by
    /// `(seed, name)`, so adding or removing a parameter leaves the others
    /// unchanged.
    pub fn materialize(&self, seed: u64) -> Result<Tensor> {
        let n = self.numel();
        let data = match &self.init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(bound) => {
                let mut rng = Rng::new(mix_seed(seed, hash_str(&self.name)));
                (0..n).map(|_| rng.uniform_range(-bound, *bound)).collect()
            }
            Init::Values(v) => v.clone(),
        };
        Tensor::param(&self.shape, data)
    }
}

/// Flat name -> tensor map, iterated in name order.
#[derive(Clone, Debug, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        ModelParams::default()
    }

    pub fn init(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut p = ModelParams::new();
        for spec in specs {
            if p.tensors.contains_key(&spec.name) {
                return Err(Error::invalid("init", format!("duplicate parameter {}", spec.name)));
            }
            p.insert(spec.name.clone(), spec.materialize(seed)?);
        }
        Ok(p)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()).into())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.tensors.values().for_each(Tensor::zero_grad);
    }

    /// Checks the name set and every shape against `specs`.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<(), CheckpointError> {
        for spec in specs {
            let t = self
                .tensors
                .get(&spec.name)
                .ok_or_else(|| CheckpointError::Missing(spec.name.clone()))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(CheckpointError::ShapeMismatch {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !specs.iter().any(|s| &s.name == *k)) {
            return Err(CheckpointError::Unexpected(extra.clone()));
        }
        Ok(())
    }
}

impl FromIterator<(String, Tensor)> for ModelParams {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ModelParams {
            tensors: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_per_name_and_seeded() {
        let specs = vec![ParamSpec::weight("a", 4, 3), ParamSpec::weight("b", 4, 3)];
        let p1 = ModelParams::init(&specs, 7).unwrap();
        let p2 = ModelParams::init(&specs[1..], 7).unwrap();
        assert_eq!(p1.get("b").unwrap().data(), p2.get("b").unwrap().data());
        assert_ne!(p1.get("a").unwrap().data(), p1.get("b").unwrap().data());
        let bound = 0.5;
        assert!(p1.get("a").unwrap().data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn validate_reports_each_problem() {
        let specs = vec![ParamSpec::zeros("x", &[2]), ParamSpec::ones("y", &[3])];
        let mut p = ModelParams::init(&specs, 0).unwrap();
        assert!(p.validate(&specs).is_ok());
        assert_eq!(
            p.validate(&specs[..1]),
            Err(CheckpointError::Unexpected("y".into()))
        );
        p.insert("y", Tensor::zeros(&[4]));
        assert!(matches!(p.validate(&specs), Err(CheckpointError::ShapeMismatch { .. })));
        let q = ModelParams::init(&specs[..1], 0).unwrap();
        assert_eq!(q.validate(&specs), Err(CheckpointError::Missing("y".into())));
    }
}
