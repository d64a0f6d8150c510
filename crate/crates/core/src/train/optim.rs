//! Adam and SGD with momentum over a named parameter map.
//!
//! Weight decay is L2: `wd * theta` is added to the gradient before the update.

use std::collections::BTreeMap;

use crate::checkpoint::Checkpoint;
use crate::config::{OptimizerConfig, OptimizerKind};
use crate::error::{CheckpointError, Result};
use crate::params::ModelParams;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    /// Updates applied so far.
    pub steps: u64,
    /// Adam first moment, or the SGD velocity.
    first: BTreeMap<String, Vec<f64>>,
    /// Adam second moment.
    second: BTreeMap<String, Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer { config, steps: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    /// One update at learning rate `lr` from the gradients accumulated in
    /// `params`; parameters that received no gradient are left alone.
    pub fn step(&mut self, params: &mut ModelParams, lr: f64) -> Result<()> {
        self.steps += 1;
        let c = self.config.clone();
        let t = self.steps as i32;
        let updates: Vec<(String, Tensor)> = params
            .iter()
            .filter_map(|(name, p)| p.grad().map(|g| (name.clone(), p.clone(), g)))
            .map(|(name, p, mut g)| {
                let theta = p.data();
                if c.weight_decay != 0.0 {
                    g.iter_mut().zip(theta).for_each(|(g, w)| *g += c.weight_decay * w);
                }
                let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                let new: Vec<f64> = match c.kind {
                    OptimizerKind::Adam => {
                        let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
                        theta
                            .iter()
                            .zip(&g)
                            .zip(m.iter_mut().zip(v.iter_mut()))
                            .map(|((w, g), (m, v))| {
                                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                                w - lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps)
                            })
                            .collect()
                    }
                    OptimizerKind::SgdMomentum => theta
                        .iter()
                        .zip(&g)
                        .zip(m.iter_mut())
                        .map(|((w, g), m)| {
                            *m = c.momentum * *m + g;
                            w - lr * *m
                        })
                        .collect(),
                };
                Ok((name, Tensor::param(p.shape(), new)?))
            })
            .collect::<Result<_>>()?;
        for (name, t) in updates {
            params.insert(name, t);
        }
        Ok(())
    }

    /// Stores the moments as `opt.m.<name>` / `opt.v.<name>` plus the step count.
    pub fn save_state(&self, ck: &mut Checkpoint, params: &ModelParams) {
        ck.set_meta("opt.steps", self.steps.to_string());
        for (prefix, map) in [("opt.m.", &self.first), ("opt.v.", &self.second)] {
            for (name, v) in map {
                let shape = params.get(name).map(|t| t.shape().to_vec()).unwrap_or_else(|_| vec![v.len()]);
                ck.insert(format!("{prefix}{name}"), &shape, v.clone());
            }
        }
    }

    pub fn load_state(config: OptimizerConfig, ck: &Checkpoint) -> Result<Self> {
        let steps = ck
            .meta("opt.steps")?
            .parse()
            .map_err(|_| CheckpointError::Malformed("opt.steps is not an integer".into()))?;
        let mut o = Optimizer::new(config);
        o.steps = steps;
        for (name, (_, data)) in &ck.tensors {
            if let Some(p) = name.strip_prefix("opt.m.") {
                o.first.insert(p.to_string(), data.clone());
            } else if let Some(p) = name.strip_prefix("opt.v.") {
                o.second.insert(p.to_string(), data.clone());
            }
        }
        Ok(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_run(kind: OptimizerKind, lr: f64) -> f64 {
        // minimize sum((w - 3)^2)
        let mut p: ModelParams = [("w".to_string(), Tensor::param(&[2], vec![0.0, 10.0]).unwrap())].into_iter().collect();
        let mut opt = Optimizer::new(OptimizerConfig { kind, lr, ..OptimizerConfig::default() });
        for _ in 0..500 {
            let w = p.get("w").unwrap().clone();
            w.add_scalar(-3.0).unwrap().square().unwrap().sum().unwrap().backward().unwrap();
            opt.step(&mut p, lr).unwrap();
        }
        p.get("w").unwrap().data().iter().map(|w| (w - 3.0).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn both_kinds_converge_on_a_quadratic() {
        assert!(quadratic_run(OptimizerKind::Adam, 0.1) < 1e-2);
        assert!(quadratic_run(OptimizerKind::SgdMomentum, 0.01) < 1e-6);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p: ModelParams = [("w".to_string(), Tensor::param(&[1], vec![1.0]).unwrap())].into_iter().collect();
        p.get("w").unwrap().scale(5.0).unwrap().sum().unwrap().backward().unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::default());
        opt.step(&mut p, 0.01).unwrap();
        assert!((p.get("w").unwrap().item() - 0.99).abs() < 1e-9);
    }

    #[test]
    fn state_roundtrip() {
        let mut p: ModelParams = [("w".to_string(), Tensor::param(&[2], vec![1.0, 2.0]).unwrap())].into_iter().collect();
        p.get("w").unwrap().square().unwrap().sum().unwrap().backward().unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::default());
        opt.step(&mut p, 0.1).unwrap();
        let mut ck = Checkpoint::new();
        opt.save_state(&mut ck, &p);
        let back = Optimizer::load_state(OptimizerConfig::default(), &Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, opt);
    }
}
