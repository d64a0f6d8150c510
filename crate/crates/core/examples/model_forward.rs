//! Build the default classifier, count its parameters per component, classify
//! a random batch, and gradient-check the tiny configuration end to end.
//!
//! ```bash
//! cargo run --example model_forward
//! ```

use std::collections::BTreeMap;

use slgtformer::config::ModelConfig;
use slgtformer::graph::SkeletonGraph;
use slgtformer::layers::ForwardCtx;
use slgtformer::model::{model_gradcheck, Slgtformer};
use slgtformer::rng::Rng;
use slgtformer::tensor::{gradcheck::GradCheckConfig, no_grad};
use slgtformer::{Result, Tensor};

fn main() -> Result<()> {
    let model = Slgtformer::new(ModelConfig::default(), SkeletonGraph::builtin_slgt27())?;
    let mut groups: BTreeMap<String, usize> = BTreeMap::new();
    for spec in model.param_specs() {
        let group = spec.name.split('.').take(2).collect::<Vec<_>>().join(".");
        *groups.entry(group).or_default() += spec.numel();
    }
    for (g, n) in &groups {
        println!("{g:<24} {n:>8}");
    }
    println!("{:<24} {:>8}", "total", model.count_params());
    for p in model.plan() {
        println!("stage: length {} padded {} valid {} blocks {:?}", p.length, p.padded, p.valid, p.blocks);
    }

    let params = model.init_params()?;
    let mut rng = Rng::new(1);
    let x = Tensor::new(&[2, 27, 2, 120], (0..2 * 27 * 2 * 120).map(|_| rng.uniform_range(-1.0, 1.0)).collect())?;
    let logits = {
        let _g = no_grad();
        model.forward(&x, &params, &ForwardCtx::eval())?
    };
    println!("logits {:?}: {:.4?}", logits.shape(), &logits.data()[..5]);

    let tiny = Slgtformer::new(ModelConfig::tiny(), SkeletonGraph::path(3)?)?;
    let report = model_gradcheck(&tiny, &GradCheckConfig::default())?;
    println!(
        "tiny model: {} parameter entries checked, max relative error {:.2e}, passed {}",
        report.checked_entries(),
        report.max_rel_err(),
        report.passed()
    );
    Ok(())
}
