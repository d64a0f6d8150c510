//! Train a reduced model on a small synthetic dataset and report the
//! held-out accuracy after each epoch.
//!
//! ```bash
//! cargo run --release --example train_synthetic -- 3
//! ```
//!
//! The argument is the epoch count (default 2).

use slgtformer::config::{AugmentConfig, ModelConfig, StageConfig, TrainConfig};
use slgtformer::data::{synth_dataset, Split, SynthOptions};
use slgtformer::graph::SkeletonGraph;
use slgtformer::model::Slgtformer;
use slgtformer::train::{prepare, read_metrics, TrainOptions, Trainer, METRICS_FILE};
use slgtformer::Result;

fn main() -> Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2);
    let opts = SynthOptions { num_classes: 5, samples_per_class: 20, ..SynthOptions::default() };
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in synth_dataset(&opts)?.into_iter().enumerate() {
        match opts.split_of(i % opts.samples_per_class) {
            Split::Train => train.push(s),
            Split::Test => test.push(s),
        }
    }

    let cfg = ModelConfig {
        d_emb: 32,
        mlp_ratio: 2,
        num_classes: opts.num_classes,
        stages: vec![StageConfig::new(1, 8), StageConfig::new(1, 4)],
        ..ModelConfig::default()
    };
    let model = Slgtformer::new(cfg, SkeletonGraph::builtin_slgt27())?;
    let train = prepare(&model, train)?;
    let test = prepare(&model, test)?;
    println!("{} parameters, {} train / {} test samples", model.count_params(), train.len(), test.len());

    let mut tc = TrainConfig { epochs, ..TrainConfig::default() };
    tc.optimizer.lr = 1e-3;
    let trainer = Trainer::new(&model, tc, AugmentConfig::default())?;
    let out_dir = std::env::temp_dir().join("slgt_train_example");
    let _ = std::fs::remove_dir_all(&out_dir);
    let opts = TrainOptions { out_dir: out_dir.clone(), resume: None, config_toml: String::new() };
    let outcome = trainer.run(&train, &test, &opts, |r| println!("{r}"))?;
    println!("ran {} epochs; log has {} lines", outcome.epochs_run, read_metrics(out_dir.join(METRICS_FILE))?.len());
    Ok(())
}
