//! Save parameters to a checkpoint, load them back against the model's
//! parameter list, and see the errors for damaged or mismatched files.
//!
//! ```bash
//! cargo run --example checkpoints
//! ```

use slgtformer::checkpoint::{load_params, save_params, Checkpoint};
use slgtformer::config::{Config, ModelConfig};
use slgtformer::graph::SkeletonGraph;
use slgtformer::model::Slgtformer;
use slgtformer::Result;

fn main() -> Result<()> {
    let cfg = Config { model: ModelConfig::tiny(), ..Config::default() };
    let model = Slgtformer::new(cfg.model.clone(), SkeletonGraph::path(3)?)?;
    let params = model.init_params()?;
    let path = std::env::temp_dir().join("slgt_example.ckpt");
    save_params(&path, &params, &cfg.to_toml())?;

    let loaded = load_params(&path, model.param_specs())?;
    let same = params.iter().all(|(n, t)| loaded.get(n).map(|u| u.data() == t.data()).unwrap_or(false));
    println!("{} tensors restored bit-exact: {same}", loaded.len());

    let ck = Checkpoint::load(&path)?;
    let stored = Config::parse(ck.meta("config")?)?;
    println!("stored config rebuilds the same model: {}", stored.model == cfg.model);

    let mut bytes = std::fs::read(&path).expect("just written");
    bytes[40] ^= 1;
    println!("flipped bit: {}", Checkpoint::from_bytes(&bytes).unwrap_err());

    let wider = Slgtformer::new(ModelConfig { d_emb: 16, ..ModelConfig::tiny() }, SkeletonGraph::path(3)?)?;
    println!("other model: {}", load_params(&path, wider.param_specs()).unwrap_err());
    let _ = std::fs::remove_file(&path);
    Ok(())
}
