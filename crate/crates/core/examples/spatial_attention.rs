//! One spatial block over the joints of each frame, with the graph bias and
//! the learnable adjacency factor, and its recorded attention map.
//!
//! ```bash
//! cargo run --example spatial_attention
//! ```

use slgtformer::config::ModelConfig;
use slgtformer::graph::SkeletonGraph;
use slgtformer::layers::ForwardCtx;
use slgtformer::model::Slgtformer;
use slgtformer::rng::Rng;
use slgtformer::spatial::SpatialBlock;
use slgtformer::{Result, Tensor};

fn main() -> Result<()> {
    let cfg = ModelConfig { joints: 4, ..ModelConfig::tiny() };
    let model = Slgtformer::new(cfg.clone(), SkeletonGraph::path(4)?)?;
    let params = model.init_params()?;
    let block = SpatialBlock::load(&params, 0, cfg.heads, true, true)?;
    let gamma = model.gamma(&params)?.expect("positional bias enabled");

    let mut rng = Rng::new(3);
    let x = Tensor::new(&[2, 4, cfg.d_emb], (0..2 * 4 * cfg.d_emb).map(|_| rng.normal()).collect())?;
    let ctx = ForwardCtx::eval().with_trace();
    let y = block.forward(&x, Some(&gamma), &ctx)?;
    println!("input {:?} -> output {:?}", x.shape(), y.shape());

    let map = &ctx.take_trace()[0];
    let [_, heads, n, _] = map.shape;
    println!("frame 0 attention (block {}, {heads} heads):", map.block);
    for h in 0..heads {
        for i in 0..n {
            let row = &map.data[(h * n + i) * n..(h * n + i + 1) * n];
            println!("  head {h} joint {i}: {row:.3?}");
        }
    }
    Ok(())
}
