//! Record the spatial attention maps of one forward pass, write them to a
//! trace file, and read back the strongest joint pair of each head.
//!
//! ```bash
//! cargo run --example attention_trace
//! ```

use slgtformer::config::ModelConfig;
use slgtformer::graph::SkeletonGraph;
use slgtformer::layers::ForwardCtx;
use slgtformer::model::Slgtformer;
use slgtformer::rng::Rng;
use slgtformer::spatial::{read_attention_trace, write_attention_trace};
use slgtformer::{Result, Tensor};

fn main() -> Result<()> {
    let graph = SkeletonGraph::path(5)?;
    let names = graph.node_names().to_vec();
    let model = Slgtformer::new(ModelConfig { joints: 5, ..ModelConfig::tiny() }, graph)?;
    let params = model.init_params()?;
    let mut rng = Rng::new(9);
    let x = Tensor::new(&[1, 5, 2, 12], (0..120).map(|_| rng.uniform_range(-1.0, 1.0)).collect())?;

    let ctx = ForwardCtx::eval().with_trace();
    model.forward(&x, &params, &ctx)?;
    let path = std::env::temp_dir().join("slgt_example.attn");
    write_attention_trace(&path, &ctx.take_trace())?;

    for map in read_attention_trace(&path)? {
        let [frames, heads, n, _] = map.shape;
        println!("block {}: {frames} frames x {heads} heads x {n} x {n}", map.block);
        for h in 0..heads {
            // averaged over frames
            let mut mean = vec![0.0f32; n * n];
            for f in 0..frames {
                let off = (f * heads + h) * n * n;
                for (m, v) in mean.iter_mut().zip(&map.data[off..off + n * n]) {
                    *m += v / frames as f32;
                }
            }
            let (best, w) = mean.iter().enumerate().fold((0, 0.0f32), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
            println!("  head {h}: strongest {} -> {} ({w:.3})", names[best / n], names[best % n]);
        }
    }
    let _ = std::fs::remove_file(&path);
    Ok(())
}
