//! Per-head attention bias from graph hop distances: the one-hot distance
//! table, the meta-network, and the bias each head adds before its softmax.
//!
//! ```bash
//! cargo run --example graph_positional_bias
//! ```

use slgtformer::graph::SkeletonGraph;
use slgtformer::lgrpe::{forward_meta, gamma0_from_graph, positional_bias, MetaNetwork};
use slgtformer::rng::Rng;
use slgtformer::{Result, Tensor};

fn rand(shape: &[usize], scale: f64, rng: &mut Rng) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-scale, scale)).collect())
}

fn main() -> Result<()> {
    let g = SkeletonGraph::path(5)?;
    let psi = g.shortest_path_matrix();
    let d_max = 2;
    let gamma0 = gamma0_from_graph(&psi, d_max);
    println!("gamma0 {:?} (distances clipped at {d_max}, overflow bucket {})", gamma0.shape(), d_max + 1);

    let (heads, d_pos, hidden) = (2, 4, 8);
    let mut rng = Rng::new(7);
    let net = MetaNetwork {
        w1: rand(&[d_max + 2, hidden], 0.5, &mut rng)?,
        b1: Tensor::zeros(&[hidden]),
        w2: rand(&[hidden, heads * d_pos], 0.5, &mut rng)?,
        b2: Tensor::zeros(&[heads * d_pos]),
    };
    let gamma = forward_meta(&gamma0, &net, heads)?;
    let vpos: Vec<Tensor> = (0..heads).map(|_| rand(&[d_pos], 1.0, &mut rng)).collect::<Result<_>>()?;
    let bias = positional_bias(&gamma, &vpos)?;

    // pairs at the same clipped distance share a bias until training separates them
    for a in 0..heads {
        println!("head {a}, bias from joint 0:");
        for j in 0..5 {
            println!("  to j{j} (hops {}) {:+.5}", psi.get(0, j), bias.at(&[a, 0, j]));
        }
    }
    Ok(())
}
