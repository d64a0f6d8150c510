//! The two temporal attentions: windowed local attention keeps every token's
//! context inside its window, and global attention over window summaries
//! reaches across the whole sequence.
//!
//! ```bash
//! cargo run --example temporal_attention
//! ```

use slgtformer::layers::ForwardCtx;
use slgtformer::params::ModelParams;
use slgtformer::rng::Rng;
use slgtformer::temporal::{gsta_forward, lta_forward, TemporalBlock};
use slgtformer::{Result, Tensor};

fn main() -> Result<()> {
    let (t, d, heads, sub_sample) = (24, 8, 2, 4);
    let specs = TemporalBlock::specs(0, d, heads, 2, sub_sample, true);
    let params = ModelParams::init(&specs, 11)?;
    let block = TemporalBlock::load(&params, 0, heads, sub_sample, true)?;
    let ctx = ForwardCtx::eval();

    let mut rng = Rng::new(5);
    let x = Tensor::new(&[1, t, d], (0..t * d).map(|_| rng.normal()).collect())?;
    let mut bumped = x.to_vec();
    bumped[5 * d] += 1.0; // token 5 sits in the first window of 4
    let bumped = Tensor::new(&[1, t, d], bumped)?;

    let w = t / block.windows;
    let a = lta_forward(&x, &block.lta, w, &ctx)?;
    let b = lta_forward(&bumped, &block.lta, w, &ctx)?;
    println!("local attention, window {w}: tokens changed by bumping token 5");
    print_changed(&a, &b, d);

    let k = block.sr_kernel.as_ref().unwrap();
    let a = gsta_forward(&a, &block.gsta, Some(k), sub_sample, &ctx)?;
    let b = gsta_forward(&b, &block.gsta, Some(k), sub_sample, &ctx)?;
    println!("after global summary attention:");
    print_changed(&a, &b, d);

    println!("full twin block output {:?}", block.forward(&x, &ctx)?.shape());
    Ok(())
}

fn print_changed(a: &Tensor, b: &Tensor, d: usize) {
    let changed: Vec<usize> = a
        .data()
        .chunks(d)
        .zip(b.data().chunks(d))
        .enumerate()
        .filter(|(_, (p, q))| p != q)
        .map(|(i, _)| i)
        .collect();
    println!("  {changed:?}");
}
