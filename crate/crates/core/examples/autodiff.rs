//! Build a small expression, run reverse mode, and compare against central
//! differences.
//!
//! ```bash
//! cargo run --example autodiff
//! ```

use slgtformer::tensor::gradcheck::{check_gradients, GradCheckConfig};
use slgtformer::{Result, Tensor};

fn main() -> Result<()> {
    let x = Tensor::param(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7])?;
    let w = Tensor::param(&[3, 2], vec![1.0, 0.2, -0.4, 0.8, 0.3, -1.1])?;

    let y = x.matmul(&w)?.relu()?.softmax(-1)?;
    let loss = y.square()?.sum()?;
    loss.backward()?;
    println!("loss = {:.6}", loss.item());
    println!("dL/dx = {:?}", x.grad().unwrap());
    println!("dL/dw = {:?}", w.grad().unwrap());

    let params = vec![("x".to_string(), x.detach()), ("w".to_string(), w.detach())];
    let report = check_gradients(
        &params,
        |p| p[0].matmul(&p[1])?.relu()?.softmax(-1)?.square()?.sum(),
        &GradCheckConfig::default(),
    )?;
    for p in &report.params {
        println!("{}: max relative error {:.2e}", p.name, p.max_rel_err);
    }
    println!("passed: {}", report.passed());
    Ok(())
}
