//! Time the four temporal attention variants at increasing sequence lengths
//! and print how much each slows down when the length doubles.
//!
//! ```bash
//! cargo run --release --example complexity_bench
//! ```

use slgtformer::bench::{complexity_bench, doubling_ratios, BenchConfig, MECHANISMS};
use slgtformer::Result;

fn main() -> Result<()> {
    // shorter than the CLI defaults so the example finishes quickly
    let cfg = BenchConfig { lengths: vec![120, 240, 480], reps: 5, ..BenchConfig::default() };
    let records = complexity_bench(&cfg, |r| println!("{r}"))?;
    for mech in MECHANISMS {
        let ratios: Vec<String> = doubling_ratios(&records, mech)
            .into_iter()
            .map(|(t, r)| format!("T={t}: {r:.2}"))
            .collect();
        println!("{mech:<8} {}", ratios.join("  "));
    }
    Ok(())
}
