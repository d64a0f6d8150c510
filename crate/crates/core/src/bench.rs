//! Wall-clock scaling of the temporal attention mechanisms with sequence
//! length.
//!
//! Each mechanism runs the multi-head attention of one sublayer (projections,
//! attention, output projection; no norms or MLP) on a single `[1, T, D]`
//! sequence with `D = heads * head_dim`:
//!
//! - `lta`: attention inside `k` windows of `T / k` tokens
//! - `gsta`: every token attends to `T / s` strided-convolution summaries
//! - `ttsa`: `lta` followed by `gsta`
//! - `vanilla`: global attention over all `T` tokens
//!
//! Report lines, one per `(mechanism, T)` in the order mechanisms x lengths:
//!
//! ```text
//! bench mechanism=lta T=480 median_ns=1234567 p10_ns=1200000 p90_ns=1300000 reps=20
//! ```

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{ForwardCtx, MultiHeadAttention};
use crate::params::{ModelParams, ParamSpec};
use crate::rng::Rng;
use crate::temporal::averaging_kernel;
use crate::tensor::{no_grad, Tensor};

pub const MECHANISMS: [&str; 4] = ["lta", "gsta", "ttsa", "vanilla"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    /// Windows per sequence.
    pub windows: usize,
    pub head_dim: usize,
    pub heads: usize,
    /// GSTA summary stride.
    pub sub_sample: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { lengths: vec![480, 960, 1920], windows: 6, head_dim: 16, heads: 4, sub_sample: 8, reps: 20, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub mechanism: String,
    pub length: usize,
    pub median_ns: u64,
    pub p10_ns: u64,
    pub p90_ns: u64,
    pub reps: usize,
}

impl fmt::Display for BenchRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "bench mechanism={} T={} median_ns={} p10_ns={} p90_ns={} reps={}",
            self.mechanism, self.length, self.median_ns, self.p10_ns, self.p90_ns, self.reps
        )
    }
}

impl BenchRecord {
    pub fn parse(line: &str) -> Result<BenchRecord> {
        let bad = || Error::Format(format!("bench line {line:?}"));
        let mut words = line.split_whitespace();
        if words.next() != Some("bench") {
            return Err(bad());
        }
        let kv: Vec<(&str, &str)> = words.map(|w| w.split_once('=').ok_or_else(bad)).collect::<Result<_>>()?;
        let keys = ["mechanism", "T", "median_ns", "p10_ns", "p90_ns", "reps"];
        if kv.iter().map(|p| p.0).ne(keys) {
            return Err(bad());
        }
        let num = |i: usize| kv[i].1.parse::<u64>().map_err(|_| bad());
        Ok(BenchRecord {
            mechanism: kv[0].1.to_string(),
            length: num(1)? as usize,
            median_ns: num(2)?,
            p10_ns: num(3)?,
            p90_ns: num(4)?,
            reps: num(5)? as usize,
        })
    }
}

/// `time(2T) / time(T)` of `mech` for each consecutive length pair present.
pub fn doubling_ratios(records: &[BenchRecord], mech: &str) -> Vec<(usize, f64)> {
    let of = |t: usize| records.iter().find(|r| r.mechanism == mech && r.length == t);
    records
        .iter()
        .filter(|r| r.mechanism == mech)
        .filter_map(|r| of(2 * r.length).map(|d| (r.length, d.median_ns as f64 / r.median_ns as f64)))
        .collect()
}

fn percentile(sorted: &[u64], q: f64) -> u64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

struct Fixture {
    lta: MultiHeadAttention,
    gsta: MultiHeadAttention,
    kernel: Tensor,
}

fn fixture(c: &BenchConfig) -> Result<Fixture> {
    let d = c.heads * c.head_dim;
    let specs: Vec<ParamSpec> = ["lta", "gsta"]
        .iter()
        .flat_map(|p| MultiHeadAttention::specs(p, d, c.heads, c.head_dim))
        .collect();
    let p = ModelParams::init(&specs, c.seed)?;
    Ok(Fixture {
        lta: MultiHeadAttention::load(&p, "lta", c.heads)?,
        gsta: MultiHeadAttention::load(&p, "gsta", c.heads)?,
        kernel: Tensor::new(&[c.sub_sample, d, d], averaging_kernel(c.sub_sample, d, d))?,
    })
}

fn run(mech: &str, x: &Tensor, f: &Fixture, c: &BenchConfig) -> Result<Tensor> {
    let ctx = ForwardCtx::eval();
    let (t, d) = (x.shape()[1], x.shape()[2]);
    let lta = |x: &Tensor| -> Result<Tensor> {
        let xw = x.reshape(&[c.windows, t / c.windows, d])?;
        f.lta.forward(&xw, &xw, None, &ctx)?.0.reshape(&[1, t, d])
    };
    let gsta = |x: &Tensor| -> Result<Tensor> {
        let kv = x.strided_conv1d(&f.kernel, c.sub_sample)?;
        Ok(f.gsta.forward(x, &kv, None, &ctx)?.0)
    };
    match mech {
        "lta" => lta(x),
        "gsta" => gsta(x),
        "ttsa" => gsta(&lta(x)?),
        "vanilla" => Ok(f.lta.forward(x, x, None, &ctx)?.0),
        _ => Err(Error::invalid("complexity_bench", format!("unknown mechanism {mech}"))),
    }
}

/// Times every mechanism at every length; `on_record` sees records as they
/// complete.
pub fn complexity_bench(c: &BenchConfig, mut on_record: impl FnMut(&BenchRecord)) -> Result<Vec<BenchRecord>> {
    if c.reps == 0 || c.windows == 0 || c.sub_sample == 0 {
        return Err(Error::invalid("complexity_bench", "reps, windows and sub_sample must be positive"));
    }
    if let Some(t) = c.lengths.iter().find(|&&t| t % c.windows != 0 || t % c.sub_sample != 0) {
        return Err(Error::invalid(
            "complexity_bench",
            format!("length {t} is not divisible by {} windows and stride {}", c.windows, c.sub_sample),
        ));
    }
    let _g = no_grad();
    let f = fixture(c)?;
    let d = c.heads * c.head_dim;
    let mut records = Vec::new();
    let inputs: Vec<Tensor> = c
        .lengths
        .iter()
        .map(|&t| {
            let mut rng = Rng::derive(c.seed, t as u64, 0);
            Tensor::new(&[1, t, d], (0..t * d).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
        })
        .collect::<Result<_>>()?;
    for mech in MECHANISMS {
        for x in &inputs {
            run(mech, x, &f, c)?;
        }
        // repetitions cycle through the lengths so that a slow spell on the
        // host hits every length rather than one
        let mut ns = vec![Vec::with_capacity(c.reps); inputs.len()];
        for _ in 0..c.reps {
            for (x, times) in inputs.iter().zip(ns.iter_mut()) {
                let start = Instant::now();
                run(mech, x, &f, c)?;
                times.push(start.elapsed().as_nanos() as u64);
            }
        }
        for (&t, mut times) in c.lengths.iter().zip(ns) {
            times.sort_unstable();
            let rec = BenchRecord {
                mechanism: mech.to_string(),
                length: t,
                median_ns: percentile(&times, 0.5),
                p10_ns: percentile(&times, 0.1),
                p90_ns: percentile(&times, 0.9),
                reps: c.reps,
            };
            on_record(&rec);
            records.push(rec);
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_record_per_mechanism_and_length() {
        let c = BenchConfig { lengths: vec![48, 96], reps: 3, ..BenchConfig::default() };
        let recs = complexity_bench(&c, |_| {}).unwrap();
        let keys: Vec<(&str, usize)> = recs.iter().map(|r| (r.mechanism.as_str(), r.length)).collect();
        let expect: Vec<(&str, usize)> = MECHANISMS.iter().flat_map(|m| [(*m, 48), (*m, 96)]).collect();
        assert_eq!(keys, expect);
        for r in &recs {
            assert!(r.p10_ns <= r.median_ns && r.median_ns <= r.p90_ns);
            assert_eq!(BenchRecord::parse(&r.to_string()).unwrap(), *r);
        }
        assert_eq!(doubling_ratios(&recs, "lta").len(), 1);
    }
}
