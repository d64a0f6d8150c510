//! Top-k accuracy and the metrics log.
//!
//! The log holds one record per line as space-separated `key=value` pairs in
//! a fixed key order:
//!
//! ```text
//! epoch=3 step=150 lr=0.000287 train_loss=1.204311 train_top1=0.6125 eval_top1=0.5400 eval_top5=0.9500 wall_ms=81234
//! ```
//!
//! `eval_top1` and `eval_top5` are `-` when there is no held-out split.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Class ids ordered by descending score; equal scores rank the lower id first.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids
}

/// Whether `label` is among the `k` best of `scores`.
pub fn in_top_k(scores: &[f64], label: usize, k: usize) -> bool {
    ranking(scores).iter().take(k).any(|&c| c == label)
}

/// Number of rows of `logits: [B * classes]` whose label is in the top `k`.
pub fn count_top_k(logits: &[f64], classes: usize, labels: &[usize], k: usize) -> usize {
    logits
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &l)| in_top_k(row, l, k))
        .count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_top1: f64,
    pub eval_top1: Option<f64>,
    pub eval_top5: Option<f64>,
    pub wall_ms: u64,
}

impl fmt::Display for MetricsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        write!(
            f,
            "epoch={} step={} lr={:.6e} train_loss={:.6} train_top1={:.4} eval_top1={} eval_top5={} wall_ms={}",
            self.epoch,
            self.step,
            self.lr,
            self.train_loss,
            self.train_top1,
            opt(self.eval_top1),
            opt(self.eval_top5),
            self.wall_ms
        )
    }
}

impl MetricsRecord {
    pub fn parse(line: &str) -> Result<MetricsRecord> {
        let bad = |m: String| Error::Format(format!("metrics line {line:?}: {m}"));
        let fields: Vec<(&str, &str)> = line
            .split_whitespace()
            .map(|kv| kv.split_once('=').ok_or_else(|| bad(format!("{kv:?} is not key=value"))))
            .collect::<Result<_>>()?;
        let keys = ["epoch", "step", "lr", "train_loss", "train_top1", "eval_top1", "eval_top5", "wall_ms"];
        if fields.iter().map(|f| f.0).ne(keys) {
            return Err(bad(format!("expected keys {keys:?}")));
        }
        let v = |i: usize| fields[i].1;
        let num = |i: usize| v(i).parse::<f64>().map_err(|_| bad(format!("bad value for {}", keys[i])));
        let int = |i: usize| v(i).parse::<u64>().map_err(|_| bad(format!("bad value for {}", keys[i])));
        let opt = |i: usize| if v(i) == "-" { Ok(None) } else { num(i).map(Some) };
        Ok(MetricsRecord {
            epoch: int(0)? as usize,
            step: int(1)? as usize,
            lr: num(2)?,
            train_loss: num(3)?,
            train_top1: num(4)?,
            eval_top1: opt(5)?,
            eval_top5: opt(6)?,
            wall_ms: int(7)?,
        })
    }

    pub fn append(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| writeln!(f, "{self}"))
            .map_err(|e| Error::io(path, e))
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(MetricsRecord::parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_favor_lower_class() {
        assert_eq!(ranking(&[0.5, 0.9, 0.9, 0.1]), vec![1, 2, 0, 3]);
        assert!(in_top_k(&[1.0, 1.0, 1.0], 0, 1));
        assert!(!in_top_k(&[1.0, 1.0, 1.0], 2, 2));
    }

    #[test]
    fn top5_dominates_top1() {
        let logits = [0.1, 0.3, 0.2, 0.9, 0.0, 0.5, 0.4, 0.8, 0.7, 0.6, 1.0, 0.0];
        let labels = [2, 4];
        assert!(count_top_k(&logits, 6, &labels, 5) >= count_top_k(&logits, 6, &labels, 1));
    }

    #[test]
    fn record_roundtrip() {
        let r = MetricsRecord {
            epoch: 2,
            step: 100,
            lr: 2.5e-4,
            train_loss: 1.25,
            train_top1: 0.5,
            eval_top1: None,
            eval_top5: Some(1.0),
            wall_ms: 42,
        };
        assert_eq!(MetricsRecord::parse(&r.to_string()).unwrap(), r);
        assert!(MetricsRecord::parse("epoch=1").is_err());
    }
}
