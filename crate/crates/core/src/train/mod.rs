//! Minibatch training, evaluation and resumable checkpoints.
//!
//! Randomness is derived, never carried: the epoch's sample order comes from
//! `(seed, epoch)`, each sample's crop and augmentation from
//! `(seed, epoch, sample)`, dropout from `(seed, step)`. Resuming from an
//! end-of-epoch checkpoint therefore replays the uninterrupted run exactly.
//!
//! The reported train top-1 is the running accuracy over the epoch's
//! (augmented) training batches.

mod metrics;
mod optim;
mod schedule;

pub use metrics::{count_top_k, in_top_k, ranking, read_metrics, MetricsRecord};
pub use optim::Optimizer;
pub use schedule::learning_rate;

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint::Checkpoint;
use crate::config::{AugmentConfig, TrainConfig};
use crate::data::{augment, batch_tensor, normalize, sample_clip, KeypointSequence};
use crate::error::{CheckpointError, Error, Result};
use crate::layers::ForwardCtx;
use crate::model::Slgtformer;
use crate::params::ModelParams;
use crate::rng::Rng;
use crate::tensor::no_grad;

pub const METRICS_FILE: &str = "metrics.log";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const NAN_DUMP: &str = "nan_batch.txt";

const DROPOUT_STREAM: u64 = 0xD0;
const ORDER_STREAM: u64 = 0x0D;

/// Normalizes every sequence and checks it against the model input layout.
pub fn prepare(model: &Slgtformer, seqs: Vec<KeypointSequence>) -> Result<Vec<KeypointSequence>> {
    let c = model.config();
    seqs.into_iter()
        .map(|s| {
            if s.joints != c.joints || s.channels != c.in_channels {
                return Err(Error::invalid(
                    "dataset",
                    format!(
                        "sample has {} joints x {} channels, model expects {} x {}",
                        s.joints, s.channels, c.joints, c.in_channels
                    ),
                ));
            }
            if s.label >= c.num_classes {
                return Err(Error::invalid(
                    "dataset",
                    format!("label {} but the model has {} classes", s.label, c.num_classes),
                ));
            }
            normalize(&s)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub top1: f64,
    pub top5: f64,
    pub loss: f64,
    /// Per-sample logits, `classes` values each.
    pub logits: Vec<Vec<f64>>,
}

/// Centre-crop evaluation without gradient recording. `seqs` must already be
/// prepared.
pub fn evaluate(model: &Slgtformer, params: &ModelParams, seqs: &[KeypointSequence], batch_size: usize) -> Result<EvalResult> {
    let _g = no_grad();
    let classes = model.config().num_classes;
    let mut rng = Rng::new(0);
    let (mut c1, mut c5, mut loss) = (0, 0, 0.0);
    let mut logits = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(batch_size.max(1)) {
        let clips = chunk.iter().map(|s| sample_clip(s, false, &mut rng)).collect::<Result<Vec<_>>>()?;
        let x = batch_tensor(&clips.iter().collect::<Vec<_>>())?;
        let labels: Vec<usize> = chunk.iter().map(|s| s.label).collect();
        let out = model.forward(&x, params, &ForwardCtx::eval())?;
        loss += out.cross_entropy(&labels, 0.0)?.item() * chunk.len() as f64;
        c1 += count_top_k(out.data(), classes, &labels, 1);
        c5 += count_top_k(out.data(), classes, &labels, 5);
        logits.extend(out.data().chunks_exact(classes).map(<[f64]>::to_vec));
    }
    let n = seqs.len().max(1) as f64;
    Ok(EvalResult { top1: c1 as f64 / n, top5: c5 as f64 / n, loss: loss / n, logits })
}

/// State carried across epochs and stored in `last.ckpt`.
struct LoopState {
    params: ModelParams,
    optimizer: Optimizer,
    epoch: usize,
    step: usize,
    best: Option<f64>,
}

impl LoopState {
    fn save(&self, path: &Path, config_toml: &str) -> Result<()> {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "train-state");
        ck.set_meta("config", config_toml);
        ck.set_meta("epoch", self.epoch.to_string());
        ck.set_meta("step", self.step.to_string());
        if let Some(b) = self.best {
            ck.set_meta("best", format!("{:016x}", b.to_bits()));
        }
        ck.put_params(&self.params);
        self.optimizer.save_state(&mut ck, &self.params);
        ck.save(path)
    }

    fn load(path: &Path, model: &Slgtformer, cfg: &TrainConfig) -> Result<LoopState> {
        let ck = Checkpoint::load(path)?;
        if ck.meta("kind")? != "train-state" {
            return Err(CheckpointError::Malformed(format!("{} is not a training checkpoint", path.display())).into());
        }
        let int = |k: &str| -> Result<usize> {
            ck.meta(k)?
                .parse()
                .map_err(|_| CheckpointError::Malformed(format!("meta {k} is not an integer")).into())
        };
        let best = match ck.meta.get("best") {
            Some(b) => Some(f64::from_bits(
                u64::from_str_radix(b, 16).map_err(|_| CheckpointError::Malformed("meta best".into()))?,
            )),
            None => None,
        };
        Ok(LoopState {
            params: ck.params(model.param_specs())?,
            optimizer: Optimizer::load_state(cfg.optimizer.clone(), &ck)?,
            epoch: int("epoch")?,
            step: int("step")?,
            best,
        })
    }
}

pub struct TrainOptions {
    pub out_dir: PathBuf,
    /// Continue from a `last.ckpt` written by an earlier run.
    pub resume: Option<PathBuf>,
    /// Text stored in checkpoints so eval and infer can rebuild the model.
    pub config_toml: String,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Records of this invocation (earlier ones stay in the log file).
    pub records: Vec<MetricsRecord>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

pub struct Trainer<'a> {
    pub model: &'a Slgtformer,
    pub config: TrainConfig,
    pub augment: AugmentConfig,
    mirror: Vec<usize>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a Slgtformer, config: TrainConfig, augment: AugmentConfig) -> Result<Self> {
        config.validate()?;
        augment.validate()?;
        Ok(Trainer { mirror: model.graph().mirror_permutation(), model, config, augment })
    }

    fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.config.batch_size)
    }

    /// Runs the remaining epochs. `train` and `eval` must be prepared;
    /// `on_epoch` sees every record once the epoch's checkpoints are written.
    pub fn run(
        &self,
        train: &[KeypointSequence],
        eval: &[KeypointSequence],
        opts: &TrainOptions,
        mut on_epoch: impl FnMut(&MetricsRecord),
    ) -> Result<TrainOutcome> {
        if train.is_empty() {
            return Err(Error::invalid("train", "empty training split"));
        }
        std::fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
        let cfg = &self.config;
        let mut state = match &opts.resume {
            Some(p) => LoopState::load(p, self.model, cfg)?,
            None => LoopState {
                params: self.model.init_params()?,
                optimizer: Optimizer::new(cfg.optimizer.clone()),
                epoch: 0,
                step: 0,
                best: None,
            },
        };
        let total_steps = cfg.epochs * self.steps_per_epoch(train.len());
        let started = Instant::now();
        let mut records = Vec::new();
        let mut stopped_early = false;
        let first_epoch = state.epoch;
        while state.epoch < cfg.epochs {
            let rec = self.epoch(&mut state, train, eval, total_steps, &opts.out_dir, &started)?;
            rec.append(opts.out_dir.join(METRICS_FILE))?;
            let score = rec.eval_top1.unwrap_or(rec.train_top1);
            if state.best.is_none_or(|b| score > b) {
                state.best = Some(score);
                crate::checkpoint::save_params(opts.out_dir.join(BEST_CHECKPOINT), &state.params, &opts.config_toml)?;
            }
            state.save(&opts.out_dir.join(LAST_CHECKPOINT), &opts.config_toml)?;
            on_epoch(&rec);
            records.push(rec.clone());
            if cfg.stop_at_train_top1.is_some_and(|t| rec.train_top1 >= t) {
                stopped_early = true;
                break;
            }
        }
        Ok(TrainOutcome {
            epochs_run: state.epoch - first_epoch,
            params: state.params,
            records,
            stopped_early,
        })
    }

    fn epoch(
        &self,
        state: &mut LoopState,
        train: &[KeypointSequence],
        eval: &[KeypointSequence],
        total_steps: usize,
        out_dir: &Path,
        started: &Instant,
    ) -> Result<MetricsRecord> {
        let cfg = &self.config;
        let classes = self.model.config().num_classes;
        let epoch = state.epoch;
        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::derive(cfg.seed, ORDER_STREAM, epoch as u64).shuffle(&mut order);
        let (mut loss_sum, mut correct, mut lr) = (0.0, 0, 0.0);
        for (batch, ids) in order.chunks(cfg.batch_size).enumerate() {
            lr = learning_rate(&cfg.schedule, cfg.optimizer.lr, state.step, total_steps, epoch);
            let fail = |source: Error| {
                let dump = format!("epoch {epoch}\nstep {}\nbatch {batch}\nsamples {ids:?}\n", state.step);
                // best effort: the training error is what gets reported
                let _ = std::fs::write(out_dir.join(NAN_DUMP), dump);
                Error::Training { epoch, step: state.step, batch, source: Box::new(source) }
            };
            let clips = ids
                .iter()
                .map(|&i| {
                    let mut rng = Rng::derive(cfg.seed, epoch as u64 + 1, i as u64);
                    let clip = sample_clip(&train[i], true, &mut rng)?;
                    Ok(if cfg.augment { augment(&clip, &self.augment, &self.mirror, &mut rng) } else { clip })
                })
                .collect::<Result<Vec<_>>>()?;
            let x = batch_tensor(&clips.iter().collect::<Vec<_>>())?;
            let labels: Vec<usize> = ids.iter().map(|&i| train[i].label).collect();
            let ctx = ForwardCtx::train(
                Rng::derive(cfg.seed, DROPOUT_STREAM, state.step as u64),
                self.model.config().attn_dropout,
                self.model.config().mlp_dropout,
            );
            state.params.zero_grad();
            let step = || -> Result<(f64, usize)> {
                let logits = self.model.forward(&x, &state.params, &ctx)?;
                let loss = logits.cross_entropy(&labels, cfg.label_smoothing)?;
                loss.backward()?;
                Ok((loss.item(), count_top_k(logits.data(), classes, &labels, 1)))
            };
            let (loss, hits) = step().map_err(|e| if e.is_numeric() { fail(e) } else { e })?;
            if let Some(name) = state
                .params
                .iter()
                .find(|(_, p)| p.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())))
                .map(|(n, _)| n.clone())
            {
                return Err(fail(Error::Layer { layer: name, source: Box::new(Error::NonFinite { op: "gradient" }) }));
            }
            state.optimizer.step(&mut state.params, lr)?;
            state.step += 1;
            loss_sum += loss * ids.len() as f64;
            correct += hits;
        }
        state.epoch += 1;
        let ev = if eval.is_empty() { None } else { Some(evaluate(self.model, &state.params, eval, cfg.batch_size)?) };
        Ok(MetricsRecord {
            epoch: state.epoch,
            step: state.step,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_top1: correct as f64 / train.len() as f64,
            eval_top1: ev.as_ref().map(|e| e.top1),
            eval_top5: ev.as_ref().map(|e| e.top5),
            wall_ms: started.elapsed().as_millis() as u64,
        })
    }
}
