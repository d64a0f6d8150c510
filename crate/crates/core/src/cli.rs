//! The `slgt` command line.
//!
//! Exit codes: 0 success, 2 invalid input (arguments, config, files,
//! checkpoints), 3 numeric failure (non-finite values, failed gradient check).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bench::{complexity_bench, doubling_ratios};
use crate::checkpoint::Checkpoint;
use crate::config::{Ablation, Config, ModelConfig};
use crate::data::{read_skel, sample_clip, batch_tensor, write_synth_dataset, Manifest, Split, SynthOptions};
use crate::error::{Error, Result};
use crate::graph::SkeletonGraph;
use crate::layers::ForwardCtx;
use crate::model::{model_gradcheck, Slgtformer};
use crate::rng::Rng;
use crate::spatial::write_attention_trace;
use crate::tensor::{gradcheck::GradCheckConfig, no_grad};
use crate::train::{evaluate, prepare, ranking, TrainOptions, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "slgt", about = "Skeleton sequence transformer: train, evaluate and inspect")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset manifest (train, eval) or a SKEL1 file (infer).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Checkpoint to evaluate, infer with, or resume training from.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Overrides the model and training seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (train, synth) or report file (bench, gradcheck).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Disable a component; repeatable.
    #[arg(long, global = true, value_enum)]
    pub ablate: Vec<Ablation>,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Eq)]
pub enum Command {
    /// Train on the manifest's train split, evaluating on its test split.
    Train,
    /// Top-1 / top-5 of a checkpoint on the manifest's test split.
    Eval,
    /// Top-5 classes with probabilities for one SKEL1 file.
    Infer {
        /// Also write the spatial attention maps to this trace file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Finite-difference check of every parameter gradient.
    Gradcheck,
    /// Attention scaling benchmark.
    Bench,
    /// Write a synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
    },
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match run(&cli, &mut std::io::stdout()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_VALIDATION
    }
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn load_config(cli: &Cli, default_model: ModelConfig) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config { model: default_model, ..Config::default() },
    };
    if let Some(s) = cli.seed {
        cfg.model.seed = s;
        cfg.train.seed = s;
        cfg.bench.seed = s;
    }
    for &a in &cli.ablate {
        if !cfg.model.ablate.contains(&a) {
            cfg.model.ablate.push(a);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_graph(cfg: &Config) -> Result<SkeletonGraph> {
    match &cfg.graph {
        Some(p) => SkeletonGraph::load(p),
        None => Ok(SkeletonGraph::builtin_slgt27()),
    }
}

/// Model, graph and class names stored in a checkpoint written by `train`.
fn model_from_checkpoint(ck: &Checkpoint) -> Result<(Slgtformer, Vec<String>)> {
    let cfg = Config::parse(ck.meta("config")?)?;
    let graph = SkeletonGraph::parse(ck.meta("graph")?)?;
    let classes = ck.meta.get("classes").map(|c| c.lines().map(str::to_string).collect()).unwrap_or_default();
    Ok((Slgtformer::new(cfg.model, graph)?, classes))
}

fn run(cli: &Cli, out: &mut impl std::io::Write) -> Result<i32> {
    let w = |out: &mut dyn std::io::Write, s: String| writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e));
    match &cli.command {
        &Command::Synth { classes, per_class } => {
            let dir = required(&cli.out, "out")?;
            let opts = SynthOptions { num_classes: classes, samples_per_class: per_class, seed: cli.seed.unwrap_or(0), ..SynthOptions::default() };
            let m = write_synth_dataset(dir, &opts)?;
            w(out, format!("wrote {} samples in {} classes to {}", m.samples.len(), m.num_classes(), dir.display()))?;
        }
        Command::Train => {
            let cfg = load_config(cli, ModelConfig::default())?;
            let manifest = Manifest::load(required(&cli.data, "data")?)?;
            let mut cfg = cfg;
            if manifest.num_classes() != cfg.model.num_classes {
                if cli.config.is_some() {
                    return Err(Error::Config(format!(
                        "config has {} classes, dataset {}",
                        cfg.model.num_classes,
                        manifest.num_classes()
                    )));
                }
                cfg.model.num_classes = manifest.num_classes();
            }
            let graph = load_graph(&cfg)?;
            let model = Slgtformer::new(cfg.model.clone(), graph.clone())?;
            let train = prepare(&model, manifest.load_split(Split::Train)?)?;
            let test = prepare(&model, manifest.load_split(Split::Test)?)?;
            let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("run"));
            let resume = cli.checkpoint.clone();
            let trainer = Trainer::new(&model, cfg.train.clone(), cfg.augment.clone())?;
            let stored = Config { graph: None, ..cfg.clone() };
            let opts = TrainOptions { out_dir: out_dir.clone(), resume, config_toml: stored.to_toml() };
            w(out, format!("training {} parameters on {} samples ({} held out)", model.count_params(), train.len(), test.len()))?;
            let outcome = trainer.run(&train, &test, &opts, |r| println!("{r}"))?;
            // attach graph and class names so eval and infer are self-contained
            for name in [BEST_CHECKPOINT, LAST_CHECKPOINT] {
                let path = out_dir.join(name);
                let mut ck = Checkpoint::load(&path)?;
                ck.set_meta("graph", graph.to_text());
                ck.set_meta("classes", manifest.classes.join("\n"));
                ck.save(&path)?;
            }
            w(out, format!("done after {} epochs; checkpoints in {}", outcome.epochs_run, out_dir.display()))?;
        }
        Command::Eval => {
            let ck = Checkpoint::load(required(&cli.checkpoint, "checkpoint")?)?;
            let (model, _) = model_from_checkpoint(&ck)?;
            let params = ck.params(model.param_specs())?;
            let manifest = Manifest::load(required(&cli.data, "data")?)?;
            if manifest.num_classes() != model.config().num_classes {
                return Err(Error::Config(format!(
                    "checkpoint has {} classes, dataset {}",
                    model.config().num_classes,
                    manifest.num_classes()
                )));
            }
            let mut seqs = manifest.load_split(Split::Test)?;
            if seqs.is_empty() {
                seqs = manifest.load_split(Split::Train)?;
            }
            let seqs = prepare(&model, seqs)?;
            let r = evaluate(&model, &params, &seqs, 8)?;
            w(out, format!("eval samples={} top1={:.4} top5={:.4} loss={:.6}", seqs.len(), r.top1, r.top5, r.loss))?;
        }
        Command::Infer { trace } => {
            let ck = Checkpoint::load(required(&cli.checkpoint, "checkpoint")?)?;
            let (model, names) = model_from_checkpoint(&ck)?;
            let params = ck.params(model.param_specs())?;
            let mut seq = read_skel(required(&cli.data, "data")?)?;
            // the file's own label is ignored here
            seq.label = 0;
            let seq = prepare(&model, vec![seq])?.remove(0);
            let _g = no_grad();
            let clip = sample_clip(&seq, false, &mut Rng::new(0))?;
            let ctx = if trace.is_some() { ForwardCtx::eval().with_trace() } else { ForwardCtx::eval() };
            let logits = model.forward(&batch_tensor(&[&clip])?, &params, &ctx)?;
            if let Some(p) = trace {
                write_attention_trace(p, &ctx.take_trace())?;
            }
            let probs = logits.softmax(-1)?;
            for (rank, c) in ranking(probs.data()).into_iter().take(5).enumerate() {
                let name = names.get(c).cloned().unwrap_or_else(|| format!("class{c}"));
                w(out, format!("{} class={c} name={name} p={:.6}", rank + 1, probs.data()[c]))?;
            }
        }
        Command::Gradcheck => {
            let cfg = load_config(cli, ModelConfig::tiny())?;
            let graph = match cfg.graph {
                Some(_) => load_graph(&cfg)?,
                None => SkeletonGraph::path(cfg.model.joints)?,
            };
            let model = Slgtformer::new(cfg.model, graph)?;
            let report = model_gradcheck(&model, &GradCheckConfig::default())?;
            let mut lines = Vec::new();
            for p in &report.params {
                lines.push(format!("param {} numel={} max_rel_err={:.3e}", p.name, p.numel, p.max_rel_err));
            }
            let verdict = if report.passed() { "PASS" } else { "FAIL" };
            lines.push(format!("{verdict}, max rel err {:.3e} < {:.0e}: {}", report.max_rel_err(), report.tolerance, report.passed()));
            if let Some(p) = &cli.out {
                std::fs::write(p, lines.join("\n") + "\n").map_err(|e| Error::io(p, e))?;
            }
            for l in lines {
                w(out, l)?;
            }
            if !report.passed() {
                return Ok(EXIT_NUMERIC);
            }
        }
        Command::Bench => {
            let cfg = load_config(cli, ModelConfig::default())?;
            let mut report = String::new();
            let records = complexity_bench(&cfg.bench, |r| {
                println!("{r}");
                report += &format!("{r}\n");
            })?;
            for mech in ["lta", "gsta", "ttsa", "vanilla"] {
                for (t, r) in doubling_ratios(&records, mech) {
                    w(out, format!("ratio mechanism={mech} T={t} doubling={r:.3}"))?;
                }
            }
            if let Some(p) = &cli.out {
                std::fs::write(p, report).map_err(|e| Error::io(p, e))?;
            }
        }
    }
    Ok(EXIT_OK)
}
