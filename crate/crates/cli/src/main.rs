//! Command-line front end: training, evaluation, inference, synthetic data,
//! attention statistics and gradient checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acnet_core::data::augment::{normalize, NormStats};
use acnet_core::data::io::{load_dataset, load_depth, load_rgb, save_dataset, save_label, save_label_color};
use acnet_core::data::synth::synth_generate;
use acnet_core::data::{make_batch, Dataset, LabelMap, Sample};
use acnet_core::gradsuite::run_suite;
use acnet_core::model::Variant;
use acnet_core::train::config::parse_synth_spec;
use acnet_core::train::{attn_stats, evaluate, log_csv, norm_stats_for, train, RunConfig, TrainState};
use acnet_tensor::gradcheck::GradCheckConfig;
use acnet_tensor::BnMode;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "acnet", version, about = "Three-branch RGBD segmentation with attention fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct DataSource {
    /// Dataset root with rgb/, depth/ and label/ PNG folders.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Synthetic-data spec file; scenes are generated in memory.
    #[arg(long)]
    synth: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    Model1,
    Model2,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::Model1 => Variant::Model1,
            VariantArg::Model2 => Variant::Model2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Eval,
    Train,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints plus a per-epoch loss log.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataSource,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Continue from a checkpoint using its stored configuration.
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
    },
    /// Per-class IoU, mIoU and pixel accuracy of a checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataSource,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Segment one RGBD pair into a class-index PNG and a color PNG.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Write a synthetic dataset in the on-disk dataset layout.
    SynthData {
        #[command(flatten)]
        common: Common,
        /// Spec file; defaults to the `synth.*` keys of the configuration.
        #[arg(long)]
        synth: Option<PathBuf>,
    },
    /// Attention-weight statistics of every ACM over a dataset.
    AttnStats {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataSource,
        #[arg(long)]
        ckpt: PathBuf,
        /// Batch-norm behavior while collecting weights.
        #[arg(long, value_enum, default_value = "eval")]
        mode: ModeArg,
    },
    /// Finite-difference check of every differentiable operation.
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Number of random inputs per operation.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// The dataset and whether it is synthetic.
fn load_data(src: &DataSource) -> Result<(Dataset, bool)> {
    match (&src.dataset, &src.synth) {
        (Some(dir), _) => Ok((load_dataset(dir)?, false)),
        (None, Some(spec)) => {
            let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec = parse_synth_spec(&text).with_context(|| spec.display().to_string())?;
            Ok((synth_generate(&spec)?, true))
        }
        (None, None) => bail!("either --dataset or --synth is required"),
    }
}

fn cmd_train(common: &Common, data: &DataSource, variant: Option<VariantArg>, resume: Option<&Path>) -> Result<()> {
    prepare_out(&common.out)?;
    let (ds, synthetic) = load_data(data)?;
    let mut state = match resume {
        Some(path) => {
            let state = TrainState::<f32>::load(path).with_context(|| format!("loading {}", path.display()))?;
            if common.seed.is_some() || variant.is_some() {
                bail!("--seed and --variant cannot change a resumed run");
            }
            state
        }
        None => {
            let mut cfg = load_config(common)?;
            if let Some(v) = variant {
                cfg.model.variant = v.into();
            }
            let norm = cfg.norm.apply(norm_stats_for(&ds, synthetic));
            TrainState::new(cfg.model, cfg.train, cfg.augment, norm)?
        }
    };
    let total = state.train.epochs;
    let every = state.train.checkpoint_every;
    let out = common.out.clone();
    train(&mut state, &ds, |s, e| {
        eprintln!("epoch {}/{} lr {:.6} loss {:.6}", e.epoch, total, e.lr, e.loss);
        if every > 0 && e.epoch % every == 0 && e.epoch < total {
            s.save(&out.join(format!("epoch_{:04}.acnt", e.epoch)))?;
        }
        Ok(())
    })?;
    state.save(&common.out.join("checkpoint.acnt"))?;
    write(&common.out.join("train_log.csv"), &log_csv(&state.log))?;
    Ok(())
}

fn cmd_eval(common: &Common, data: &DataSource, ckpt: &Path) -> Result<()> {
    prepare_out(&common.out)?;
    let state = TrainState::<f32>::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let (ds, _) = load_data(data)?;
    let cm = evaluate(&state.model, &ds, &state.norm, state.train.focal.ignore_index)?;
    let csv = cm.to_csv()?;
    write(&common.out.join("metrics.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_infer(common: &Common, rgb: &Path, depth: &Path, ckpt: &Path) -> Result<()> {
    prepare_out(&common.out)?;
    let state = TrainState::<f32>::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let rgb = load_rgb(rgb)?;
    let depth = load_depth(depth)?;
    let blank = LabelMap::filled(rgb.height, rgb.width, 1, 0);
    let sample = Sample::new(rgb, depth, blank)?;
    let norm: &NormStats = &state.norm;
    let batch = make_batch::<f32>(&[&normalize(&sample, norm)])?;
    let pred = state.model.predict(&batch.rgb, &batch.depth)?;
    save_label(&common.out.join("pred.png"), &pred[0])?;
    save_label_color(&common.out.join("pred_color.png"), &pred[0])?;
    Ok(())
}

fn cmd_synth(common: &Common, spec: Option<&Path>) -> Result<()> {
    let mut synth = match spec {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_synth_spec(&text).with_context(|| path.display().to_string())?
        }
        None => load_config(common)?.synth,
    };
    if let Some(seed) = common.seed {
        synth.seed = seed;
    }
    let ds = synth_generate(&synth)?;
    prepare_out(&common.out)?;
    save_dataset(&common.out, &ds)?;
    eprintln!("wrote {} scenes to {}", ds.len(), common.out.display());
    Ok(())
}

fn cmd_attn(common: &Common, data: &DataSource, ckpt: &Path, mode: ModeArg) -> Result<()> {
    prepare_out(&common.out)?;
    let state = TrainState::<f32>::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let (ds, _) = load_data(data)?;
    let mode = match mode {
        ModeArg::Eval => BnMode::Eval,
        ModeArg::Train => BnMode::Train,
    };
    let report = attn_stats(&state.model, &ds, &state.norm, mode)?;
    write(&common.out.join("attn_stats.csv"), &report.to_csv())?;
    write(&common.out.join("attn_weights.csv"), &report.dump_csv())?;
    print!("{}", report.to_csv());
    Ok(())
}

fn cmd_grad_check(common: &Common, seeds: u64) -> Result<bool> {
    prepare_out(&common.out)?;
    let base = common.seed.unwrap_or(0);
    let seeds: Vec<u64> = (base..base + seeds).collect();
    let entries = run_suite(&seeds, GradCheckConfig::default())?;
    let mut csv = String::from("op,seed,max_rel_err,passed\n");
    for e in &entries {
        csv.push_str(&format!("{},{},{:e},{}\n", e.op, e.seed, e.report.max_rel_err(), e.report.passed()));
    }
    write(&common.out.join("grad_check.csv"), &csv)?;
    let failed: Vec<_> = entries.iter().filter(|e| !e.report.passed()).collect();
    for e in &failed {
        eprintln!("FAIL {} seed {} max rel err {:e}", e.op, e.seed, e.report.max_rel_err());
    }
    eprintln!("{} checks, {} failed", entries.len(), failed.len());
    Ok(failed.is_empty())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train {
            common,
            data,
            variant,
            resume,
        } => cmd_train(&common, &data, variant, resume.as_deref())?,
        Command::Eval { common, data, ckpt } => cmd_eval(&common, &data, &ckpt)?,
        Command::Infer { common, rgb, depth, ckpt } => cmd_infer(&common, &rgb, &depth, &ckpt)?,
        Command::SynthData { common, synth } => cmd_synth(&common, synth.as_deref())?,
        Command::AttnStats {
            common,
            data,
            ckpt,
            mode,
        } => cmd_attn(&common, &data, &ckpt, mode)?,
        Command::GradCheck { common, seeds } => return cmd_grad_check(&common, seeds),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
