//! Command-line front end for the experiment pipeline.
//!
//! Every subcommand maps onto one pipeline stage and operates on a cohort
//! directory described by a TOML config (`--config`) or a builtin preset
//! (`--preset` + `--output`). Stages are idempotent: re-running one with
//! the same config and seed rewrites identical artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use aelle_core::classify::{ClassifierKind, ClassifierSpec, Orientation};
use aelle_core::pipeline::{self, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "aelle",
    version,
    about = "Lyapunov spectra of recurrent networks, autoencoder latents, \
             and accuracy classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the variant cohort (variants.jsonl).
    GenVariants(StageArgs),
    /// Train every variant and snapshot parameters (losses.jsonl, checkpoints/).
    TrainVariants(StageArgs),
    /// Estimate a Lyapunov spectrum per snapshot (spectra.jsonl).
    ComputeLe(StageArgs),
    /// Train the spectrum autoencoder (aelle/, splits.json).
    TrainAe(StageArgs),
    /// Fit the latent principal-component embedding (embedding.json).
    Embed(StageArgs),
    /// Fit one classifier on train+val and score it on test.
    Classify(ClassifyArgs),
    /// Compare all classifier families on the test split (comparison.csv/.txt).
    Compare(StageArgs),
    /// Export per-variant latent coordinates for plotting (plot_data.csv).
    ExportPlotData(StageArgs),
}

/// Options shared by every stage.
#[derive(Args)]
struct StageArgs {
    /// TOML experiment config.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Builtin config: target-learning, char-rnn, smnist, or mini
    /// (requires --output).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Cohort directory; overrides the config's `output`.
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores, or AELLE_THREADS).
    #[arg(long, conflicts_with = "sequential")]
    threads: Option<usize>,
    /// Run on a single thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// One of: pc1-median, pc1-fixed, multi-pc, linear-regression,
    /// le-mean, le-max, le-pca, loss-at-epoch.
    #[arg(long)]
    kind: String,
    /// Decision threshold for `--kind pc1-fixed`.
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<f64>,
    /// Latent subspace dimension for `--kind multi-pc`.
    #[arg(long, value_name = "D")]
    subspace_d: Option<usize>,
    /// `below` or `above` (which side of the cut counts as high accuracy);
    /// omit to pick the better side on the fit split.
    #[arg(long)]
    orientation: Option<String>,
}

fn resolve_config(args: &StageArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), None) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        (None, Some(name)) => {
            let output = args
                .output
                .clone()
                .context("--preset needs --output to place the cohort")?;
            ExperimentConfig::preset(name, output)?
        }
        (None, None) => bail!("provide --config FILE or --preset NAME"),
        (Some(_), Some(_)) => unreachable!("clap rejects --config with --preset"),
    };
    if let Some(output) = &args.output {
        cfg.output = output.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_kind(args: &ClassifyArgs) -> Result<ClassifierKind> {
    let kind = match args.kind.as_str() {
        "pc1-median" => ClassifierKind::Pc1Median,
        "pc1-fixed" => {
            ClassifierKind::Pc1FixedThreshold(args.tau.context("--kind pc1-fixed needs --tau")?)
        }
        "multi-pc" => ClassifierKind::MultiPcSubspace(
            args.subspace_d
                .context("--kind multi-pc needs --subspace-d")?,
        ),
        "linear-regression" => ClassifierKind::LinearRegression,
        "le-mean" => ClassifierKind::LeMeanMedian,
        "le-max" => ClassifierKind::LeMaxMedian,
        "le-pca" => ClassifierKind::LePcaMedian,
        "loss-at-epoch" => ClassifierKind::LossAtEpochThreshold,
        other => bail!(
            "unknown --kind `{other}`; expected pc1-median, pc1-fixed, multi-pc, \
             linear-regression, le-mean, le-max, le-pca, or loss-at-epoch"
        ),
    };
    if args.tau.is_some() && !matches!(kind, ClassifierKind::Pc1FixedThreshold(_)) {
        bail!("--tau only applies to --kind pc1-fixed");
    }
    if args.subspace_d.is_some() && !matches!(kind, ClassifierKind::MultiPcSubspace(_)) {
        bail!("--subspace-d only applies to --kind multi-pc");
    }
    Ok(kind)
}

fn parse_orientation(raw: Option<&str>) -> Result<Option<Orientation>> {
    match raw {
        None => Ok(None),
        Some("below") => Ok(Some(Orientation::BelowIsPositive)),
        Some("above") => Ok(Some(Orientation::AboveIsPositive)),
        Some(other) => bail!("unknown --orientation `{other}`; expected below or above"),
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let stage_args = match &cli.command {
        Command::GenVariants(a)
        | Command::TrainVariants(a)
        | Command::ComputeLe(a)
        | Command::TrainAe(a)
        | Command::Embed(a)
        | Command::Compare(a)
        | Command::ExportPlotData(a) => a,
        Command::Classify(c) => &c.stage,
    };
    let cfg = resolve_config(stage_args)?;
    let workers = pipeline::configure_threads(stage_args.threads, stage_args.sequential)?;
    let root = cfg.output.clone();

    match &cli.command {
        Command::GenVariants(_) => {
            let variants = pipeline::stage_gen_variants(&cfg)?;
            println!(
                "gen-variants: wrote {} variants to {} ({} workers)",
                variants.len(),
                root.display(),
                workers
            );
        }
        Command::TrainVariants(_) => {
            let records = pipeline::stage_train_variants(&cfg)?;
            let failed = records.iter().filter(|r| r.failed).count();
            println!(
                "train-variants: trained {} variants ({failed} diverged)",
                records.len()
            );
        }
        Command::ComputeLe(_) => {
            let records = pipeline::stage_compute_le(&cfg)?;
            println!(
                "compute-le: wrote {} spectra across fractions {:?}",
                records.len(),
                cfg.le.fractions
            );
        }
        Command::TrainAe(_) => {
            let model = pipeline::stage_train_ae(&cfg)?;
            println!(
                "train-ae: autoencoder maps {}-step spectra to {} latent units",
                model.input_len(),
                model.latent_dim()
            );
        }
        Command::Embed(_) => {
            let embedding = pipeline::stage_embed(&cfg)?;
            let shown = embedding
                .explained
                .iter()
                .take(3)
                .cloned()
                .collect::<Vec<_>>();
            println!(
                "embed: {} principal components; leading explained variance {:?}",
                embedding.dim(),
                shown
            );
        }
        Command::Classify(c) => {
            let spec = ClassifierSpec {
                kind: parse_kind(c)?,
                orientation: parse_orientation(c.orientation.as_deref())?,
            };
            let artifact = pipeline::stage_classify(&cfg, &spec)?;
            println!(
                "classify {} at fraction {}: precision {:.3} recall {:.3} f1 {:.3} \
                 (fit {}, test {}{})",
                artifact.kind,
                artifact.training_fraction,
                artifact.report.precision,
                artifact.report.recall,
                artifact.report.f1,
                artifact.train_size,
                artifact.test_size,
                if artifact.degenerate {
                    "; degenerate fit"
                } else {
                    ""
                }
            );
        }
        Command::Compare(_) => {
            let table = pipeline::stage_compare(&cfg)?;
            print!("{}", table.to_text());
            println!(
                "compare: wrote {} and {}",
                pipeline::comparison_csv_path(&root).display(),
                pipeline::comparison_txt_path(&root).display()
            );
        }
        Command::ExportPlotData(_) => {
            let path = pipeline::stage_export_plot_data(&cfg)?;
            println!("export-plot-data: wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
