//! Staged experiment pipeline over a cohort directory.
//!
//! Eight stages mirror the command-line verbs: generate variants, train
//! them, compute Lyapunov spectra, train the autoencoder, fit the latent
//! embedding, run one classifier, compare the classifier families, and
//! export plotting data. Each stage reads its inputs from the cohort
//! directory and rewrites only its own outputs, so any stage can be re-run
//! in isolation; with a fixed config and seed the artifacts come out
//! byte-identical, whatever the worker count.

pub mod config;

pub use config::{
    AeSection, ClassifySection, DataSection, ExperimentConfig, GridSection, LeSection,
    SplitsSection, TrainSection, ALLOWED_FRACTIONS,
};

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::aelle::{ae_train, pca_fit, pca_project, AeConfig, AeModel, Embedding};
use crate::cells::{init_cell, Cell, DynamicalMap};
use crate::classify::{
    compare_suite, evaluate, fit_classifier, ClassifierKind, ClassifierSpec, ComparisonTable,
    EvalReport, LabeledSample, Orientation, SuiteConfig,
};
use crate::data::checkpoint::sidecar_path;
use crate::data::{
    gen_four_sine, load_mnist_idx, load_text_corpus, CohortStore, FourSineParams, LossRecord,
    Variant,
};
use crate::error::{CoreError, Result};
use crate::lyapunov::{
    compute_le, interpolate_spectrum, spectrum_stats, InputBatch, LEConfig, RecordMeta,
    SpectrumRecord,
};
use crate::training::{
    bptt_train, cap_loss, combine, force_train_in_place, generate_variants, mix64, ForceConfig,
    SupervisedSet, SupervisedTrainConfig, TrainedModel, VariantGrid,
};
use crate::Task;

/// Environment variable consulted when no explicit worker count is given.
pub const THREADS_ENV: &str = "AELLE_THREADS";

/// Resolve the worker count and configure the global thread pool.
///
/// Precedence: `sequential`, then `threads`, then [`THREADS_ENV`], then the
/// scheduler default. Artifacts never depend on the worker count — every
/// parallel reduction in this crate runs in a fixed order — so this is a
/// scheduling knob, not a correctness one; if a pool already exists the
/// resolved count is returned without rebuilding it.
pub fn configure_threads(threads: Option<usize>, sequential: bool) -> Result<usize> {
    let resolved = if sequential {
        1
    } else if let Some(t) = threads {
        if t == 0 {
            return Err(CoreError::Config("threads must be >= 1".into()));
        }
        t
    } else if let Ok(raw) = std::env::var(THREADS_ENV) {
        match raw.trim().parse::<usize>() {
            Ok(t) if t >= 1 => t,
            _ => {
                return Err(CoreError::Config(format!(
                    "{THREADS_ENV} must be a positive integer, got `{raw}`"
                )))
            }
        }
    } else {
        return Ok(rayon::current_num_threads());
    };
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(resolved)
        .build_global();
    Ok(resolved)
}

/// Stamp written to `manifest.json` when a cohort directory is first used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub tool_version: String,
}

pub fn manifest_path(root: &Path) -> PathBuf {
    root.join("manifest.json")
}

pub fn splits_path(root: &Path) -> PathBuf {
    root.join("splits.json")
}

pub fn embedding_path(root: &Path) -> PathBuf {
    root.join("embedding.json")
}

pub fn comparison_csv_path(root: &Path) -> PathBuf {
    root.join("comparison.csv")
}

pub fn comparison_txt_path(root: &Path) -> PathBuf {
    root.join("comparison.txt")
}

pub fn plot_data_path(root: &Path) -> PathBuf {
    root.join("plot_data.csv")
}

pub fn ae_base(root: &Path) -> PathBuf {
    root.join("aelle").join("model")
}

/// Variant-level split assignment, stratified by outcome label.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortSplits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| {
        CoreError::contract(format!("unserializable value for {}: {e}", path.display()))
    })?;
    std::fs::write(path, json + "\n").map_err(|e| CoreError::io(path.display().to_string(), e))
}

fn read_json<T: DeserializeOwned>(path: &Path, produced_by: &str) -> Result<T> {
    if !path.exists() {
        return Err(CoreError::MissingArtifact {
            path: path.display().to_string(),
            produced_by: produced_by.to_string(),
        });
    }
    let raw =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    serde_json::from_str(&raw).map_err(|e| CoreError::Format {
        path: path.display().to_string(),
        offset: 0,
        message: e.to_string(),
    })
}

/// Stable 64-bit word from a stage tag, for deriving per-stage seeds.
fn seed_word(tag: &str) -> u64 {
    tag.bytes()
        .fold(0x5eed_0000_0000_5eed, |acc, b| mix64(acc ^ u64::from(b)))
}

fn stage_seed(cfg: &ExperimentConfig, tag: &str) -> u64 {
    combine(cfg.seed, seed_word(tag))
}

/// Open the cohort directory, stamping it with the config hash on first
/// use and refusing configs that do not match an existing stamp.
fn prepare(cfg: &ExperimentConfig) -> Result<CohortStore> {
    cfg.validate()?;
    let store = CohortStore::open(&cfg.output)?;
    let hash = cfg.sha256()?;
    let path = manifest_path(store.root());
    if path.exists() {
        let existing: Manifest = read_json(&path, "gen-variants")?;
        if existing.config_sha256 != hash {
            return Err(CoreError::Config(format!(
                "output {} was produced with a different config \
                 (manifest hash {}, this config {}); point at a fresh directory \
                 or restore the original settings",
                store.root().display(),
                existing.config_sha256,
                hash
            )));
        }
    } else {
        write_json(
            &path,
            &Manifest {
                config_sha256: hash,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
            },
        )?;
    }
    Ok(store)
}

/// The task's example set, shared by training and spectrum estimation.
fn load_supervised(cfg: &ExperimentConfig) -> Result<SupervisedSet> {
    match cfg.task {
        Task::CharRnn => {
            let path = cfg
                .data
                .corpus_path
                .as_ref()
                .ok_or_else(|| CoreError::Config("char-rnn needs data.corpus-path".into()))?;
            let ds = load_text_corpus(path, cfg.data.char_seq_len)?;
            Ok(SupervisedSet::from_char(&ds))
        }
        Task::Smnist => {
            let (images, labels) = match (&cfg.data.images_path, &cfg.data.labels_path) {
                (Some(i), Some(l)) => (i, l),
                _ => {
                    return Err(CoreError::Config(
                        "smnist needs data.images-path and data.labels-path".into(),
                    ))
                }
            };
            let mut ds = load_mnist_idx(images, labels, cfg.data.downsample)?;
            if cfg.data.subset > 0 {
                ds.truncate(cfg.data.subset);
            }
            Ok(SupervisedSet::from_images(&ds))
        }
        Task::TargetLearning => Err(CoreError::contract(
            "target-learning has no supervised dataset",
        )),
    }
}

fn example_split(
    cfg: &ExperimentConfig,
    set: &SupervisedSet,
) -> Result<(SupervisedSet, SupervisedSet)> {
    let (train, val) = set.split(1.0 - cfg.train.val_fraction, stage_seed(cfg, "examples"))?;
    if train.is_empty() || val.is_empty() {
        return Err(CoreError::Config(format!(
            "dataset of {} examples leaves an empty side at val-fraction {}",
            set.len(),
            cfg.train.val_fraction
        )));
    }
    Ok((train, val))
}

/// Generate the variant cohort and write `variants.jsonl`.
pub fn stage_gen_variants(cfg: &ExperimentConfig) -> Result<Vec<Variant>> {
    let store = prepare(cfg)?;
    let input_size = match cfg.task {
        Task::TargetLearning => 1,
        Task::CharRnn | Task::Smnist => load_supervised(cfg)?.input_dim,
    };
    let grid = VariantGrid {
        task: cfg.task,
        architectures: cfg.grid.architectures.clone(),
        hidden_sizes: cfg.grid.hidden_sizes.clone(),
        init_params: cfg.grid.init_params.clone(),
        replicates_per_point: cfg.grid.replicates,
        input_size,
        master_seed: cfg.seed,
    };
    let variants = generate_variants(&grid)?;
    store.write_variants(&variants)?;
    Ok(variants)
}

/// Train every variant, write parameter snapshots for each fraction in
/// `le.fractions`, and record losses in `losses.jsonl`.
pub fn stage_train_variants(cfg: &ExperimentConfig) -> Result<Vec<LossRecord>> {
    let store = prepare(cfg)?;
    let variants = store.read_variants()?;
    let records = match cfg.task {
        Task::TargetLearning => train_reservoirs(cfg, &store, &variants)?,
        Task::CharRnn | Task::Smnist => train_supervised(cfg, &store, &variants)?,
    };
    store.write_losses(&records)?;
    Ok(records)
}

fn train_reservoirs(
    cfg: &ExperimentConfig,
    store: &CohortStore,
    variants: &[Variant],
) -> Result<Vec<LossRecord>> {
    let steps = cfg.train.force_train_steps + cfg.train.force_test_steps;
    let target = gen_four_sine(steps, &FourSineParams::default())?;
    variants
        .par_iter()
        .map(|v| {
            let mut cell = init_cell(&v.spec)?;
            cell.set_rank1_dt(cfg.train.force_dt)?;
            if cfg.le.fractions.contains(&0.0) {
                store.save_checkpoint(&v.variant_id, 0.0, &cell)?;
            }
            let fc = ForceConfig {
                n: v.spec.hidden_size,
                g: v.spec.init_param,
                dt: cfg.train.force_dt,
                rls_delta: cfg.train.force_rls_delta,
                train_steps: cfg.train.force_train_steps,
                test_steps: cfg.train.force_test_steps,
                update_stride: cfg.train.force_update_stride,
                seed: v.spec.seed,
            };
            let (test_error, diverged) = force_train_in_place(&mut cell, &fc, &target)?;
            store.save_checkpoint(&v.variant_id, 1.0, &cell)?;
            Ok(LossRecord {
                variant_id: v.variant_id.clone(),
                curve: vec![cap_loss(test_error)],
                target_loss: cap_loss(test_error),
                checkpoint_losses: Vec::new(),
                failed: diverged,
            })
        })
        .collect()
}

fn train_supervised(
    cfg: &ExperimentConfig,
    store: &CohortStore,
    variants: &[Variant],
) -> Result<Vec<LossRecord>> {
    let set = load_supervised(cfg)?;
    let (train_set, val_set) = example_split(cfg, &set)?;
    variants
        .par_iter()
        .map(|v| {
            let cell = init_cell(&v.spec)?;
            let tc = SupervisedTrainConfig {
                epochs: cfg.train.epochs,
                learning_rate: cfg.train.learning_rate,
                batch_size: cfg.train.batch_size,
                seq_len: cfg.train.truncation,
                optimizer: cfg.train.optimizer,
                gradient_clip: cfg.train.gradient_clip,
                checkpoint_fractions: cfg.le.fractions.clone(),
                seed: v.spec.seed,
            };
            let outcome = bptt_train(cell, &train_set, &val_set, &tc)?;
            for (fraction, model) in &outcome.checkpoints {
                model.save(&store.checkpoint_base(&v.variant_id, *fraction))?;
            }
            let final_loss = outcome
                .checkpoint_losses
                .iter()
                .find(|(f, _)| *f == 1.0)
                .map(|(_, l)| *l)
                .ok_or_else(|| CoreError::contract("training produced no final snapshot"))?;
            Ok(LossRecord {
                variant_id: v.variant_id.clone(),
                curve: outcome.loss_curve.iter().map(|&l| cap_loss(l)).collect(),
                target_loss: cap_loss(final_loss),
                checkpoint_losses: outcome
                    .checkpoint_losses
                    .iter()
                    .map(|&(f, l)| (f, cap_loss(l)))
                    .collect(),
                failed: outcome.failed,
            })
        })
        .collect()
}

/// Deterministic spectrum drive for supervised tasks: `n` dataset
/// sequences, tiled along time until `steps` columns.
fn cycled_batch(set: &SupervisedSet, n: usize, steps: usize, seed: u64) -> Result<InputBatch> {
    if set.is_empty() {
        return Err(CoreError::contract(
            "cannot build an input batch from an empty dataset",
        ));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sequences = (0..n)
        .map(|j| {
            let src = &set.examples[order[j % order.len()]].inputs;
            DMatrix::from_fn(set.input_dim, steps, |i, t| src[(i, t % src.ncols())])
        })
        .collect();
    InputBatch::from_sequences(sequences)
}

fn load_stage_cell(
    cfg: &ExperimentConfig,
    store: &CohortStore,
    variant_id: &str,
    fraction: f64,
) -> Result<Cell> {
    match cfg.task {
        Task::TargetLearning => store.load_checkpoint(variant_id, fraction),
        Task::CharRnn | Task::Smnist => {
            let base = store.checkpoint_base(variant_id, fraction);
            if !sidecar_path(&base).exists() {
                return Err(CoreError::MissingArtifact {
                    path: base.display().to_string(),
                    produced_by: "train-variants".to_string(),
                });
            }
            Ok(TrainedModel::load(&base)?.cell)
        }
    }
}

/// Estimate a Lyapunov spectrum for every (variant, fraction) snapshot and
/// write `spectra.jsonl`.
///
/// Every snapshot sees the same input batch so spectra are comparable
/// across the cohort. Variants whose training diverged are skipped: their
/// parameters are not meaningful dynamics.
pub fn stage_compute_le(cfg: &ExperimentConfig) -> Result<Vec<SpectrumRecord>> {
    let store = prepare(cfg)?;
    let variants = store.read_variants()?;
    let losses = store.read_losses()?;
    let loss_by_id: HashMap<&str, &LossRecord> =
        losses.iter().map(|r| (r.variant_id.as_str(), r)).collect();

    let steps = cfg.le.warmup + cfg.le.seq_len;
    let inputs = match cfg.task {
        Task::TargetLearning => InputBatch::random_uniform(
            cfg.le.n_sequences,
            1,
            steps,
            cfg.le.input_half_width,
            stage_seed(cfg, "le-input"),
        ),
        Task::CharRnn | Task::Smnist => {
            let set = load_supervised(cfg)?;
            let (train_set, _) = example_split(cfg, &set)?;
            cycled_batch(
                &train_set,
                cfg.le.n_sequences,
                steps,
                stage_seed(cfg, "le-input"),
            )?
        }
    };

    let mut jobs: Vec<(f64, &Variant, f64)> = Vec::new();
    for &fraction in &cfg.le.fractions {
        for v in &variants {
            let loss = loss_by_id.get(v.variant_id.as_str()).ok_or_else(|| {
                CoreError::contract(format!(
                    "no loss record for variant `{}`; re-run train-variants",
                    v.variant_id
                ))
            })?;
            if loss.failed {
                continue;
            }
            jobs.push((fraction, v, loss.target_loss));
        }
    }

    let records: Vec<SpectrumRecord> = jobs
        .par_iter()
        .map(|&(fraction, v, target_loss)| {
            let cell = load_stage_cell(cfg, &store, &v.variant_id, fraction)?;
            let k = if cfg.le.k_exponents == 0 {
                cell.state_dim()
            } else {
                cfg.le.k_exponents
            };
            let le_cfg = LEConfig {
                seq_len: cfg.le.seq_len,
                n_inputs: cfg.le.n_sequences,
                warmup: cfg.le.warmup,
                k_exponents: k,
            };
            let meta = RecordMeta {
                variant_id: v.variant_id.clone(),
                task: v.task,
                architecture: v.spec.architecture,
                hidden_size: v.spec.hidden_size,
                init_param: v.spec.init_param,
                training_fraction: fraction,
                target_loss,
            };
            compute_le(&cell, &inputs, &le_cfg, &meta)
        })
        .collect::<Result<Vec<_>>>()?;

    store.write_spectra(&records)?;
    store.validate()?;
    Ok(records)
}

/// Split the usable cohort into train/val/test buckets, stratified by
/// outcome label so median-based classifiers see balanced fitting data.
fn assign_splits(cfg: &ExperimentConfig, usable: &[&LossRecord]) -> Result<CohortSplits> {
    let losses: Vec<f64> = usable.iter().map(|r| r.target_loss).collect();
    let threshold = cfg.classify.label_rule.threshold(&losses);
    let mut out = CohortSplits::default();
    for class in [false, true] {
        let mut ids: Vec<&str> = usable
            .iter()
            .filter(|r| (r.target_loss < threshold) == class)
            .map(|r| r.variant_id.as_str())
            .collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(combine(stage_seed(cfg, "splits"), u64::from(class)));
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_train = ((cfg.splits.train * n as f64).round() as usize).min(n);
        let n_val = ((cfg.splits.val * n as f64).round() as usize).min(n - n_train);
        out.train
            .extend(ids[..n_train].iter().map(|s| s.to_string()));
        out.val
            .extend(ids[n_train..n_train + n_val].iter().map(|s| s.to_string()));
        out.test
            .extend(ids[n_train + n_val..].iter().map(|s| s.to_string()));
    }
    out.train.sort();
    out.val.sort();
    out.test.sort();
    if out.train.is_empty() || out.test.is_empty() {
        return Err(CoreError::Config(format!(
            "cohort of {} usable variants is too small for splits {}/{}/{}",
            usable.len(),
            cfg.splits.train,
            cfg.splits.val,
            cfg.splits.test
        )));
    }
    Ok(out)
}

fn resampled(record: &SpectrumRecord, len: usize) -> Result<SpectrumRecord> {
    let mut out = record.clone();
    out.spectrum = interpolate_spectrum(&record.spectrum, len)?;
    Ok(out)
}

/// Train the autoencoder on end-of-training spectra of the train split and
/// save it under `aelle/`; also writes the split assignment.
pub fn stage_train_ae(cfg: &ExperimentConfig) -> Result<AeModel> {
    let store = prepare(cfg)?;
    let losses = store.read_losses()?;
    let spectra = store.read_spectra()?;
    let usable: Vec<&LossRecord> = losses.iter().filter(|r| !r.failed).collect();
    let splits = assign_splits(cfg, &usable)?;
    write_json(&splits_path(store.root()), &splits)?;

    let input_len = spectra
        .iter()
        .map(|r| r.spectrum.len())
        .max()
        .ok_or_else(|| CoreError::contract("spectra file is empty"))?;
    let train_ids: HashSet<&str> = splits.train.iter().map(String::as_str).collect();
    let train_records: Vec<SpectrumRecord> = spectra
        .iter()
        .filter(|r| r.training_fraction == 1.0 && train_ids.contains(r.variant_id.as_str()))
        .map(|r| resampled(r, input_len))
        .collect::<Result<_>>()?;

    let mut ae_cfg = AeConfig::new(stage_seed(cfg, "autoencoder"));
    ae_cfg.layer_sizes = cfg.ae.layer_sizes.clone();
    ae_cfg.l_norm = cfg.ae.l_norm;
    ae_cfg.alpha_max = cfg.ae.alpha_max;
    ae_cfg.epochs = cfg.ae.epochs;
    ae_cfg.learning_rate = cfg.ae.learning_rate;
    ae_cfg.batch_size = cfg.ae.batch_size;
    let model = ae_train(&train_records, &ae_cfg)?;
    model.save(&ae_base(store.root()))?;
    Ok(model)
}

fn load_ae(store: &CohortStore) -> Result<AeModel> {
    let base = ae_base(store.root());
    if !sidecar_path(&base).exists() {
        return Err(CoreError::MissingArtifact {
            path: base.display().to_string(),
            produced_by: "train-ae".to_string(),
        });
    }
    AeModel::load(&base)
}

/// Fit the principal-component basis of the train split's latents and
/// write `embedding.json`.
pub fn stage_embed(cfg: &ExperimentConfig) -> Result<Embedding> {
    let store = prepare(cfg)?;
    let model = load_ae(&store)?;
    let splits: CohortSplits = read_json(&splits_path(store.root()), "train-ae")?;
    let spectra = store.read_spectra()?;
    let train_ids: HashSet<&str> = splits.train.iter().map(String::as_str).collect();
    let latents: Vec<DVector<f64>> = spectra
        .iter()
        .filter(|r| r.training_fraction == 1.0 && train_ids.contains(r.variant_id.as_str()))
        .map(|r| model.latent(&interpolate_spectrum(&r.spectrum, model.input_len())?))
        .collect::<Result<_>>()?;
    let embedding = pca_fit(&latents)?;
    write_json(&embedding_path(store.root()), &embedding)?;
    Ok(embedding)
}

/// Outcome of a single-classifier run, as written to `classify-<kind>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyArtifact {
    pub kind: String,
    /// Requested orientation; `None` means it was picked on the fit data.
    pub orientation: Option<Orientation>,
    pub training_fraction: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub degenerate: bool,
    pub report: EvalReport,
}

fn artifact_slug(name: &str) -> String {
    let slug: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '-'
            }
        })
        .collect();
    slug.trim_matches('-').to_string()
}

pub fn classify_artifact_path(root: &Path, kind: &ClassifierKind) -> PathBuf {
    root.join(format!("classify-{}.json", artifact_slug(&kind.name())))
}

/// Build labeled feature vectors for one classifier kind from the spectra
/// at a single training fraction, mirroring the comparison suite's feature
/// construction.
fn assemble_samples(
    cfg: &ExperimentConfig,
    store: &CohortStore,
    kind: &ClassifierKind,
    group: &[&SpectrumRecord],
    losses: &[LossRecord],
) -> Result<Vec<LabeledSample>> {
    let fraction = group[0].training_fraction;
    let target_losses: Vec<f64> = group.iter().map(|r| r.target_loss).collect();
    let threshold = cfg.classify.label_rule.threshold(&target_losses);

    let features: Vec<Vec<f64>> = match kind {
        ClassifierKind::LeMeanMedian | ClassifierKind::LeMaxMedian => {
            let common = group.iter().map(|r| r.spectrum.len()).max().unwrap_or(0);
            group
                .iter()
                .map(|r| {
                    let sp = interpolate_spectrum(&r.spectrum, common)?;
                    let (mean, max, _) = spectrum_stats(&sp)?;
                    Ok(vec![match kind {
                        ClassifierKind::LeMeanMedian => mean,
                        _ => max,
                    }])
                })
                .collect::<Result<_>>()?
        }
        ClassifierKind::LePcaMedian => {
            let common = group.iter().map(|r| r.spectrum.len()).max().unwrap_or(0);
            let vectors: Vec<DVector<f64>> = group
                .iter()
                .map(|r| {
                    Ok(DVector::from_vec(interpolate_spectrum(
                        &r.spectrum,
                        common,
                    )?))
                })
                .collect::<Result<_>>()?;
            let basis = pca_fit(&vectors)?;
            let k = basis.dim().min(10);
            vectors
                .iter()
                .map(|v| Ok(pca_project(&basis, v, k)?.as_slice().to_vec()))
                .collect::<Result<_>>()?
        }
        ClassifierKind::LossAtEpochThreshold => {
            let by_id: HashMap<&str, &LossRecord> =
                losses.iter().map(|r| (r.variant_id.as_str(), r)).collect();
            group
                .iter()
                .map(|r| {
                    by_id
                        .get(r.variant_id.as_str())
                        .and_then(|rec| {
                            rec.checkpoint_losses
                                .iter()
                                .find(|(f, _)| f.to_bits() == fraction.to_bits())
                                .map(|(_, l)| vec![*l])
                        })
                        .ok_or_else(|| {
                            CoreError::contract(format!(
                                "variant `{}` has no recorded loss at fraction {fraction}; \
                                 this classifier needs per-snapshot losses",
                                r.variant_id
                            ))
                        })
                })
                .collect::<Result<_>>()?
        }
        ClassifierKind::Pc1Median
        | ClassifierKind::Pc1FixedThreshold(_)
        | ClassifierKind::MultiPcSubspace(_)
        | ClassifierKind::LinearRegression => {
            let model = load_ae(store)?;
            let embedding: Embedding = read_json(&embedding_path(store.root()), "embed")?;
            let k = match kind {
                ClassifierKind::MultiPcSubspace(d) => {
                    if *d > embedding.dim() {
                        return Err(CoreError::Config(format!(
                            "subspace dimension {d} exceeds the {}-component latent embedding",
                            embedding.dim()
                        )));
                    }
                    *d
                }
                ClassifierKind::LinearRegression => embedding.dim().min(10),
                _ => 1,
            };
            group
                .iter()
                .map(|r| {
                    let sp = interpolate_spectrum(&r.spectrum, model.input_len())?;
                    let z = model.latent(&sp)?;
                    Ok(pca_project(&embedding, &z, k)?.as_slice().to_vec())
                })
                .collect::<Result<_>>()?
        }
    };

    Ok(group
        .iter()
        .zip(features)
        .map(|(r, f)| LabeledSample {
            variant_id: r.variant_id.clone(),
            features: f,
            label: r.target_loss < threshold,
            training_fraction: fraction,
        })
        .collect())
}

/// Fit one classifier on the train+val split and score it on the test
/// split; writes `classify-<kind>.json`.
pub fn stage_classify(cfg: &ExperimentConfig, spec: &ClassifierSpec) -> Result<ClassifyArtifact> {
    let store = prepare(cfg)?;
    spec.validate()?;
    let fraction = cfg.classify.fraction;
    let spectra = store.read_spectra()?;
    let losses = store.read_losses()?;
    let group: Vec<&SpectrumRecord> = spectra
        .iter()
        .filter(|r| r.training_fraction.to_bits() == fraction.to_bits())
        .collect();
    if group.is_empty() {
        return Err(CoreError::contract(format!(
            "no spectra at training fraction {fraction}; available fractions follow le.fractions"
        )));
    }
    let splits: CohortSplits = read_json(&splits_path(store.root()), "train-ae")?;
    let samples = assemble_samples(cfg, &store, &spec.kind, &group, &losses)?;

    let test_ids: HashSet<&str> = splits.test.iter().map(String::as_str).collect();
    let (test, train): (Vec<LabeledSample>, Vec<LabeledSample>) = samples
        .into_iter()
        .partition(|s| test_ids.contains(s.variant_id.as_str()));
    if train.is_empty() || test.is_empty() {
        return Err(CoreError::contract(format!(
            "split leaves {} fit and {} test samples at fraction {fraction}",
            train.len(),
            test.len()
        )));
    }
    let classifier = fit_classifier(spec, &train)?;
    let report = evaluate(&classifier, &test)?;
    let artifact = ClassifyArtifact {
        kind: spec.kind.name(),
        orientation: spec.orientation,
        training_fraction: fraction,
        train_size: train.len(),
        test_size: test.len(),
        degenerate: classifier.degenerate,
        report,
    };
    write_json(&classify_artifact_path(store.root(), &spec.kind), &artifact)?;
    Ok(artifact)
}

/// Run the full classifier comparison on the test split and write
/// `comparison.csv` / `comparison.txt`.
pub fn stage_compare(cfg: &ExperimentConfig) -> Result<ComparisonTable> {
    let store = prepare(cfg)?;
    let spectra = store.read_spectra()?;
    let losses = store.read_losses()?;
    let model = load_ae(&store)?;
    let embedding: Embedding = read_json(&embedding_path(store.root()), "embed")?;
    let splits: CohortSplits = read_json(&splits_path(store.root()), "train-ae")?;

    let epoch_losses: HashMap<String, Vec<(f64, f64)>> = losses
        .iter()
        .filter(|r| !r.checkpoint_losses.is_empty())
        .map(|r| (r.variant_id.clone(), r.checkpoint_losses.clone()))
        .collect();
    let suite = SuiteConfig {
        label_rule: cfg.classify.label_rule,
        train_fraction: cfg.classify.train_fraction,
        seed: stage_seed(cfg, "compare"),
        holdout: Some(splits.test.iter().cloned().collect()),
    };
    let table = compare_suite(
        &spectra,
        &model,
        Some(&embedding),
        if epoch_losses.is_empty() {
            None
        } else {
            Some(&epoch_losses)
        },
        &suite,
    )?;
    let csv = comparison_csv_path(store.root());
    std::fs::write(&csv, table.to_csv())
        .map_err(|e| CoreError::io(csv.display().to_string(), e))?;
    let txt = comparison_txt_path(store.root());
    std::fs::write(&txt, table.to_text())
        .map_err(|e| CoreError::io(txt.display().to_string(), e))?;
    Ok(table)
}

/// Export one row per spectrum with its first two latent principal
/// components, for external plotting. Returns the CSV path.
pub fn stage_export_plot_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let store = prepare(cfg)?;
    let spectra = store.read_spectra()?;
    let model = load_ae(&store)?;
    let embedding: Embedding = read_json(&embedding_path(store.root()), "embed")?;

    // Group by fraction so labels use each group's own threshold, exactly
    // as the classifier stages see them.
    let mut fractions: Vec<u64> = spectra
        .iter()
        .map(|r| r.training_fraction.to_bits())
        .collect();
    fractions.sort_unstable();
    fractions.dedup();

    let mut rows: Vec<String> = Vec::with_capacity(spectra.len());
    for bits in fractions {
        let mut group: Vec<&SpectrumRecord> = spectra
            .iter()
            .filter(|r| r.training_fraction.to_bits() == bits)
            .collect();
        group.sort_by(|a, b| a.variant_id.cmp(&b.variant_id));
        let losses: Vec<f64> = group.iter().map(|r| r.target_loss).collect();
        let threshold = cfg.classify.label_rule.threshold(&losses);
        let k = embedding.dim().min(2);
        for r in group {
            let sp = interpolate_spectrum(&r.spectrum, model.input_len())?;
            let z = model.latent(&sp)?;
            let p = pca_project(&embedding, &z, k)?;
            let pc1 = p[0];
            let pc2 = if k > 1 { p[1] } else { 0.0 };
            let label = u8::from(r.target_loss < threshold);
            rows.push(format!(
                "{},{:.6},{:.6},{:.6},{},{},{},{}",
                r.variant_id,
                pc1,
                pc2,
                r.target_loss,
                label,
                r.architecture,
                r.init_param,
                r.training_fraction
            ));
        }
    }
    let path = plot_data_path(store.root());
    let mut csv =
        String::from("variant_id,PC1,PC2,loss,label,architecture,init_param,training_fraction\n");
    csv.push_str(&rows.join("\n"));
    csv.push('\n');
    std::fs::write(&path, csv).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    Ok(path)
}

/// Run every stage in order. Returns the comparison table.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<ComparisonTable> {
    stage_gen_variants(cfg)?;
    stage_train_variants(cfg)?;
    stage_compute_le(cfg)?;
    stage_train_ae(cfg)?;
    stage_embed(cfg)?;
    let table = stage_compare(cfg)?;
    stage_export_plot_data(cfg)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini(dir: &Path) -> ExperimentConfig {
        ExperimentConfig::preset("mini", dir).unwrap()
    }

    /// A further-shrunk mini config for fast unit smoke tests.
    fn tiny(dir: &Path) -> ExperimentConfig {
        let mut cfg = mini(dir);
        cfg.grid.hidden_sizes = vec![16];
        cfg.train.force_train_steps = 800;
        cfg.train.force_test_steps = 200;
        cfg.le.seq_len = 200;
        cfg.le.n_sequences = 2;
        cfg.le.warmup = 30;
        cfg.ae.layer_sizes = vec![12, 6];
        cfg.ae.epochs = 40;
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn thread_resolution_honors_the_precedence_order() {
        assert_eq!(configure_threads(Some(3), true).unwrap(), 1);
        assert_eq!(configure_threads(Some(3), false).unwrap(), 3);
        assert!(configure_threads(Some(0), false).is_err());
        assert!(configure_threads(None, false).unwrap() >= 1);
    }

    #[test]
    fn stage_seeds_differ_by_tag_and_master_seed() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = mini(dir.path());
        let a = stage_seed(&cfg, "splits");
        let b = stage_seed(&cfg, "autoencoder");
        assert_ne!(a, b);
        cfg.seed += 1;
        assert_ne!(stage_seed(&cfg, "splits"), a);
    }

    #[test]
    fn manifest_rejects_a_changed_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        prepare(&cfg).unwrap();
        let mut other = cfg.clone();
        other.seed += 1;
        match prepare(&other).unwrap_err() {
            CoreError::Config(msg) => assert!(msg.contains("different config"), "{msg}"),
            e => panic!("unexpected error {e:?}"),
        }
        // The original config keeps working.
        prepare(&cfg).unwrap();
    }

    #[test]
    fn missing_upstream_artifacts_name_their_producer() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        match stage_train_variants(&cfg).unwrap_err() {
            CoreError::MissingArtifact { produced_by, .. } => {
                assert_eq!(produced_by, "gen-variants")
            }
            e => panic!("unexpected error {e:?}"),
        }
        match stage_compute_le(&cfg).unwrap_err() {
            CoreError::MissingArtifact { produced_by, .. } => {
                assert_eq!(produced_by, "gen-variants")
            }
            e => panic!("unexpected error {e:?}"),
        }
        stage_gen_variants(&cfg).unwrap();
        match stage_compute_le(&cfg).unwrap_err() {
            CoreError::MissingArtifact { produced_by, .. } => {
                assert_eq!(produced_by, "train-variants")
            }
            e => panic!("unexpected error {e:?}"),
        }
    }

    #[test]
    fn cycled_batch_tiles_examples_deterministically() {
        use crate::training::Example;
        let examples = (0..8)
            .map(|i| Example {
                inputs: DMatrix::from_fn(2, 4, |r, c| (i * 100 + r * 10 + c) as f64),
                target: i,
            })
            .collect();
        let set = SupervisedSet {
            examples,
            num_classes: 8,
            input_dim: 2,
        };
        let batch = cycled_batch(&set, 5, 10, 42).unwrap();
        assert_eq!(batch.len(), 5);
        assert_eq!(batch.input_dim(), 2);
        assert_eq!(batch.steps(), 10);
        // Tiling: column t equals source column t mod 4.
        let s0 = batch.sequence(0);
        for t in 0..10 {
            assert_eq!(s0.column(t), s0.column(t % 4), "t={t}");
        }
        let again = cycled_batch(&set, 5, 10, 42).unwrap();
        assert_eq!(again.sequence(3), batch.sequence(3));
        let other = cycled_batch(&set, 5, 10, 43).unwrap();
        assert!((0..5).any(|i| other.sequence(i) != batch.sequence(i)));
    }

    #[test]
    fn splits_are_disjoint_stratified_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = mini(dir.path());
        let records: Vec<LossRecord> = (0..40)
            .map(|i| LossRecord {
                variant_id: format!("v{i:02}"),
                curve: vec![],
                target_loss: if i % 2 == 0 { 0.1 } else { 2.0 },
                checkpoint_losses: vec![],
                failed: false,
            })
            .collect();
        let refs: Vec<&LossRecord> = records.iter().collect();
        let splits = assign_splits(&cfg, &refs).unwrap();
        assert_eq!(
            splits.train.len() + splits.val.len() + splits.test.len(),
            40
        );
        let all: HashSet<&String> = splits
            .train
            .iter()
            .chain(&splits.val)
            .chain(&splits.test)
            .collect();
        assert_eq!(all.len(), 40, "buckets overlap or drop ids");
        // Stratification: each bucket holds half evens (low loss) within 1.
        let low = |ids: &[String]| {
            ids.iter()
                .filter(|id| id[1..].parse::<usize>().unwrap() % 2 == 0)
                .count() as i64
        };
        assert!((low(&splits.train) - splits.train.len() as i64 / 2).abs() <= 1);
        assert!((low(&splits.test) - splits.test.len() as i64 / 2).abs() <= 1);
        assert_eq!(assign_splits(&cfg, &refs).unwrap(), splits);
    }

    #[test]
    fn artifact_slugs_stay_filesystem_safe() {
        assert_eq!(artifact_slug("pc1-median"), "pc1-median");
        assert_eq!(artifact_slug("pc1-threshold(-0.03)"), "pc1-threshold--0.03");
        assert_eq!(
            artifact_slug("multi-pc-subspace(d=2)"),
            "multi-pc-subspace-d-2"
        );
    }

    #[test]
    fn tiny_pipeline_runs_end_to_end_and_reruns_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let table = run_pipeline(&cfg).unwrap();
        assert!(table.rows.len() >= 4, "rows: {}", table.rows.len());

        let root = dir.path();
        for name in [
            "manifest.json",
            "variants.jsonl",
            "losses.jsonl",
            "spectra.jsonl",
            "splits.json",
            "embedding.json",
            "comparison.csv",
            "comparison.txt",
            "plot_data.csv",
        ] {
            assert!(root.join(name).exists(), "missing {name}");
        }

        // Reported rows cover the latent space and the spectrum baselines.
        let spaces: HashSet<&str> = table
            .rows
            .iter()
            .map(|r| r.feature_space.as_str())
            .collect();
        for space in ["aelle-pca", "le-mean", "le-max", "le-pca"] {
            assert!(spaces.contains(space), "missing space {space}");
        }

        // Plot data: header plus one row per spectrum record.
        let plot = std::fs::read_to_string(root.join("plot_data.csv")).unwrap();
        let lines: Vec<&str> = plot.lines().collect();
        assert_eq!(
            lines[0],
            "variant_id,PC1,PC2,loss,label,architecture,init_param,training_fraction"
        );
        let spectra = CohortStore::open(root).unwrap().read_spectra().unwrap();
        assert_eq!(lines.len(), spectra.len() + 1);

        // Single-classifier stage on the same cohort.
        let artifact =
            stage_classify(&cfg, &ClassifierSpec::auto(ClassifierKind::Pc1Median)).unwrap();
        assert!(root.join("classify-pc1-median.json").exists());
        assert_eq!(artifact.train_size + artifact.test_size, 30);

        // Re-running stages rewrites identical bytes.
        let before: Vec<Vec<u8>> = ["spectra.jsonl", "comparison.csv", "plot_data.csv"]
            .iter()
            .map(|n| std::fs::read(root.join(n)).unwrap())
            .collect();
        stage_compute_le(&cfg).unwrap();
        stage_compare(&cfg).unwrap();
        stage_export_plot_data(&cfg).unwrap();
        let after: Vec<Vec<u8>> = ["spectra.jsonl", "comparison.csv", "plot_data.csv"]
            .iter()
            .map(|n| std::fs::read(root.join(n)).unwrap())
            .collect();
        assert_eq!(before, after);
    }
}
