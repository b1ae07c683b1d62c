//! Classifier suite over spectra and latent embeddings: high- vs
//! low-accuracy variants from median splits, fixed thresholds, sign-pattern
//! subspaces, and least-squares regression, with a precision/recall/F1
//! evaluation harness and the cross-feature-space comparison table.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aelle::{pca_fit, pca_project, AeModel, Embedding};
use crate::error::{CoreError, Result};
use crate::lyapunov::{interpolate_spectrum, spectrum_stats, SpectrumRecord};

/// One observation for classification: a feature vector (raw spectrum, PC
/// coordinates, a scalar statistic, or an early training loss), the
/// high-accuracy label, and bookkeeping identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub variant_id: String,
    pub features: Vec<f64>,
    /// True = high accuracy (task loss below the cohort threshold).
    pub label: bool,
    pub training_fraction: f64,
}

/// Which side of a threshold counts as high accuracy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    BelowIsPositive,
    AboveIsPositive,
}

/// Subspace grid sizes supported by [`ClassifierKind::MultiPcSubspace`].
pub const SUBSPACE_DIMS: [usize; 4] = [1, 2, 4, 10];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    /// Median split on the first feature coordinate.
    Pc1Median,
    /// Fixed threshold on the first feature coordinate.
    Pc1FixedThreshold(f64),
    /// Majority-label cells over the 2^d sign patterns around per-feature
    /// medians of the first `d` coordinates.
    MultiPcSubspace(usize),
    /// Least squares onto {0, 1} labels, 0.5 decision threshold.
    LinearRegression,
    /// Median split on a spectrum-mean scalar feature.
    LeMeanMedian,
    /// Median split on a spectrum-max scalar feature.
    LeMaxMedian,
    /// Median split on PC1 of the raw-spectrum PCA.
    LePcaMedian,
    /// Median split on the validation loss at an early checkpoint.
    LossAtEpochThreshold,
}

impl ClassifierKind {
    pub fn name(&self) -> String {
        match self {
            ClassifierKind::Pc1Median => "pc1-median".to_string(),
            ClassifierKind::Pc1FixedThreshold(t) => format!("pc1-threshold({t})"),
            ClassifierKind::MultiPcSubspace(d) => format!("multi-pc-subspace(d={d})"),
            ClassifierKind::LinearRegression => "linear-regression".to_string(),
            ClassifierKind::LeMeanMedian => "le-mean-median".to_string(),
            ClassifierKind::LeMaxMedian => "le-max-median".to_string(),
            ClassifierKind::LePcaMedian => "le-pca-median".to_string(),
            ClassifierKind::LossAtEpochThreshold => "loss-at-epoch-threshold".to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    /// Fixed orientation, or `None` to pick the orientation that maximizes
    /// F1 on the training set (the informative side differs per task).
    pub orientation: Option<Orientation>,
}

impl ClassifierSpec {
    pub fn auto(kind: ClassifierKind) -> Self {
        ClassifierSpec {
            kind,
            orientation: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ClassifierKind::MultiPcSubspace(d) if !SUBSPACE_DIMS.contains(&d) => {
                Err(CoreError::contract(format!(
                    "subspace dimension must be one of {SUBSPACE_DIMS:?}, got {d}"
                )))
            }
            ClassifierKind::Pc1FixedThreshold(t) if !t.is_finite() => {
                Err(CoreError::contract("threshold must be finite"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum FittedRule {
    /// Positive iff strictly below (or above, per flag) the cut.
    Threshold {
        cut: f64,
        below_is_positive: bool,
    },
    /// `cuts[i]` is the median of coordinate `i`; `cells` maps the sign
    /// pattern (bit i set = coordinate i at-or-above its cut) to a label.
    Subspace {
        cuts: Vec<f64>,
        cells: Vec<bool>,
    },
    /// Positive iff `w·x + bias > 0.5`.
    Linear {
        w: DVector<f64>,
        bias: f64,
    },
    Constant(bool),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub spec: ClassifierSpec,
    rule: FittedRule,
    /// Set when the training set had one class and the classifier
    /// degenerated to a constant.
    pub degenerate: bool,
}

/// Median with the mean-of-middle-pair rule on even counts, via
/// selection rather than a full sort.
fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    let n = v.len();
    let (left, upper, _) = v.select_nth_unstable_by(n / 2, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = left.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

fn check_features(train: &[LabeledSample], min_len: usize) -> Result<()> {
    for s in train {
        if s.features.len() < min_len {
            return Err(CoreError::contract(format!(
                "sample {} carries {} features but the classifier needs {min_len}",
                s.variant_id,
                s.features.len()
            )));
        }
        if s.features.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::contract(format!(
                "sample {} carries non-finite features",
                s.variant_id
            )));
        }
    }
    Ok(())
}

fn threshold_prediction(x: f64, cut: f64, below_is_positive: bool) -> bool {
    // Strictly below the cut; the cut itself belongs to the other side.
    (x < cut) == below_is_positive
}

/// Pick the orientation maximizing training F1 (ties keep below-positive).
fn best_orientation(train: &[LabeledSample], cut: f64) -> bool {
    let f1_of = |below: bool| {
        let preds: Vec<bool> = train
            .iter()
            .map(|s| threshold_prediction(s.features[0], cut, below))
            .collect();
        counts_to_report(count_confusion(train, &preds)).f1
    };
    f1_of(true) >= f1_of(false)
}

/// Fit a classifier of the requested kind on a training set.
pub fn fit_classifier(spec: &ClassifierSpec, train: &[LabeledSample]) -> Result<Classifier> {
    spec.validate()?;
    if train.is_empty() {
        return Err(CoreError::contract("cannot fit on an empty training set"));
    }
    let positives = train.iter().filter(|s| s.label).count();
    if positives == 0 || positives == train.len() {
        // One-class training data: degenerate constant classifier.
        check_features(train, 1)?;
        return Ok(Classifier {
            spec: *spec,
            rule: FittedRule::Constant(positives > 0),
            degenerate: true,
        });
    }

    let rule = match spec.kind {
        ClassifierKind::Pc1Median
        | ClassifierKind::LeMeanMedian
        | ClassifierKind::LeMaxMedian
        | ClassifierKind::LePcaMedian
        | ClassifierKind::LossAtEpochThreshold => {
            check_features(train, 1)?;
            let xs: Vec<f64> = train.iter().map(|s| s.features[0]).collect();
            let cut = median(&xs);
            let below = match spec.orientation {
                Some(Orientation::BelowIsPositive) => true,
                Some(Orientation::AboveIsPositive) => false,
                None => best_orientation(train, cut),
            };
            FittedRule::Threshold {
                cut,
                below_is_positive: below,
            }
        }
        ClassifierKind::Pc1FixedThreshold(cut) => {
            check_features(train, 1)?;
            let below = match spec.orientation {
                Some(Orientation::BelowIsPositive) => true,
                Some(Orientation::AboveIsPositive) => false,
                None => best_orientation(train, cut),
            };
            FittedRule::Threshold {
                cut,
                below_is_positive: below,
            }
        }
        ClassifierKind::MultiPcSubspace(1) => {
            // A 2-cell grid is exactly a median split; delegating keeps the
            // two classifiers decision-identical by construction.
            check_features(train, 1)?;
            let xs: Vec<f64> = train.iter().map(|s| s.features[0]).collect();
            let cut = median(&xs);
            let below = best_orientation(train, cut);
            FittedRule::Subspace {
                cuts: vec![cut],
                cells: vec![below, !below],
            }
        }
        ClassifierKind::MultiPcSubspace(d) => {
            check_features(train, d)?;
            let cuts: Vec<f64> = (0..d)
                .map(|i| {
                    let xs: Vec<f64> = train.iter().map(|s| s.features[i]).collect();
                    median(&xs)
                })
                .collect();
            let mut pos = vec![0usize; 1 << d];
            let mut neg = vec![0usize; 1 << d];
            for s in train {
                let cell = cell_index(&s.features, &cuts);
                if s.label {
                    pos[cell] += 1;
                } else {
                    neg[cell] += 1;
                }
            }
            // Majority label per cell; empty or tied cells stay negative.
            let cells = pos.iter().zip(&neg).map(|(&p, &n)| p > n).collect();
            FittedRule::Subspace { cuts, cells }
        }
        ClassifierKind::LinearRegression => {
            let f = train[0].features.len();
            if f == 0 {
                return Err(CoreError::contract("linear regression needs features"));
            }
            check_features(train, f)?;
            if train.iter().any(|s| s.features.len() != f) {
                return Err(CoreError::contract(
                    "linear regression needs equal-length feature vectors",
                ));
            }
            let a = DMatrix::from_fn(train.len(), f + 1, |r, c| {
                if c < f {
                    train[r].features[c]
                } else {
                    1.0
                }
            });
            let b = DVector::from_fn(train.len(), |r, _| f64::from(train[r].label));
            let sol = a
                .svd(true, true)
                .solve(&b, 1e-12)
                .map_err(|e| CoreError::contract(format!("least squares failed: {e}")))?;
            FittedRule::Linear {
                w: sol.rows(0, f).into_owned(),
                bias: sol[f],
            }
        }
    };
    Ok(Classifier {
        spec: *spec,
        rule,
        degenerate: false,
    })
}

fn cell_index(features: &[f64], cuts: &[f64]) -> usize {
    let mut idx = 0;
    for (i, &cut) in cuts.iter().enumerate() {
        if features[i] >= cut {
            idx |= 1 << i;
        }
    }
    idx
}

/// Deterministic label for one sample.
pub fn predict(classifier: &Classifier, sample: &LabeledSample) -> Result<bool> {
    let need = match &classifier.rule {
        FittedRule::Threshold { .. } => 1,
        FittedRule::Subspace { cuts, .. } => cuts.len(),
        FittedRule::Linear { w, .. } => w.len(),
        FittedRule::Constant(_) => 0,
    };
    if sample.features.len() < need {
        return Err(CoreError::contract(format!(
            "sample {} carries {} features but the classifier needs {need}",
            sample.variant_id,
            sample.features.len()
        )));
    }
    Ok(match &classifier.rule {
        FittedRule::Threshold {
            cut,
            below_is_positive,
        } => threshold_prediction(sample.features[0], *cut, *below_is_positive),
        FittedRule::Subspace { cuts, cells } => cells[cell_index(&sample.features, cuts)],
        FittedRule::Linear { w, bias } => {
            let score: f64 = w
                .iter()
                .zip(&sample.features)
                .map(|(wi, xi)| wi * xi)
                .sum::<f64>()
                + bias;
            score > 0.5
        }
        FittedRule::Constant(label) => *label,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn count_confusion(samples: &[LabeledSample], preds: &[bool]) -> (usize, usize, usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    let mut tn = 0;
    let mut fn_ = 0;
    for (s, &p) in samples.iter().zip(preds) {
        match (p, s.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    (tp, fp, tn, fn_)
}

fn counts_to_report((tp, fp, tn, fn_): (usize, usize, usize, usize)) -> EvalReport {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    EvalReport {
        precision,
        recall,
        f1,
        tp,
        fp,
        tn,
        fn_,
    }
}

/// Confusion counts and derived metrics over a test set.
pub fn evaluate(classifier: &Classifier, test: &[LabeledSample]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(CoreError::contract("cannot evaluate on an empty test set"));
    }
    let preds: Vec<bool> = test
        .iter()
        .map(|s| predict(classifier, s))
        .collect::<Result<_>>()?;
    Ok(counts_to_report(count_confusion(test, &preds)))
}

// ---------------------------------------------------------------------------
// Comparison suite.

/// How high-accuracy labels are derived from task losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    /// Below the cohort median loss (strictly).
    MedianLoss,
    /// Below a fixed absolute loss (strictly).
    AbsoluteLoss(f64),
}

impl LabelRule {
    pub fn threshold(&self, losses: &[f64]) -> f64 {
        match self {
            LabelRule::MedianLoss => median(losses),
            LabelRule::AbsoluteLoss(t) => *t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub label_rule: LabelRule,
    /// Fraction of each group used for fitting; the rest is held out.
    /// Ignored when `holdout` pins the split explicitly.
    pub train_fraction: f64,
    pub seed: u64,
    /// Variant ids reserved for evaluation (e.g. the cohort test split);
    /// when set, everything else is the training side.
    pub holdout: Option<HashSet<String>>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            label_rule: LabelRule::MedianLoss,
            train_fraction: 0.8,
            seed: 0,
            holdout: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub feature_space: String,
    pub classifier: String,
    pub training_fraction: f64,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub notes: Vec<String>,
}

/// Reference F1 values from full-scale runs, for context in the footer.
const REFERENCE_FOOTER: &str = "full-scale reference F1 (context): smnist latent-pca 0.859 | \
     le-mean 0.609 | le-max 0.566 | le-pca 0.608; target-learning latent-pca 0.724 | \
     le-mean 0.705 | le-max 0.504 | le-pca 0.703";

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "feature_space,classifier,training_fraction,precision,recall,f1,tp,fp,tn,fn\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{},{},{},{}",
                r.feature_space,
                r.classifier,
                r.training_fraction,
                r.report.precision,
                r.report.recall,
                r.report.f1,
                r.report.tp,
                r.report.fp,
                r.report.tn,
                r.report.fn_
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let headers = [
            "feature_space",
            "classifier",
            "training_fraction",
            "precision",
            "recall",
            "f1",
            "tp",
            "fp",
            "tn",
            "fn",
        ];
        let cells: Vec<[String; 10]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.feature_space.clone(),
                    r.classifier.clone(),
                    format!("{}", r.training_fraction),
                    format!("{:.3}", r.report.precision),
                    format!("{:.3}", r.report.recall),
                    format!("{:.3}", r.report.f1),
                    format!("{}", r.report.tp),
                    format!("{}", r.report.fp),
                    format!("{}", r.report.tn),
                    format!("{}", r.report.fn_),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..10)
            .map(|i| {
                cells
                    .iter()
                    .map(|row| row[i].len())
                    .chain(std::iter::once(headers[i].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for (i, h) in headers.iter().enumerate() {
            let _ = write!(out, "{:w$}  ", h, w = widths[i]);
        }
        out.push('\n');
        for row in &cells {
            for (i, c) in row.iter().enumerate() {
                let _ = write!(out, "{:w$}  ", c, w = widths[i]);
            }
            out.push('\n');
        }
        for note in &self.notes {
            let _ = writeln!(out, "note: {note}");
        }
        let _ = writeln!(out, "{REFERENCE_FOOTER}");
        out
    }
}

/// Fit-and-evaluate every (feature space, classifier) pair per training
/// fraction present in the cohort.
///
/// Labels derive from `target_loss` (the final task loss) under the
/// configured rule, so early-checkpoint groups are scored on how well they
/// predict the final outcome. `epoch_losses` maps `variant_id` to its
/// `(training fraction, validation loss)` curve; each group uses the loss at
/// its own fraction. When the data is absent, loss-at-epoch rows are omitted
/// with a note.
pub fn compare_suite(
    records: &[SpectrumRecord],
    ae_model: &AeModel,
    latent_embedding: Option<&Embedding>,
    epoch_losses: Option<&HashMap<String, Vec<(f64, f64)>>>,
    config: &SuiteConfig,
) -> Result<ComparisonTable> {
    if records.is_empty() {
        return Err(CoreError::contract("comparison needs a non-empty cohort"));
    }
    if !(0.0 < config.train_fraction && config.train_fraction < 1.0) {
        return Err(CoreError::contract("train_fraction must lie in (0, 1)"));
    }
    let mut notes = Vec::new();

    // Group records by training fraction, deterministically ordered.
    let mut groups: Vec<(f64, Vec<&SpectrumRecord>)> = Vec::new();
    for r in records {
        match groups
            .iter_mut()
            .find(|(f, _)| f.to_bits() == r.training_fraction.to_bits())
        {
            Some((_, g)) => g.push(r),
            None => groups.push((r.training_fraction, vec![r])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (_, g) in &mut groups {
        g.sort_by(|a, b| a.variant_id.cmp(&b.variant_id));
    }

    // Spectra are resampled to the autoencoder's input length, which the AE
    // training stage set to the largest state dimension in its cohort.
    let common_len = ae_model.input_len();
    let mut rows = Vec::new();
    for (fraction, group) in &groups {
        let losses: Vec<f64> = group.iter().map(|r| r.target_loss).collect();
        let threshold = config.label_rule.threshold(&losses);
        let labels: Vec<bool> = losses.iter().map(|&l| l < threshold).collect();

        // Shared feature ingredients for this group.
        let interp: Vec<Vec<f64>> = group
            .iter()
            .map(|r| interpolate_spectrum(&r.spectrum, common_len))
            .collect::<Result<_>>()?;
        let latents: Vec<DVector<f64>> = interp
            .iter()
            .map(|s| ae_model.latent(s))
            .collect::<Result<_>>()?;
        let latent_pca = match latent_embedding {
            Some(e) => e.clone(),
            None => pca_fit(&latents)?,
        };
        let latent_k = latent_pca.dim().min(10);
        let raw_vectors: Vec<DVector<f64>> = interp
            .iter()
            .map(|s| DVector::from_column_slice(s))
            .collect();
        let raw_pca = pca_fit(&raw_vectors)?;
        let raw_k = raw_pca.dim().min(10);

        let sample_set = |features: Vec<Vec<f64>>| -> Vec<LabeledSample> {
            group
                .iter()
                .zip(features)
                .zip(&labels)
                .map(|((r, f), &label)| LabeledSample {
                    variant_id: r.variant_id.clone(),
                    features: f,
                    label,
                    training_fraction: *fraction,
                })
                .collect()
        };

        let mut spaces: Vec<(String, Vec<LabeledSample>, Vec<ClassifierSpec>)> = Vec::new();
        spaces.push((
            "le-mean".to_string(),
            sample_set(
                interp
                    .iter()
                    .map(|s| {
                        let (mean, _, _) = spectrum_stats(s)?;
                        Ok(vec![mean])
                    })
                    .collect::<Result<_>>()?,
            ),
            vec![ClassifierSpec::auto(ClassifierKind::LeMeanMedian)],
        ));
        spaces.push((
            "le-max".to_string(),
            sample_set(
                interp
                    .iter()
                    .map(|s| {
                        let (_, max, _) = spectrum_stats(s)?;
                        Ok(vec![max])
                    })
                    .collect::<Result<_>>()?,
            ),
            vec![ClassifierSpec::auto(ClassifierKind::LeMaxMedian)],
        ));
        spaces.push((
            "le-raw".to_string(),
            sample_set(interp.clone()),
            vec![ClassifierSpec::auto(ClassifierKind::LinearRegression)],
        ));
        spaces.push((
            "le-pca".to_string(),
            sample_set(
                raw_vectors
                    .iter()
                    .map(|v| Ok(pca_project(&raw_pca, v, raw_k)?.as_slice().to_vec()))
                    .collect::<Result<_>>()?,
            ),
            vec![
                ClassifierSpec::auto(ClassifierKind::LePcaMedian),
                ClassifierSpec::auto(ClassifierKind::LinearRegression),
            ],
        ));
        let mut latent_classifiers = vec![
            ClassifierSpec::auto(ClassifierKind::Pc1Median),
            ClassifierSpec::auto(ClassifierKind::LinearRegression),
        ];
        for d in SUBSPACE_DIMS {
            if d <= latent_k {
                latent_classifiers.push(ClassifierSpec::auto(ClassifierKind::MultiPcSubspace(d)));
            } else {
                notes.push(format!(
                    "aelle-pca subspace d={d} omitted: only {latent_k} components available"
                ));
            }
        }
        spaces.push((
            "aelle-pca".to_string(),
            sample_set(
                latents
                    .iter()
                    .map(|v| Ok(pca_project(&latent_pca, v, latent_k)?.as_slice().to_vec()))
                    .collect::<Result<_>>()?,
            ),
            latent_classifiers,
        ));
        match epoch_losses {
            Some(map) => {
                // Each group classifies by the validation loss observed at
                // its own training fraction.
                let mut feats = Vec::with_capacity(group.len());
                let mut missing = false;
                for r in group {
                    let at_fraction = map.get(&r.variant_id).and_then(|curve| {
                        curve
                            .iter()
                            .find(|(f, _)| f.to_bits() == fraction.to_bits())
                            .map(|&(_, l)| l)
                    });
                    match at_fraction {
                        Some(l) => feats.push(vec![l]),
                        None => {
                            missing = true;
                            break;
                        }
                    }
                }
                if missing {
                    notes.push(format!(
                        "loss-at-epoch rows omitted at fraction {fraction}: cohort lacks losses at this fraction"
                    ));
                } else {
                    spaces.push((
                        "loss-at-epoch".to_string(),
                        sample_set(feats),
                        vec![ClassifierSpec::auto(ClassifierKind::LossAtEpochThreshold)],
                    ));
                }
            }
            None => notes.push(format!(
                "loss-at-epoch rows omitted at fraction {fraction}: no early losses provided"
            )),
        }

        // One deterministic split shared by every feature space, so rows are
        // comparable. An explicit holdout pins membership; otherwise the
        // split is stratified by label so train and test keep the cohort's
        // class balance, which keeps median cuts between the classes rather
        // than inside one of them.
        let mut train_idx: Vec<usize> = Vec::new();
        let mut test_idx: Vec<usize> = Vec::new();
        match &config.holdout {
            Some(held) => {
                for (i, r) in group.iter().enumerate() {
                    if held.contains(&r.variant_id) {
                        test_idx.push(i);
                    } else {
                        train_idx.push(i);
                    }
                }
                if train_idx.is_empty() || test_idx.is_empty() {
                    return Err(CoreError::contract(format!(
                        "holdout leaves {} train and {} test samples at fraction {fraction}",
                        train_idx.len(),
                        test_idx.len()
                    )));
                }
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                let mut by_class = [Vec::new(), Vec::new()];
                for (i, &label) in labels.iter().enumerate() {
                    by_class[usize::from(label)].push(i);
                }
                for class in &mut by_class {
                    class.shuffle(&mut rng);
                    let cut = ((class.len() as f64) * config.train_fraction).round() as usize;
                    train_idx.extend_from_slice(&class[..cut]);
                    test_idx.extend_from_slice(&class[cut..]);
                }
                if train_idx.is_empty() {
                    train_idx.push(test_idx.pop().unwrap());
                }
                if test_idx.is_empty() {
                    test_idx.push(train_idx.pop().unwrap());
                }
                train_idx.sort_unstable();
                test_idx.sort_unstable();
            }
        }

        for (space, samples, classifiers) in spaces {
            let train: Vec<LabeledSample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
            let test: Vec<LabeledSample> = test_idx.iter().map(|&i| samples[i].clone()).collect();
            for spec in classifiers {
                let fitted = fit_classifier(&spec, &train)?;
                if fitted.degenerate {
                    notes.push(format!(
                        "{space}/{} at fraction {fraction}: one-class training data, constant classifier",
                        spec.kind.name()
                    ));
                }
                rows.push(ComparisonRow {
                    feature_space: space.clone(),
                    classifier: spec.kind.name(),
                    training_fraction: *fraction,
                    report: evaluate(&fitted, &test)?,
                });
            }
        }
    }
    Ok(ComparisonTable { rows, notes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aelle::{ae_train, AeConfig};
    use crate::cells::Architecture;
    use crate::Task;
    use rand::Rng;

    fn sample(id: &str, features: Vec<f64>, label: bool) -> LabeledSample {
        LabeledSample {
            variant_id: id.to_string(),
            features,
            label,
            training_fraction: 1.0,
        }
    }

    fn scalar_samples(values: &[(f64, bool)]) -> Vec<LabeledSample> {
        values
            .iter()
            .enumerate()
            .map(|(i, &(x, l))| sample(&format!("v{i}"), vec![x], l))
            .collect()
    }

    #[test]
    fn median_agrees_with_a_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..40 {
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let want = if n % 2 == 1 {
                sorted[n / 2]
            } else {
                0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
            };
            assert_eq!(median(&values), want, "n = {n}");
        }
        assert_eq!(median(&[3.0, 1.0, 4.0, 2.0]), 2.5);
    }

    #[test]
    fn fixed_threshold_uses_strict_below() {
        let spec = ClassifierSpec {
            kind: ClassifierKind::Pc1FixedThreshold(-0.03),
            orientation: Some(Orientation::BelowIsPositive),
        };
        let train = scalar_samples(&[(-0.5, true), (0.2, false), (-0.1, true), (0.4, false)]);
        let c = fit_classifier(&spec, &train).unwrap();
        assert!(predict(&c, &sample("x", vec![-0.5], false)).unwrap());
        assert!(
            !predict(&c, &sample("x", vec![-0.03], false)).unwrap(),
            "cut is negative side"
        );
        assert!(!predict(&c, &sample("x", vec![0.01], false)).unwrap());
    }

    #[test]
    fn one_class_training_degenerates_to_a_constant() {
        let train = scalar_samples(&[(0.1, true), (0.9, true), (0.4, true)]);
        let c = fit_classifier(&ClassifierSpec::auto(ClassifierKind::Pc1Median), &train).unwrap();
        assert!(c.degenerate);
        for x in [-100.0, 0.0, 100.0] {
            assert!(predict(&c, &sample("x", vec![x], false)).unwrap());
        }
    }

    #[test]
    fn always_positive_on_a_balanced_set_scores_two_thirds() {
        let train = scalar_samples(&[(0.0, true), (1.0, true)]);
        let c = fit_classifier(&ClassifierSpec::auto(ClassifierKind::Pc1Median), &train).unwrap();
        let test = scalar_samples(&[(0.1, true), (0.2, false), (0.3, true), (0.4, false)]);
        let r = evaluate(&c, &test).unwrap();
        assert_eq!(r.precision, 0.5);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn hand_built_confusion_matches_the_counts() {
        // Threshold at 0, below positive: tp=3, fp=1, fn=2, tn=4.
        let spec = ClassifierSpec {
            kind: ClassifierKind::Pc1FixedThreshold(0.0),
            orientation: Some(Orientation::BelowIsPositive),
        };
        let train = scalar_samples(&[(-1.0, true), (1.0, false)]);
        let c = fit_classifier(&spec, &train).unwrap();
        let test = scalar_samples(&[
            (-0.1, true),
            (-0.2, true),
            (-0.3, true),
            (-0.4, false),
            (0.1, true),
            (0.2, true),
            (0.3, false),
            (0.4, false),
            (0.5, false),
            (0.6, false),
        ]);
        let r = evaluate(&c, &test).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_, r.tn), (3, 1, 2, 4));
        assert_eq!(r.precision, 0.75);
        assert_eq!(r.recall, 0.6);
        assert!((r.f1 - 2.0 * 0.45 / 1.35).abs() < 1e-12);
        // The F1 identity holds on the emitted report.
        let f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
        assert_eq!(r.f1, f1);
    }

    #[test]
    fn subspace_d1_matches_pc1_median_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let train: Vec<LabeledSample> = (0..30)
                .map(|i| {
                    sample(
                        &format!("t{trial}-{i}"),
                        vec![rng.random_range(-2.0..2.0)],
                        rng.random_bool(0.5),
                    )
                })
                .collect();
            if train.iter().all(|s| s.label) || train.iter().all(|s| !s.label) {
                continue;
            }
            let a =
                fit_classifier(&ClassifierSpec::auto(ClassifierKind::Pc1Median), &train).unwrap();
            let b = fit_classifier(
                &ClassifierSpec::auto(ClassifierKind::MultiPcSubspace(1)),
                &train,
            )
            .unwrap();
            for i in 0..200 {
                let probe = sample(&format!("p{i}"), vec![rng.random_range(-3.0..3.0)], false);
                assert_eq!(
                    predict(&a, &probe).unwrap(),
                    predict(&b, &probe).unwrap(),
                    "trial {trial}"
                );
            }
        }
    }

    #[test]
    fn perfectly_informative_feature_is_linearly_separable() {
        let train: Vec<LabeledSample> = (0..20)
            .map(|i| sample(&format!("v{i}"), vec![f64::from(i % 2 == 0)], i % 2 == 0))
            .collect();
        let c = fit_classifier(
            &ClassifierSpec::auto(ClassifierKind::LinearRegression),
            &train,
        )
        .unwrap();
        let r = evaluate(&c, &train).unwrap();
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn auto_orientation_never_loses_to_forced_below() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let train: Vec<LabeledSample> = (0..25)
                .map(|i| {
                    sample(
                        &format!("v{i}"),
                        vec![rng.random_range(-1.0..1.0)],
                        rng.random_bool(0.5),
                    )
                })
                .collect();
            if train.iter().all(|s| s.label) || train.iter().all(|s| !s.label) {
                continue;
            }
            let auto =
                fit_classifier(&ClassifierSpec::auto(ClassifierKind::Pc1Median), &train).unwrap();
            let below = fit_classifier(
                &ClassifierSpec {
                    kind: ClassifierKind::Pc1Median,
                    orientation: Some(Orientation::BelowIsPositive),
                },
                &train,
            )
            .unwrap();
            let f1_auto = evaluate(&auto, &train).unwrap().f1;
            let f1_below = evaluate(&below, &train).unwrap().f1;
            assert!(f1_auto >= f1_below - 1e-12);
        }
    }

    #[test]
    fn evaluation_ignores_test_set_order() {
        let train = scalar_samples(&[(0.0, true), (1.0, false), (0.2, true), (0.8, false)]);
        let c = fit_classifier(&ClassifierSpec::auto(ClassifierKind::Pc1Median), &train).unwrap();
        let mut test = scalar_samples(&[
            (0.1, true),
            (0.9, false),
            (0.3, false),
            (0.7, true),
            (0.5, false),
        ]);
        let a = evaluate(&c, &test).unwrap();
        test.reverse();
        let b = evaluate(&c, &test).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subspace_majority_cells_respect_defaults() {
        // Two features; positives live in the (below, below) cell only.
        let mut train = Vec::new();
        for i in 0..8 {
            let (x, y, l) = match i % 4 {
                0 => (-1.0 - 0.01 * i as f64, -1.0, true),
                1 => (1.0 + 0.01 * i as f64, -1.0, false),
                2 => (-1.0 - 0.02 * i as f64, 1.0, false),
                _ => (1.0 + 0.02 * i as f64, 1.0, false),
            };
            train.push(sample(&format!("v{i}"), vec![x, y], l));
        }
        let c = fit_classifier(
            &ClassifierSpec::auto(ClassifierKind::MultiPcSubspace(2)),
            &train,
        )
        .unwrap();
        assert!(predict(&c, &sample("p", vec![-2.0, -2.0], false)).unwrap());
        assert!(!predict(&c, &sample("p", vec![2.0, -2.0], false)).unwrap());
        assert!(!predict(&c, &sample("p", vec![-2.0, 2.0], false)).unwrap());
        assert!(!predict(&c, &sample("p", vec![2.0, 2.0], false)).unwrap());
        // Unsupported grid size is a contract error.
        assert!(fit_classifier(
            &ClassifierSpec::auto(ClassifierKind::MultiPcSubspace(3)),
            &train
        )
        .is_err());
    }

    fn synthetic_record(
        id: &str,
        spectrum: Vec<f64>,
        target_loss: f64,
        fraction: f64,
    ) -> SpectrumRecord {
        SpectrumRecord {
            variant_id: id.to_string(),
            task: Task::Smnist,
            architecture: Architecture::Lstm,
            hidden_size: spectrum.len(),
            init_param: 0.1,
            training_fraction: fraction,
            target_loss,
            degenerate_flag: false,
            spectrum,
        }
    }

    /// Cohort where the final loss is a deterministic monotone function of
    /// the spectrum mean (two well-separated shape families).
    fn monotone_cohort(n: usize, seed: u64) -> Vec<SpectrumRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let shift = if i % 2 == 0 { 0.3 } else { -0.8 };
                let spectrum: Vec<f64> = (0..6)
                    .map(|j| shift - 0.1 * j as f64 + rng.random_range(-0.05..0.05))
                    .collect();
                let mean = spectrum.iter().sum::<f64>() / 6.0;
                synthetic_record(&format!("v{i:03}"), spectrum, (mean + 1.0).exp(), 1.0)
            })
            .collect()
    }

    #[test]
    fn suite_recovers_a_mean_monotone_rule() {
        let records = monotone_cohort(60, 3);
        let ae_config = AeConfig {
            layer_sizes: vec![12, 6],
            epochs: 150,
            batch_size: 16,
            learning_rate: 3e-3,
            ..AeConfig::new(7)
        };
        let model = ae_train(&records, &ae_config).unwrap();
        let table = compare_suite(&records, &model, None, None, &SuiteConfig::default()).unwrap();
        let f1_of = |space: &str, kind: &str| {
            table
                .rows
                .iter()
                .find(|r| r.feature_space == space && r.classifier == kind)
                .map(|r| r.report.f1)
                .unwrap()
        };
        assert_eq!(f1_of("le-mean", "le-mean-median"), 1.0);
        assert!(
            f1_of("aelle-pca", "pc1-median") >= 0.95,
            "latent PC1 f1 {}",
            f1_of("aelle-pca", "pc1-median")
        );
        // Every emitted report satisfies the F1 identity.
        for r in &table.rows {
            let p = r.report.precision;
            let rec = r.report.recall;
            let want = if p + rec > 0.0 {
                2.0 * p * rec / (p + rec)
            } else {
                0.0
            };
            assert!((r.report.f1 - want).abs() < 1e-12);
        }
        // Loss-at-epoch rows were omitted (none provided) with a note.
        assert!(table
            .rows
            .iter()
            .all(|r| r.feature_space != "loss-at-epoch"));
        assert!(table.notes.iter().any(|n| n.contains("loss-at-epoch")));
        // CSV carries the pinned header and one line per row.
        let csv = table.to_csv();
        assert!(csv.starts_with(
            "feature_space,classifier,training_fraction,precision,recall,f1,tp,fp,tn,fn\n"
        ));
        assert_eq!(csv.lines().count(), table.rows.len() + 1);
        assert!(table.to_text().contains("full-scale reference F1"));
    }

    #[test]
    fn holdout_and_per_fraction_losses_shape_the_table() {
        let mut records = monotone_cohort(40, 8);
        // A second group at an earlier fraction, same variants.
        let early: Vec<SpectrumRecord> = records
            .iter()
            .map(|r| {
                let mut e = r.clone();
                e.training_fraction = 0.1;
                e
            })
            .collect();
        records.extend(early);
        // Early validation losses exist at fraction 0.1 only.
        let mut epoch_losses = HashMap::new();
        for r in &records {
            epoch_losses.insert(r.variant_id.clone(), vec![(0.1, r.target_loss * 2.0)]);
        }
        let holdout: HashSet<String> = (0..40)
            .filter(|i| i % 4 == 0)
            .map(|i| format!("v{i:03}"))
            .collect();
        let ae_config = AeConfig {
            layer_sizes: vec![12, 6],
            epochs: 100,
            batch_size: 16,
            learning_rate: 3e-3,
            ..AeConfig::new(7)
        };
        let model = ae_train(
            &records
                .iter()
                .filter(|r| r.training_fraction == 1.0)
                .cloned()
                .collect::<Vec<_>>(),
            &ae_config,
        )
        .unwrap();
        let config = SuiteConfig {
            holdout: Some(holdout.clone()),
            ..SuiteConfig::default()
        };
        let table = compare_suite(&records, &model, None, Some(&epoch_losses), &config).unwrap();
        // Holdout fixes the test size: 10 of 40 per group.
        for r in &table.rows {
            let n = r.report.tp + r.report.fp + r.report.tn + r.report.fn_;
            assert_eq!(n, 10, "{}/{}", r.feature_space, r.classifier);
        }
        // Loss-at-epoch rows appear exactly at the fraction that has data.
        let loss_rows: Vec<f64> = table
            .rows
            .iter()
            .filter(|r| r.feature_space == "loss-at-epoch")
            .map(|r| r.training_fraction)
            .collect();
        assert_eq!(loss_rows, vec![0.1]);
        assert!(table
            .notes
            .iter()
            .any(|n| n.contains("loss-at-epoch") && n.contains("fraction 1")));
    }

    #[test]
    fn independent_labels_score_at_the_null_baseline() {
        // With labels independent of features, each classifier's F1 should
        // match the chance level 2qr/(q+r) for its own positive-prediction
        // rate r and the label rate q, on average over reshuffled cohorts.
        let ae_config = AeConfig {
            layer_sizes: vec![8, 4],
            epochs: 40,
            batch_size: 16,
            learning_rate: 3e-3,
            ..AeConfig::new(1)
        };
        let mut gaps: HashMap<String, (f64, usize)> = HashMap::new();
        for shuffle in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + shuffle);
            let records: Vec<SpectrumRecord> = (0..40)
                .map(|i| {
                    let spectrum: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..0.5)).collect();
                    // Loss drawn independently of the spectrum.
                    let loss = rng.random_range(0.1..2.0);
                    synthetic_record(&format!("s{shuffle}-{i:02}"), spectrum, loss, 1.0)
                })
                .collect();
            let model = ae_train(&records, &ae_config).unwrap();
            let table =
                compare_suite(&records, &model, None, None, &SuiteConfig::default()).unwrap();
            for row in table.rows {
                let n = (row.report.tp + row.report.fp + row.report.tn + row.report.fn_) as f64;
                let q = (row.report.tp + row.report.fn_) as f64 / n;
                let r = (row.report.tp + row.report.fp) as f64 / n;
                let null = if q + r > 0.0 {
                    2.0 * q * r / (q + r)
                } else {
                    0.0
                };
                let e = gaps.entry(row.classifier).or_insert((0.0, 0));
                e.0 += row.report.f1 - null;
                e.1 += 1;
            }
        }
        for (classifier, (sum, count)) in gaps {
            let mean_gap = sum / count as f64;
            assert!(
                mean_gap.abs() < 0.15,
                "{classifier}: mean F1 gap from chance {mean_gap}"
            );
        }
    }
}
