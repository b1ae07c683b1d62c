//! Experiment configuration: one TOML document drives every pipeline stage.
//!
//! A config names the task, the variant grid, and the knobs of each stage.
//! Field order in the canonical serialization is fixed by the struct
//! declarations, so equal settings always hash to the same manifest stamp
//! regardless of how the input file was laid out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aelle::LNorm;
use crate::cells::Architecture;
use crate::classify::LabelRule;
use crate::error::{CoreError, Result};
use crate::training::Optimizer;
use crate::Task;

/// Snapshot points supported by the artifact layout, as fractions of a
/// variant's training budget.
pub const ALLOWED_FRACTIONS: [f64; 7] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 1.0];

fn default_seed() -> u64 {
    7
}

/// Hyperparameter grid the cohort is drawn from. Every combination of
/// architecture, hidden size, and init parameter is replicated
/// `replicates` times with derived seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct GridSection {
    pub architectures: Vec<Architecture>,
    pub hidden_sizes: Vec<usize>,
    /// Coupling gain `g` for rank-1 reservoirs; uniform init half-width
    /// for gated and vanilla cells.
    pub init_params: Vec<f64>,
    pub replicates: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            architectures: vec![Architecture::Rank1Rnn],
            hidden_sizes: vec![64],
            init_params: vec![0.8, 1.0, 1.2, 1.4, 1.6, 1.8],
            replicates: 24,
        }
    }
}

/// Training knobs. The `force-*` fields drive recursive least-squares
/// training of rank-1 reservoirs (target-learning); the rest configure
/// gradient training of supervised cells (char-rnn, smnist).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct TrainSection {
    pub force_dt: f64,
    pub force_rls_delta: f64,
    pub force_train_steps: usize,
    pub force_test_steps: usize,
    pub force_update_stride: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Backprop truncation window in time steps.
    pub truncation: usize,
    pub optimizer: Optimizer,
    pub gradient_clip: f64,
    /// Fraction of examples held out for validation losses.
    pub val_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            force_dt: 0.1,
            force_rls_delta: 1.0,
            force_train_steps: 2400,
            force_test_steps: 600,
            force_update_stride: 2,
            epochs: 3,
            learning_rate: 2e-3,
            batch_size: 32,
            truncation: 256,
            optimizer: Optimizer::Adam,
            gradient_clip: 1.0,
            val_fraction: 0.1,
        }
    }
}

/// Lyapunov-spectrum estimation knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct LeSection {
    /// Measured steps per sequence (after warmup).
    pub seq_len: usize,
    pub n_sequences: usize,
    pub warmup: usize,
    /// Leading exponents to keep; 0 keeps one per state dimension.
    pub k_exponents: usize,
    /// Training fractions whose snapshots get a spectrum. Must be drawn
    /// from [`ALLOWED_FRACTIONS`] and include 1.0.
    pub fractions: Vec<f64>,
    /// Half-width of the uniform input drive used for target-learning
    /// cohorts (supervised cohorts are driven by dataset sequences).
    pub input_half_width: f64,
}

impl Default for LeSection {
    fn default() -> Self {
        LeSection {
            seq_len: 1000,
            n_sequences: 10,
            warmup: 100,
            k_exponents: 0,
            fractions: vec![1.0],
            input_half_width: 0.5,
        }
    }
}

/// Autoencoder knobs; widths are listed from the first encoder layer down
/// to the latent layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct AeSection {
    pub layer_sizes: Vec<usize>,
    pub l_norm: LNorm,
    pub alpha_max: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for AeSection {
    fn default() -> Self {
        AeSection {
            layer_sizes: vec![128, 64, 32],
            l_norm: LNorm::L1,
            alpha_max: 1.0,
            epochs: 300,
            learning_rate: 1e-3,
            batch_size: 32,
        }
    }
}

/// Labeling and evaluation knobs shared by `classify` and `compare`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct ClassifySection {
    pub label_rule: LabelRule,
    /// Fit fraction used only when no variant split file is available.
    pub train_fraction: f64,
    /// Training fraction whose spectra the single-classifier stage reads.
    pub fraction: f64,
}

impl Default for ClassifySection {
    fn default() -> Self {
        ClassifySection {
            label_rule: LabelRule::MedianLoss,
            train_fraction: 0.8,
            fraction: 1.0,
        }
    }
}

/// Variant-level split of the cohort: the autoencoder and every classifier
/// fit on `train` (+ `val` for model selection); all reported scores come
/// from `test`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct SplitsSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitsSection {
    fn default() -> Self {
        SplitsSection {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

/// Dataset locations for the supervised tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct DataSection {
    /// Plain-text file for char-rnn cohorts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_path: Option<PathBuf>,
    /// Character-window length for char-rnn examples.
    pub char_seq_len: usize,
    /// IDX image/label files for smnist cohorts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels_path: Option<PathBuf>,
    /// Average 2x2 pixel blocks, halving each image side.
    pub downsample: bool,
    /// Keep only the first `subset` images (0 keeps all).
    pub subset: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            corpus_path: None,
            char_seq_len: 64,
            images_path: None,
            labels_path: None,
            downsample: false,
            subset: 0,
        }
    }
}

/// A full experiment description. `task` and `output` are required;
/// everything else has defaults tuned for a desk-scale target-learning
/// cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Cohort directory all artifacts live under.
    pub output: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub splits: SplitsSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub le: LeSection,
    #[serde(default)]
    pub ae: AeSection,
    #[serde(default)]
    pub classify: ClassifySection,
    #[serde(default)]
    pub data: DataSection,
}

impl ExperimentConfig {
    /// Builtin configurations; `output` is supplied by the caller.
    ///
    /// - `target-learning`: 144 rank-1 reservoirs across six coupling
    ///   gains, trained on the four-sine target.
    /// - `char-rnn`: 24 LSTMs across three hidden sizes on a character
    ///   corpus.
    /// - `smnist`: 60 cells (rnn/lstm/gru x 20 replicates) on row-scanned
    ///   digit images, with spectra at five training fractions.
    /// - `mini`: a small target-learning cohort for smoke tests.
    pub fn preset(name: &str, output: impl Into<PathBuf>) -> Result<ExperimentConfig> {
        let output = output.into();
        let base = |task| ExperimentConfig {
            task,
            output: output.clone(),
            seed: default_seed(),
            splits: SplitsSection::default(),
            grid: GridSection::default(),
            train: TrainSection::default(),
            le: LeSection::default(),
            ae: AeSection::default(),
            classify: ClassifySection::default(),
            data: DataSection::default(),
        };
        let cfg = match name {
            "target-learning" => base(Task::TargetLearning),
            "char-rnn" => {
                let mut cfg = base(Task::CharRnn);
                cfg.grid = GridSection {
                    architectures: vec![Architecture::Lstm],
                    hidden_sizes: vec![32, 64, 128],
                    init_params: vec![0.1],
                    replicates: 8,
                };
                // Full spectra of the largest cells would dominate the
                // runtime; 64 exponents fit every grid member.
                cfg.le.k_exponents = 64;
                cfg.data.corpus_path = Some(PathBuf::from("fixtures/corpus.txt"));
                cfg
            }
            "smnist" => {
                let mut cfg = base(Task::Smnist);
                cfg.grid = GridSection {
                    architectures: vec![
                        Architecture::VanillaRnn,
                        Architecture::Lstm,
                        Architecture::Gru,
                    ],
                    hidden_sizes: vec![32],
                    init_params: vec![0.1],
                    replicates: 20,
                };
                cfg.le.fractions = vec![0.0, 0.1, 0.2, 0.5, 1.0];
                cfg.data.images_path = Some(PathBuf::from("fixtures/digits-images.idx"));
                cfg.data.labels_path = Some(PathBuf::from("fixtures/digits-labels.idx"));
                cfg.data.subset = 10_000;
                cfg
            }
            "mini" => {
                let mut cfg = base(Task::TargetLearning);
                cfg.grid = GridSection {
                    architectures: vec![Architecture::Rank1Rnn],
                    hidden_sizes: vec![24],
                    init_params: vec![0.8, 1.8],
                    replicates: 15,
                };
                cfg.train.force_train_steps = 1200;
                cfg.train.force_test_steps = 300;
                cfg.le = LeSection {
                    seq_len: 400,
                    n_sequences: 4,
                    warmup: 50,
                    k_exponents: 0,
                    fractions: vec![1.0],
                    input_half_width: 0.5,
                };
                cfg.ae = AeSection {
                    layer_sizes: vec![16, 8],
                    l_norm: LNorm::L1,
                    alpha_max: 1.0,
                    epochs: 120,
                    learning_rate: 3e-3,
                    batch_size: 8,
                };
                cfg
            }
            other => {
                return Err(CoreError::Config(format!(
                    "unknown preset `{other}`; expected one of {}",
                    Self::preset_names().join(", ")
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset_names() -> Vec<&'static str> {
        vec!["target-learning", "char-rnn", "smnist", "mini"]
    }

    pub fn from_toml_str(raw: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(raw).map_err(|e| CoreError::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        Self::from_toml_str(&raw)
    }

    /// Canonical TOML form: struct declaration order, independent of how
    /// the config was written on disk.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| CoreError::contract(format!("unserializable config: {e}")))
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn sha256(&self) -> Result<String> {
        let canon = self.to_toml_string()?;
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        Ok(hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CoreError::Config(msg));
        if self.output.as_os_str().is_empty() {
            return bad("output directory must be non-empty".into());
        }

        // Grid.
        let g = &self.grid;
        if g.architectures.is_empty() || g.hidden_sizes.is_empty() || g.init_params.is_empty() {
            return bad("grid lists must be non-empty".into());
        }
        if g.replicates == 0 {
            return bad("grid.replicates must be >= 1".into());
        }
        if g.hidden_sizes.iter().any(|&h| h < 2) {
            return bad("grid.hidden-sizes must be >= 2".into());
        }
        if g.init_params.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return bad("grid.init-params must be finite and positive".into());
        }
        for &arch in &g.architectures {
            let ok = match self.task {
                Task::TargetLearning => arch == Architecture::Rank1Rnn,
                Task::CharRnn | Task::Smnist => matches!(
                    arch,
                    Architecture::VanillaRnn | Architecture::Lstm | Architecture::Gru
                ),
            };
            if !ok {
                return bad(format!(
                    "task {} does not support grid architecture `{arch}`",
                    self.task
                ));
            }
        }

        // Splits.
        let s = self.splits;
        if !(s.train > 0.0) || !(s.test > 0.0) || s.val < 0.0 {
            return bad("splits need train > 0, test > 0, val >= 0".into());
        }
        if (s.train + s.val + s.test - 1.0).abs() > 1e-9 {
            return bad(format!(
                "splits must sum to 1, got {}",
                s.train + s.val + s.test
            ));
        }

        // Spectrum estimation.
        let le = &self.le;
        if le.seq_len == 0 || le.n_sequences == 0 {
            return bad("le.seq-len and le.n-sequences must be >= 1".into());
        }
        if !(le.input_half_width > 0.0) || !le.input_half_width.is_finite() {
            return bad("le.input-half-width must be finite and positive".into());
        }
        if le.fractions.is_empty() {
            return bad("le.fractions must be non-empty".into());
        }
        if le.fractions.windows(2).any(|w| w[0] >= w[1]) {
            return bad("le.fractions must be strictly increasing".into());
        }
        for &f in &le.fractions {
            if !ALLOWED_FRACTIONS.contains(&f) {
                return bad(format!(
                    "le.fractions entry {f} is not a supported snapshot point {ALLOWED_FRACTIONS:?}"
                ));
            }
        }
        if !le.fractions.contains(&1.0) {
            return bad("le.fractions must include 1.0 (the autoencoder trains on it)".into());
        }
        if self.task == Task::TargetLearning && le.fractions.iter().any(|&f| f != 0.0 && f != 1.0) {
            return bad(
                "target-learning snapshots exist only before and after training; \
                 le.fractions must be drawn from {0.0, 1.0}"
                    .into(),
            );
        }
        let min_state_dim = g
            .architectures
            .iter()
            .flat_map(|&a| {
                g.hidden_sizes
                    .iter()
                    .map(move |&h| if a == Architecture::Lstm { 2 * h } else { h })
            })
            .min()
            .unwrap_or(0);
        if le.k_exponents == 1 || (le.k_exponents > 1 && le.k_exponents > min_state_dim) {
            return bad(format!(
                "le.k-exponents must be 0 (full) or in [2, {min_state_dim}] for this grid"
            ));
        }

        // Training.
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 || t.truncation == 0 {
            return bad("train.epochs, train.batch-size, train.truncation must be >= 1".into());
        }
        if !(t.learning_rate > 0.0) || !(t.gradient_clip > 0.0) {
            return bad("train.learning-rate and train.gradient-clip must be positive".into());
        }
        if !(t.val_fraction > 0.0 && t.val_fraction < 1.0) {
            return bad("train.val-fraction must lie in (0, 1)".into());
        }
        if !(t.force_dt > 0.0 && t.force_dt <= 1.0) {
            return bad("train.force-dt must lie in (0, 1]".into());
        }
        if !(t.force_rls_delta > 0.0) {
            return bad("train.force-rls-delta must be positive".into());
        }
        if t.force_train_steps == 0 || t.force_test_steps == 0 || t.force_update_stride == 0 {
            return bad("train.force-* step counts and stride must be >= 1".into());
        }

        // Autoencoder.
        let ae = &self.ae;
        if ae.layer_sizes.is_empty() || ae.layer_sizes.iter().any(|&w| w == 0) {
            return bad("ae.layer-sizes must be non-empty with positive widths".into());
        }
        if ae.epochs == 0 || ae.batch_size == 0 {
            return bad("ae.epochs and ae.batch-size must be >= 1".into());
        }
        if !(ae.learning_rate > 0.0) || !(ae.alpha_max >= 0.0) || !ae.alpha_max.is_finite() {
            return bad("ae.learning-rate must be positive and ae.alpha-max >= 0".into());
        }

        // Classification.
        let c = &self.classify;
        if !(c.train_fraction > 0.0 && c.train_fraction < 1.0) {
            return bad("classify.train-fraction must lie in (0, 1)".into());
        }
        if !le.fractions.contains(&c.fraction) {
            return bad(format!(
                "classify.fraction {} is not in le.fractions {:?}",
                c.fraction, le.fractions
            ));
        }
        if let LabelRule::AbsoluteLoss(thr) = c.label_rule {
            if !thr.is_finite() {
                return bad("classify.label-rule absolute threshold must be finite".into());
            }
        }

        // Data.
        let d = &self.data;
        if d.char_seq_len < 2 {
            return bad("data.char-seq-len must be >= 2".into());
        }
        match self.task {
            Task::CharRnn if d.corpus_path.is_none() => {
                return bad("char-rnn needs data.corpus-path".into());
            }
            Task::Smnist if d.images_path.is_none() || d.labels_path.is_none() => {
                return bad("smnist needs data.images-path and data.labels-path".into());
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> &'static str {
        "task = \"target-learning\"\noutput = \"/tmp/cohort\"\n"
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml_str(minimal_toml()).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.grid.replicates, 24);
        assert_eq!(cfg.le.fractions, vec![1.0]);
        assert_eq!(cfg.splits, SplitsSection::default());
        assert_eq!(cfg.train.optimizer, Optimizer::Adam);
    }

    #[test]
    fn toml_roundtrip_preserves_everything() {
        for name in ExperimentConfig::preset_names() {
            let cfg = ExperimentConfig::preset(name, "/tmp/out").unwrap();
            let raw = cfg.to_toml_string().unwrap();
            let back = ExperimentConfig::from_toml_str(&raw).unwrap();
            assert_eq!(back, cfg, "preset {name}");
            assert_eq!(back.sha256().unwrap(), cfg.sha256().unwrap());
        }
    }

    #[test]
    fn checked_in_configs_mirror_the_builtin_presets() {
        // The files under configs/ are a starting point for `--config` users;
        // keep them in lockstep with the presets they were generated from.
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in ExperimentConfig::preset_names() {
            let on_disk = ExperimentConfig::load(&dir.join(format!("{name}.toml"))).unwrap();
            let preset = ExperimentConfig::preset(name, format!("runs/{name}")).unwrap();
            assert_eq!(
                on_disk, preset,
                "configs/{name}.toml drifted from the preset"
            );
        }
    }

    #[test]
    fn hash_ignores_key_order_in_the_source_file() {
        let a = "task = \"target-learning\"\noutput = \"/tmp/c\"\nseed = 9\n\
                 [le]\nseq-len = 500\n[grid]\nreplicates = 4\n";
        let b = "output = \"/tmp/c\"\nseed = 9\ntask = \"target-learning\"\n\
                 [grid]\nreplicates = 4\n[le]\nseq-len = 500\n";
        let ca = ExperimentConfig::from_toml_str(a).unwrap();
        let cb = ExperimentConfig::from_toml_str(b).unwrap();
        assert_eq!(ca.sha256().unwrap(), cb.sha256().unwrap());
    }

    #[test]
    fn hash_changes_with_the_seed() {
        let mut cfg = ExperimentConfig::preset("mini", "/tmp/c").unwrap();
        let before = cfg.sha256().unwrap();
        cfg.seed += 1;
        assert_ne!(cfg.sha256().unwrap(), before);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let raw = format!("{}replicates = 3\n", minimal_toml());
        assert!(ExperimentConfig::from_toml_str(&raw).is_err());
    }

    #[test]
    fn unknown_preset_is_rejected() {
        let err = ExperimentConfig::preset("big", "/tmp/x").unwrap_err();
        assert!(err.to_string().contains("unknown preset"));
    }

    #[test]
    fn validation_catches_contract_breakers() {
        let cases: Vec<(&str, Box<dyn Fn(&mut ExperimentConfig)>)> = vec![
            ("splits sum", Box::new(|c| c.splits.test = 0.5)),
            (
                "zero test",
                Box::new(|c| {
                    c.splits = SplitsSection {
                        train: 0.9,
                        val: 0.1,
                        test: 0.0,
                    };
                }),
            ),
            (
                "arch for task",
                Box::new(|c| {
                    c.grid.architectures = vec![Architecture::Lstm];
                }),
            ),
            (
                "fraction not allowed",
                Box::new(|c| c.le.fractions = vec![0.25, 1.0]),
            ),
            (
                "fractions without 1.0",
                Box::new(|c| c.le.fractions = vec![0.0]),
            ),
            (
                "mid-training reservoir snapshot",
                Box::new(|c| {
                    c.le.fractions = vec![0.5, 1.0];
                }),
            ),
            ("k of 1", Box::new(|c| c.le.k_exponents = 1)),
            ("k beyond state dim", Box::new(|c| c.le.k_exponents = 100)),
            ("classify fraction", Box::new(|c| c.classify.fraction = 0.5)),
            ("tiny hidden", Box::new(|c| c.grid.hidden_sizes = vec![1])),
            ("zero lr", Box::new(|c| c.train.learning_rate = 0.0)),
        ];
        for (label, mutate) in cases {
            let mut cfg = ExperimentConfig::preset("target-learning", "/tmp/x").unwrap();
            mutate(&mut cfg);
            assert!(cfg.validate().is_err(), "case `{label}` should fail");
        }
    }

    #[test]
    fn supervised_presets_pin_their_data_files() {
        let c = ExperimentConfig::preset("char-rnn", "/tmp/x").unwrap();
        assert!(c.data.corpus_path.is_some());
        assert_eq!(c.le.k_exponents, 64);
        let m = ExperimentConfig::preset("smnist", "/tmp/x").unwrap();
        assert!(m.data.images_path.is_some() && m.data.labels_path.is_some());
        assert_eq!(m.le.fractions, vec![0.0, 0.1, 0.2, 0.5, 1.0]);
        assert_eq!(
            m.grid.architectures.len()
                * m.grid.hidden_sizes.len()
                * m.grid.init_params.len()
                * m.grid.replicates,
            60
        );
    }

    #[test]
    fn target_learning_preset_spans_at_least_120_variants() {
        let c = ExperimentConfig::preset("target-learning", "/tmp/x").unwrap();
        let cohort = c.grid.architectures.len()
            * c.grid.hidden_sizes.len()
            * c.grid.init_params.len()
            * c.grid.replicates;
        assert!(cohort >= 120, "cohort {cohort}");
    }
}
