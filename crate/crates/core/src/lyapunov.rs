//! QR-based Lyapunov spectrum estimation.
//!
//! The engine tracks an orthonormal tangent frame `Q` under the one-step
//! Jacobians of a cell: at every step the frame is multiplied by the Jacobian
//! and re-orthonormalized by a QR decomposition, and the logs of the
//! R-diagonal (the per-direction expansion factors) are accumulated after a
//! warmup. Exponents are the time averages of those logs, averaged over a
//! batch of input sequences and sorted descending.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{Architecture, CellState, DynamicalMap, StepInput};
use crate::error::{CoreError, Result};
use crate::Task;

/// Expansion factors below this are treated as numerically collapsed: the
/// log is clamped and the record is flagged degenerate instead of aborting,
/// so saturated cells still yield usable spectra.
pub const R_CLAMP: f64 = 1e-300;

/// Lyapunov-run geometry: how long, how many sequences, how many exponents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LEConfig {
    /// Steps accumulated into the exponent estimate (after warmup).
    pub seq_len: usize,
    /// Number of input sequences averaged.
    pub n_inputs: usize,
    /// Steps run before accumulation starts, to leave the transient.
    pub warmup: usize,
    /// Leading exponents tracked; must not exceed the state dimension.
    pub k_exponents: usize,
}

impl LEConfig {
    pub const DEFAULT_SEQ_LEN: usize = 1000;
    pub const DEFAULT_N_INPUTS: usize = 10;
    pub const DEFAULT_WARMUP: usize = 100;

    pub fn new(seq_len: usize, n_inputs: usize, warmup: usize, k_exponents: usize) -> Result<Self> {
        let config = LEConfig {
            seq_len,
            n_inputs,
            warmup,
            k_exponents,
        };
        config.validate()?;
        Ok(config)
    }

    /// Default run tracking the full spectrum of a `state_dim`-dimensional cell.
    pub fn full_spectrum(state_dim: usize) -> Self {
        LEConfig {
            seq_len: Self::DEFAULT_SEQ_LEN,
            n_inputs: Self::DEFAULT_N_INPUTS,
            warmup: Self::DEFAULT_WARMUP,
            k_exponents: state_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(CoreError::contract("seq_len must be >= 1"));
        }
        if self.n_inputs == 0 {
            return Err(CoreError::contract("n_inputs must be >= 1"));
        }
        if self.k_exponents == 0 {
            return Err(CoreError::contract("k_exponents must be >= 1"));
        }
        Ok(())
    }

    /// Total steps each input sequence must provide.
    pub fn total_steps(&self) -> usize {
        self.warmup + self.seq_len
    }
}

/// A batch of equally-shaped input sequences. Each sequence is stored as an
/// `input_dim x steps` matrix whose column `t` is the input at step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputBatch {
    sequences: Vec<DMatrix<f64>>,
}

impl InputBatch {
    pub fn from_sequences(sequences: Vec<DMatrix<f64>>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(CoreError::contract("input batch must hold >= 1 sequence"));
        }
        let shape = sequences[0].shape();
        for (i, s) in sequences.iter().enumerate() {
            if s.shape() != shape {
                return Err(CoreError::contract(format!(
                    "input sequence {i} has shape {:?}, expected {:?}",
                    s.shape(),
                    shape
                )));
            }
        }
        Ok(InputBatch { sequences })
    }

    /// `n` all-zero sequences: the autonomous-drive case.
    pub fn zeros(n: usize, input_dim: usize, steps: usize) -> Self {
        InputBatch {
            sequences: vec![DMatrix::zeros(input_dim, steps); n.max(1)],
        }
    }

    /// `n` sequences of i.i.d. uniform inputs on `[-half_width, half_width]`,
    /// deterministic in `seed`.
    pub fn random_uniform(
        n: usize,
        input_dim: usize,
        steps: usize,
        half_width: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sequences = (0..n.max(1))
            .map(|_| {
                DMatrix::from_fn(input_dim, steps, |_, _| {
                    rng.random_range(-half_width..=half_width)
                })
            })
            .collect();
        InputBatch { sequences }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.sequences[0].nrows()
    }

    pub fn steps(&self) -> usize {
        self.sequences[0].ncols()
    }

    pub fn sequence(&self, i: usize) -> &DMatrix<f64> {
        &self.sequences[i]
    }

    pub fn sequences(&self) -> &[DMatrix<f64>] {
        &self.sequences
    }
}

/// Metadata attached to a spectrum when it is recorded: which variant the
/// run measured and what its task performance was.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordMeta {
    pub variant_id: String,
    pub task: Task,
    pub architecture: Architecture,
    pub hidden_size: usize,
    pub init_param: f64,
    /// Fraction of the training budget completed when the spectrum was
    /// measured (0 = untrained, 1 = fully trained).
    pub training_fraction: f64,
    /// Validation loss of the variant; the quantity the autoencoder's
    /// predictor head regresses.
    pub target_loss: f64,
}

/// One variant's sorted spectrum plus its provenance and target loss.
/// This is the row format of the JSONL spectrum store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub variant_id: String,
    pub task: Task,
    pub architecture: Architecture,
    pub hidden_size: usize,
    pub init_param: f64,
    pub training_fraction: f64,
    pub target_loss: f64,
    /// Set when any expansion factor collapsed below [`R_CLAMP`] and its log
    /// was clamped.
    pub degenerate_flag: bool,
    /// Exponents sorted non-increasing.
    pub spectrum: Vec<f64>,
}

impl SpectrumRecord {
    pub fn from_meta(meta: &RecordMeta, spectrum: Vec<f64>, degenerate_flag: bool) -> Self {
        SpectrumRecord {
            variant_id: meta.variant_id.clone(),
            task: meta.task,
            architecture: meta.architecture,
            hidden_size: meta.hidden_size,
            init_param: meta.init_param,
            training_fraction: meta.training_fraction,
            target_loss: meta.target_loss,
            degenerate_flag,
            spectrum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.spectrum.is_empty() {
            return Err(CoreError::contract(format!(
                "record {} has an empty spectrum",
                self.variant_id
            )));
        }
        if self.spectrum.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::contract(format!(
                "record {} has non-finite exponents",
                self.variant_id
            )));
        }
        if self.spectrum.windows(2).any(|w| w[0] < w[1]) {
            return Err(CoreError::contract(format!(
                "record {} spectrum is not sorted descending",
                self.variant_id
            )));
        }
        if !(0.0..=1.0).contains(&self.training_fraction) {
            return Err(CoreError::contract(format!(
                "record {} training_fraction {} outside [0, 1]",
                self.variant_id, self.training_fraction
            )));
        }
        if !(self.target_loss >= 0.0) {
            return Err(CoreError::contract(format!(
                "record {} target_loss {} is negative or NaN",
                self.variant_id, self.target_loss
            )));
        }
        Ok(())
    }
}

/// Spectrum of one LE run before metadata is attached.
#[derive(Clone, Debug, PartialEq)]
pub struct LeOutcome {
    /// Exponents sorted non-increasing.
    pub exponents: Vec<f64>,
    pub degenerate: bool,
}

/// Per-step view handed to [`le_sequence_observed`] observers after the sign
/// convention is applied: `(step index, Q, R)`.
pub type StepObserver<'a> = &'a mut dyn FnMut(usize, &DMatrix<f64>, &DMatrix<f64>);

fn check_le_inputs(map: &dyn DynamicalMap, inputs: &InputBatch, config: &LEConfig) -> Result<()> {
    config.validate()?;
    if config.k_exponents > map.state_dim() {
        return Err(CoreError::contract(format!(
            "k_exponents {} exceeds state dimension {}",
            config.k_exponents,
            map.state_dim()
        )));
    }
    if inputs.input_dim() != map.input_dim() {
        return Err(CoreError::contract(format!(
            "input batch dimension {} does not match cell input dimension {}",
            inputs.input_dim(),
            map.input_dim()
        )));
    }
    if inputs.steps() < config.total_steps() {
        return Err(CoreError::contract(format!(
            "input sequences provide {} steps but warmup + seq_len needs {}",
            inputs.steps(),
            config.total_steps()
        )));
    }
    if inputs.len() < config.n_inputs {
        return Err(CoreError::contract(format!(
            "input batch holds {} sequences but n_inputs is {}",
            inputs.len(),
            config.n_inputs
        )));
    }
    Ok(())
}

/// Run the QR recursion along one input sequence from `q0`, reporting each
/// post-convention `(Q, R)` pair to `observer`. Returns the unsorted per-k
/// time averages and the degeneracy flag.
pub fn le_sequence_observed(
    map: &dyn DynamicalMap,
    sequence: &DMatrix<f64>,
    config: &LEConfig,
    label: &str,
    q0: &DMatrix<f64>,
    mut observer: Option<StepObserver<'_>>,
) -> Result<(Vec<f64>, bool)> {
    let d = map.state_dim();
    let k = config.k_exponents;
    if q0.shape() != (d, k) {
        return Err(CoreError::contract(format!(
            "initial frame has shape {:?}, expected ({d}, {k})",
            q0.shape()
        )));
    }
    let mut state = CellState::zeros(d);
    let mut q = q0.clone();
    let mut log_sums = vec![0.0f64; k];
    let mut degenerate = false;

    for t in 0..config.total_steps() {
        let input = StepInput(sequence.column(t).into_owned());
        let jac = map.jacobian(&state, &input)?;
        state = map.step(&state, &input)?;
        if !state.is_finite() {
            return Err(CoreError::NonFiniteState {
                step: t,
                variant_id: label.to_string(),
            });
        }

        let (new_q, mut r) = (jac * &q).qr().unpack();
        q = new_q;
        // Sign convention: make the R diagonal positive by flipping the
        // matching Q column and R row; Q·R is unchanged.
        for i in 0..k {
            if r[(i, i)] < 0.0 {
                for row in 0..d {
                    q[(row, i)] = -q[(row, i)];
                }
                for col in i..k {
                    r[(i, col)] = -r[(i, col)];
                }
            }
        }
        if let Some(obs) = observer.as_mut() {
            obs(t, &q, &r);
        }

        if t >= config.warmup {
            for i in 0..k {
                let rii = r[(i, i)];
                if !rii.is_finite() {
                    return Err(CoreError::NonFiniteState {
                        step: t,
                        variant_id: label.to_string(),
                    });
                }
                if rii < R_CLAMP {
                    degenerate = true;
                    log_sums[i] += R_CLAMP.ln();
                } else {
                    log_sums[i] += rii.ln();
                }
            }
        }
    }

    let t = config.seq_len as f64;
    Ok((log_sums.into_iter().map(|s| s / t).collect(), degenerate))
}

/// Unsorted per-sequence exponent estimates for the first `n_inputs`
/// sequences of the batch, each started from the identity frame. Sequences
/// run in parallel; the returned order is the batch order.
pub fn le_per_sequence(
    map: &dyn DynamicalMap,
    inputs: &InputBatch,
    config: &LEConfig,
    label: &str,
) -> Result<Vec<(Vec<f64>, bool)>> {
    check_le_inputs(map, inputs, config)?;
    let q0 = DMatrix::identity(map.state_dim(), config.k_exponents);
    inputs.sequences()[..config.n_inputs]
        .par_iter()
        .map(|seq| le_sequence_observed(map, seq, config, label, &q0, None))
        .collect()
}

/// Mean spectrum over the batch: per-index arithmetic mean in batch order,
/// then sorted descending. Degenerate if any sequence was.
pub fn le_spectrum(
    map: &dyn DynamicalMap,
    inputs: &InputBatch,
    config: &LEConfig,
    label: &str,
) -> Result<LeOutcome> {
    let runs = le_per_sequence(map, inputs, config, label)?;
    let k = config.k_exponents;
    let mut sums = vec![0.0f64; k];
    let mut degenerate = false;
    for (exps, deg) in &runs {
        for i in 0..k {
            sums[i] += exps[i];
        }
        degenerate |= *deg;
    }
    let n = runs.len() as f64;
    let mut exponents: Vec<f64> = sums.into_iter().map(|s| s / n).collect();
    exponents.sort_by(|a, b| b.total_cmp(a));
    Ok(LeOutcome {
        exponents,
        degenerate,
    })
}

/// Compute a variant's spectrum and package it with its metadata.
pub fn compute_le(
    map: &dyn DynamicalMap,
    inputs: &InputBatch,
    config: &LEConfig,
    meta: &RecordMeta,
) -> Result<SpectrumRecord> {
    let outcome = le_spectrum(map, inputs, config, &meta.variant_id)?;
    let record = SpectrumRecord::from_meta(meta, outcome.exponents, outcome.degenerate);
    record.validate()?;
    Ok(record)
}

/// Piecewise-linear resampling of a spectrum curve onto `target_len` evenly
/// spaced points of the normalized index axis. Endpoints are preserved
/// exactly and `target_len == values.len()` returns the input unchanged.
pub fn interpolate_spectrum(values: &[f64], target_len: usize) -> Result<Vec<f64>> {
    let l1 = values.len();
    if l1 < 2 {
        return Err(CoreError::contract(format!(
            "interpolation needs >= 2 input values, got {l1}"
        )));
    }
    if target_len < 2 {
        return Err(CoreError::contract(format!(
            "interpolation target length must be >= 2, got {target_len}"
        )));
    }
    if target_len == l1 {
        return Ok(values.to_vec());
    }
    let out = (0..target_len)
        .map(|j| {
            let pos = j as f64 / (target_len - 1) as f64 * (l1 - 1) as f64;
            let i = pos.floor() as usize;
            if i + 1 >= l1 {
                values[l1 - 1]
            } else {
                let frac = pos - i as f64;
                values[i] * (1.0 - frac) + values[i + 1] * frac
            }
        })
        .collect();
    Ok(out)
}

/// `(mean, max, population variance)` of a spectrum.
pub fn spectrum_stats(values: &[f64]) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(CoreError::contract(
            "spectrum_stats needs a non-empty spectrum",
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let max = values.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
    let variance = values.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, max, variance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::LinearCell;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn identity_q0(map: &dyn DynamicalMap, k: usize) -> DMatrix<f64> {
        DMatrix::identity(map.state_dim(), k)
    }

    #[test]
    fn diagonal_linear_cell_recovers_log_moduli() {
        let cell = LinearCell::diagonal(&[2.0, 0.5]);
        let config = LEConfig::new(100, 1, 0, 2).unwrap();
        let inputs = InputBatch::zeros(1, 1, config.total_steps());
        let out = le_spectrum(&cell, &inputs, &config, "diag").unwrap();
        assert!(!out.degenerate);
        assert_relative_eq!(out.exponents[0], 2.0f64.ln(), max_relative = 1e-9);
        assert_relative_eq!(out.exponents[1], 0.5f64.ln(), max_relative = 1e-9);
    }

    #[test]
    fn identity_cell_exponents_are_exactly_zero() {
        let cell = LinearCell::identity(4);
        let config = LEConfig::new(50, 2, 10, 4).unwrap();
        let inputs = InputBatch::zeros(2, 1, config.total_steps());
        let out = le_spectrum(&cell, &inputs, &config, "id").unwrap();
        assert_eq!(out.exponents, vec![0.0; 4]);
    }

    #[test]
    fn unordered_diagonal_is_sorted_descending() {
        let cell = LinearCell::diagonal(&[0.5, 3.0, 1.0]);
        let config = LEConfig::new(200, 1, 5, 3).unwrap();
        let inputs = InputBatch::zeros(1, 1, config.total_steps());
        let out = le_spectrum(&cell, &inputs, &config, "perm").unwrap();
        let expected = [3.0f64.ln(), 0.0, 0.5f64.ln()];
        for (got, want) in out.exponents.iter().zip(expected) {
            assert_relative_eq!(*got, want, epsilon = 1e-9);
        }
    }

    #[test]
    fn batch_mean_matches_single_sequence_mean_bitwise() {
        // Independent oracle: run each sequence alone and average by hand in
        // batch order; the batch call must reproduce it bit-for-bit.
        let a = DMatrix::from_row_slice(3, 3, &[0.6, 0.2, 0.0, -0.1, 0.7, 0.3, 0.0, 0.2, 0.5]);
        let cell = LinearCell::new(a, 1);
        let config = LEConfig::new(80, 4, 7, 3).unwrap();
        let inputs = InputBatch::random_uniform(4, 1, config.total_steps(), 1.0, 99);

        let runs = le_per_sequence(&cell, &inputs, &config, "oracle").unwrap();
        let mut sums = vec![0.0f64; 3];
        for (exps, _) in &runs {
            for i in 0..3 {
                sums[i] += exps[i];
            }
        }
        let mut expected: Vec<f64> = sums.iter().map(|s| s / 4.0).collect();
        expected.sort_by(|x, y| y.total_cmp(x));

        let batch = le_spectrum(&cell, &inputs, &config, "oracle").unwrap();
        assert_eq!(batch.exponents, expected);
    }

    #[test]
    fn qr_frame_stays_orthonormal_and_r_diagonal_positive() {
        let spec = crate::cells::CellSpec::new(Architecture::VanillaRnn, 12, 3, 0.9, 7).unwrap();
        let cell = crate::cells::init_cell(&spec).unwrap();
        let config = LEConfig::new(150, 1, 20, 12).unwrap();
        let inputs = InputBatch::random_uniform(1, 3, config.total_steps(), 1.0, 8);
        let q0 = identity_q0(&cell, 12);
        let mut worst = 0.0f64;
        let mut min_diag = f64::INFINITY;
        let mut observer = |_t: usize, q: &DMatrix<f64>, r: &DMatrix<f64>| {
            let gram = q.transpose() * q;
            worst = worst.max((gram - DMatrix::identity(12, 12)).norm());
            for i in 0..12 {
                min_diag = min_diag.min(r[(i, i)]);
            }
        };
        le_sequence_observed(
            &cell,
            inputs.sequence(0),
            &config,
            "orth",
            &q0,
            Some(&mut observer),
        )
        .unwrap();
        assert!(worst < 1e-8, "worst orthonormality defect {worst}");
        assert!(min_diag > 0.0, "R diagonal not positive: {min_diag}");
    }

    #[test]
    fn linear_cell_sum_rule() {
        // For a constant-Jacobian cell the exponent sum must equal the mean
        // log |det J| accumulated over the run.
        let a: DMatrix<f64> = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.9, 0.1, 0.0, 0.2, //
                -0.2, 0.8, 0.1, 0.0, //
                0.0, 0.3, 0.7, 0.1, //
                0.1, 0.0, -0.1, 0.6,
            ],
        );
        let log_det = a.determinant().abs().ln();
        let cell = LinearCell::new(a, 1);
        let config = LEConfig::new(400, 1, 0, 4).unwrap();
        let inputs = InputBatch::zeros(1, 1, config.total_steps());
        let out = le_spectrum(&cell, &inputs, &config, "sum").unwrap();
        let sum: f64 = out.exponents.iter().sum();
        assert_relative_eq!(sum, log_det, epsilon = 1e-6);
    }

    #[test]
    fn random_orthonormal_initial_frame_gives_same_spectrum() {
        // Contracting cell: exponents must not depend on the initial frame.
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, 0.0, 0.4, 0.1, 0.1, 0.0, 0.3]);
        let cell = LinearCell::new(a, 1);
        let config = LEConfig::new(10_000, 1, 100, 3).unwrap();
        let inputs = InputBatch::zeros(1, 1, config.total_steps());

        let id = identity_q0(&cell, 3);
        let (from_id, _) =
            le_sequence_observed(&cell, inputs.sequence(0), &config, "q0", &id, None).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gauss = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let (rand_q, _) = gauss.qr().unpack();
        let (from_rand, _) =
            le_sequence_observed(&cell, inputs.sequence(0), &config, "q0", &rand_q, None).unwrap();

        let mut a_sorted = from_id.clone();
        let mut b_sorted = from_rand.clone();
        a_sorted.sort_by(|x, y| y.total_cmp(x));
        b_sorted.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in a_sorted.iter().zip(&b_sorted) {
            assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
    }

    #[test]
    fn singular_direction_clamps_and_flags() {
        let cell = LinearCell::diagonal(&[1.0, 0.0]);
        let config = LEConfig::new(10, 1, 0, 2).unwrap();
        let inputs = InputBatch::zeros(1, 1, config.total_steps());
        let out = le_spectrum(&cell, &inputs, &config, "sing").unwrap();
        assert!(out.degenerate);
        assert_relative_eq!(out.exponents[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(out.exponents[1], R_CLAMP.ln(), max_relative = 1e-12);
    }

    #[test]
    fn non_finite_state_aborts_with_step_index() {
        struct Blowup;
        impl DynamicalMap for Blowup {
            fn state_dim(&self) -> usize {
                1
            }
            fn input_dim(&self) -> usize {
                1
            }
            fn step(&self, state: &CellState, _input: &StepInput) -> Result<CellState> {
                // Fourth application of x -> 1e100 x + 1e100 overflows.
                Ok(CellState(DVector::from_element(
                    1,
                    state.0[0] * 1e100 + 1e100,
                )))
            }
            fn jacobian(&self, _: &CellState, _: &StepInput) -> Result<DMatrix<f64>> {
                Ok(DMatrix::from_element(1, 1, 1e100))
            }
        }
        let config = LEConfig::new(10, 1, 0, 1).unwrap();
        let inputs = InputBatch::zeros(1, 1, config.total_steps());
        let err = le_spectrum(&Blowup, &inputs, &config, "boom").unwrap_err();
        match err {
            CoreError::NonFiniteState { step, variant_id } => {
                assert_eq!(step, 3);
                assert_eq!(variant_id, "boom");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn record_roundtrip_and_validation() {
        let meta = RecordMeta {
            variant_id: "v-1".into(),
            task: Task::TargetLearning,
            architecture: Architecture::Rank1Rnn,
            hidden_size: 8,
            init_param: 1.4,
            training_fraction: 1.0,
            target_loss: 0.3,
        };
        let cell = LinearCell::diagonal(&[0.9; 8]);
        let config = LEConfig::new(50, 1, 0, 8).unwrap();
        let inputs = InputBatch::zeros(1, 1, config.total_steps());
        let rec = compute_le(&cell, &inputs, &config, &meta).unwrap();
        assert_eq!(rec.spectrum.len(), 8);
        rec.validate().unwrap();

        let mut bad = rec.clone();
        bad.spectrum[0] = f64::NAN;
        assert!(bad.validate().is_err());
        let mut unsorted = rec.clone();
        unsorted.spectrum[0] = -10.0;
        assert!(unsorted.validate().is_err());
    }

    #[test]
    fn interpolation_matches_hand_examples() {
        assert_eq!(
            interpolate_spectrum(&[0.0, -1.0], 3).unwrap(),
            vec![0.0, -0.5, -1.0]
        );
        let same = vec![1.0, 0.25, -0.75];
        assert_eq!(interpolate_spectrum(&same, 3).unwrap(), same);
        assert!(interpolate_spectrum(&[1.0], 4).is_err());
        assert!(interpolate_spectrum(&[1.0, 0.0], 1).is_err());
    }

    #[test]
    fn interpolation_preserves_endpoints_and_monotonicity() {
        let spectrum: Vec<f64> = (0..64).map(|i| 1.0 - 0.05 * i as f64).collect();
        let up = interpolate_spectrum(&spectrum, 512).unwrap();
        assert_eq!(up.len(), 512);
        assert_eq!(up[0], spectrum[0]);
        assert_eq!(up[511], spectrum[63]);
        assert!(up.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn stats_hand_examples() {
        let (mean, max, var) = spectrum_stats(&[0.5, -0.5]).unwrap();
        assert_eq!((mean, max, var), (0.0, 0.5, 0.25));
        let (mean, max, var) = spectrum_stats(&[-1.0, -1.0, -1.0]).unwrap();
        assert_eq!((mean, max, var), (-1.0, -1.0, 0.0));
        assert!(spectrum_stats(&[]).is_err());
    }

    proptest! {
        #[test]
        fn stats_match_naive_recomputation(values in proptest::collection::vec(-5.0f64..5.0, 1..20)) {
            let (mean, max, var) = spectrum_stats(&values).unwrap();
            // Second, deliberately different arithmetic path.
            let n = values.len();
            let mut sum = 0.0;
            let mut best = values[0];
            for &v in &values {
                sum += v;
                if v > best {
                    best = v;
                }
            }
            let naive_mean = sum / n as f64;
            let naive_var =
                values.iter().map(|v| v * v).sum::<f64>() / n as f64 - naive_mean * naive_mean;
            prop_assert!((mean - naive_mean).abs() < 1e-12);
            prop_assert_eq!(max, best);
            prop_assert!((var - naive_var).abs() < 1e-9);
        }

        #[test]
        fn interpolation_monotone_for_descending_inputs(
            raw in proptest::collection::vec(0.0f64..1.0, 2..40),
            target in 2usize..100,
        ) {
            let mut values: Vec<f64> = raw.clone();
            values.sort_by(|a, b| b.total_cmp(a));
            let out = interpolate_spectrum(&values, target).unwrap();
            prop_assert_eq!(out.len(), target);
            prop_assert!((out[0] - values[0]).abs() < 1e-15);
            prop_assert!((out[target - 1] - values[values.len() - 1]).abs() < 1e-15);
            prop_assert!(out.windows(2).all(|w| w[0] >= w[1] - 1e-12));
        }
    }
}
