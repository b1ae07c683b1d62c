//! Truncated backpropagation through time with hand-derived gradients for
//! the vanilla, LSTM, and GRU cells. Models classify a sequence from the
//! final hidden state through a linear readout and softmax cross-entropy.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Example, SupervisedSet};
use crate::cells::{
    Architecture, Cell, CellParams, CellSpec, DynamicalMap, GruGates, GruParams, LstmGates,
    LstmParams, VanillaParams,
};
use crate::data::checkpoint;
use crate::error::{CoreError, Result};
use crate::optim::{clip_global_norm, sgd_step, Adam};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Gradients flow through at most this many trailing steps of each
    /// sequence (truncation window).
    pub seq_len: usize,
    pub optimizer: Optimizer,
    /// Global L2 norm ceiling for each batch gradient.
    pub gradient_clip: f64,
    /// Fractions of the total update budget at which parameter snapshots
    /// are taken (0 = before training, 1 = after the last update).
    pub checkpoint_fractions: Vec<f64>,
    pub seed: u64,
}

impl SupervisedTrainConfig {
    pub fn new(epochs: usize, learning_rate: f64, seed: u64) -> Self {
        SupervisedTrainConfig {
            epochs,
            learning_rate,
            batch_size: 32,
            seq_len: 256,
            optimizer: Optimizer::Adam,
            gradient_clip: 1.0,
            checkpoint_fractions: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(CoreError::contract("training needs epochs >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::contract("learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.seq_len == 0 {
            return Err(CoreError::contract("batch_size and seq_len must be >= 1"));
        }
        if !(self.gradient_clip > 0.0) {
            return Err(CoreError::contract("gradient_clip must be positive"));
        }
        if self
            .checkpoint_fractions
            .iter()
            .any(|f| !(0.0..=1.0).contains(f))
        {
            return Err(CoreError::contract(
                "checkpoint fractions must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// A recurrent cell plus the linear class readout trained with it.
///
/// The readout reads the first `w_out.ncols()` state coordinates — the full
/// state for vanilla/GRU cells and the `h` half for LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub cell: Cell,
    pub w_out: DMatrix<f64>,
    pub b_out: DVector<f64>,
}

fn readout_dim(cell: &Cell) -> usize {
    match cell.spec().architecture {
        Architecture::Lstm => cell.spec().hidden_size,
        _ => cell.state_dim(),
    }
}

fn check_supported(cell: &Cell) -> Result<()> {
    match cell.spec().architecture {
        Architecture::VanillaRnn | Architecture::Lstm | Architecture::Gru => Ok(()),
        other => Err(CoreError::contract(format!(
            "backpropagation gradients are implemented for the vanilla, LSTM, and GRU cells, not {other}"
        ))),
    }
}

impl TrainedModel {
    /// Wrap a cell with a zero-initialized readout, so the untrained model
    /// predicts the uniform distribution (cross-entropy exactly `ln C`).
    pub fn new(cell: Cell, num_classes: usize) -> Result<Self> {
        check_supported(&cell)?;
        if num_classes < 2 {
            return Err(CoreError::contract("classification needs >= 2 classes"));
        }
        let r = readout_dim(&cell);
        Ok(TrainedModel {
            cell,
            w_out: DMatrix::zeros(num_classes, r),
            b_out: DVector::zeros(num_classes),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.b_out.len()
    }

    /// Run the cell from rest over the whole input sequence.
    pub fn final_state(&self, inputs: &DMatrix<f64>) -> Result<DVector<f64>> {
        if inputs.nrows() != self.cell.input_dim() {
            return Err(CoreError::contract(format!(
                "example input dimension {} does not match cell input dimension {}",
                inputs.nrows(),
                self.cell.input_dim()
            )));
        }
        if inputs.ncols() == 0 {
            return Err(CoreError::contract("example has no steps"));
        }
        let mut state = DVector::zeros(self.cell.state_dim());
        for t in 0..inputs.ncols() {
            let x = inputs.column(t).into_owned();
            state = match self.cell.params() {
                CellParams::Vanilla(p) => p.step(&state, &x),
                CellParams::Lstm(p) => p.step(&state, &x),
                CellParams::Gru(p) => p.step(&state, &x),
                _ => unreachable!("constructor rejects unsupported architectures"),
            };
        }
        Ok(state)
    }

    pub fn logits(&self, state: &DVector<f64>) -> DVector<f64> {
        let r = self.w_out.ncols();
        &self.w_out * state.rows(0, r) + &self.b_out
    }

    /// Softmax cross-entropy of one example.
    pub fn example_loss(&self, ex: &Example) -> Result<f64> {
        if ex.target >= self.num_classes() {
            return Err(CoreError::contract(format!(
                "target class {} out of range for {} classes",
                ex.target,
                self.num_classes()
            )));
        }
        let state = self.final_state(&ex.inputs)?;
        let p = softmax(&self.logits(&state));
        Ok(prob_to_loss(p[ex.target]))
    }

    /// Serialize cell and readout to `base.bin` + `base.json`.
    pub fn save(&self, base: &Path) -> Result<()> {
        let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = self
            .cell
            .named_tensors()
            .into_iter()
            .map(|(n, s, d)| (n.to_string(), s, d))
            .collect();
        tensors.push((
            "readout.w".to_string(),
            vec![self.w_out.nrows(), self.w_out.ncols()],
            self.w_out.as_slice().to_vec(),
        ));
        tensors.push((
            "readout.b".to_string(),
            vec![self.b_out.len()],
            self.b_out.as_slice().to_vec(),
        ));
        let meta = serde_json::json!({
            "spec": self.cell.spec(),
            "num_classes": self.num_classes(),
        });
        checkpoint::save_tensors(base, meta, &tensors)
    }

    /// Every parameter (cell tensors, then readout weight and bias) in one
    /// flat vector with a fixed layout. Inverse of
    /// [`TrainedModel::set_flat_params`].
    pub fn flat_params(&self) -> Vec<f64> {
        flatten_params(self)
    }

    /// Overwrite every parameter from a vector laid out as
    /// [`TrainedModel::flat_params`].
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.flat_params().len();
        if flat.len() != expected {
            return Err(CoreError::contract(format!(
                "flat parameter vector has {} entries but the model holds {expected}",
                flat.len()
            )));
        }
        write_params(self, flat)
    }

    /// Mean loss and mean loss gradient of a batch, flattened as
    /// [`TrainedModel::flat_params`]. Backpropagation flows through at most
    /// the last `window` steps of each sequence. This is the exact quantity
    /// each optimizer update consumes (before clipping), exposed so the
    /// gradients can be verified against finite differences from outside.
    pub fn batch_gradients(&self, examples: &[Example], window: usize) -> Result<(f64, Vec<f64>)> {
        if examples.is_empty() {
            return Err(CoreError::contract("batch_gradients needs >= 1 example"));
        }
        let mut acc = GradAccum::zeros_like(self)?;
        let mut loss = 0.0;
        for ex in examples {
            loss += example_grads(self, ex, window, &mut acc)?;
        }
        let n = examples.len() as f64;
        Ok((loss / n, acc.into_flat(n)))
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (meta, tensors) = checkpoint::load_tensors(base)?;
        let bad = |message: String| CoreError::Format {
            path: checkpoint::sidecar_path(base).display().to_string(),
            offset: 0,
            message,
        };
        let spec: CellSpec = serde_json::from_value(
            meta.get("spec")
                .cloned()
                .ok_or_else(|| bad("missing `spec` in model sidecar".into()))?,
        )
        .map_err(|e| bad(format!("sidecar `spec` is not a cell spec: {e}")))?;
        let num_classes = meta
            .get("num_classes")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| bad("missing `num_classes` in model sidecar".into()))?
            as usize;
        let mut w_out = None;
        let mut b_out = None;
        let mut cell_tensors = Vec::new();
        for (name, shape, data) in tensors {
            match name.as_str() {
                "readout.w" => {
                    if shape.len() != 2 || shape[0] * shape[1] != data.len() {
                        return Err(bad("readout.w shape mismatch".into()));
                    }
                    w_out = Some(DMatrix::from_column_slice(shape[0], shape[1], &data));
                }
                "readout.b" => b_out = Some(DVector::from_vec(data)),
                _ => cell_tensors.push((name, shape, data)),
            }
        }
        let cell = Cell::from_named_tensors(spec, &cell_tensors)?;
        let model = TrainedModel {
            cell,
            w_out: w_out.ok_or_else(|| bad("missing readout.w tensor".into()))?,
            b_out: b_out.ok_or_else(|| bad("missing readout.b tensor".into()))?,
        };
        if model.num_classes() != num_classes {
            return Err(bad("readout tensors disagree with num_classes".into()));
        }
        Ok(model)
    }
}

/// Mean softmax cross-entropy over a dataset.
pub fn eval_loss(model: &TrainedModel, set: &SupervisedSet) -> Result<f64> {
    if set.is_empty() {
        return Err(CoreError::contract("eval_loss needs a non-empty dataset"));
    }
    let mut total = 0.0;
    for ex in &set.examples {
        total += model.example_loss(ex)?;
    }
    Ok(total / set.len() as f64)
}

/// `-ln p`, clamping probabilities that underflowed to zero but letting
/// NaN through so corrupted runs are detected, not masked.
fn prob_to_loss(p: f64) -> f64 {
    if p.is_nan() {
        f64::NAN
    } else {
        -p.max(1e-300).ln()
    }
}

fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let m = logits.max();
    let mut p = logits.map(|v| (v - m).exp());
    let s = p.sum();
    p /= s;
    p
}

/// Per-step forward caches, enough to replay the backward pass.
enum Caches {
    Vanilla {
        states: Vec<DVector<f64>>,
    },
    Lstm {
        hs: Vec<DVector<f64>>,
        cs: Vec<DVector<f64>>,
        gates: Vec<LstmGates>,
    },
    Gru {
        hs: Vec<DVector<f64>>,
        gates: Vec<GruGates>,
    },
}

fn forward_caches(model: &TrainedModel, inputs: &DMatrix<f64>) -> (Caches, DVector<f64>) {
    let steps = inputs.ncols();
    match model.cell.params() {
        CellParams::Vanilla(p) => {
            let mut states = Vec::with_capacity(steps + 1);
            states.push(DVector::zeros(p.b.len()));
            for t in 0..steps {
                let x = inputs.column(t).into_owned();
                let next = p.step(&states[t], &x);
                states.push(next);
            }
            let last = states[steps].clone();
            (Caches::Vanilla { states }, last)
        }
        CellParams::Lstm(p) => {
            let hs_dim = p.hidden_size();
            let mut hs = Vec::with_capacity(steps + 1);
            let mut cs = Vec::with_capacity(steps + 1);
            let mut gates = Vec::with_capacity(steps);
            hs.push(DVector::zeros(hs_dim));
            cs.push(DVector::zeros(hs_dim));
            for t in 0..steps {
                let x = inputs.column(t).into_owned();
                let g = p.gates(&hs[t], &cs[t], &x);
                hs.push(g.o.component_mul(&g.tanh_c_next));
                cs.push(g.c_next.clone());
                gates.push(g);
            }
            let mut last = DVector::zeros(2 * hs_dim);
            last.rows_mut(0, hs_dim).copy_from(&hs[steps]);
            last.rows_mut(hs_dim, hs_dim).copy_from(&cs[steps]);
            (Caches::Lstm { hs, cs, gates }, last)
        }
        CellParams::Gru(p) => {
            let hs_dim = p.hidden_size();
            let mut hs = Vec::with_capacity(steps + 1);
            let mut gates = Vec::with_capacity(steps);
            hs.push(DVector::zeros(hs_dim));
            for t in 0..steps {
                let x = inputs.column(t).into_owned();
                let g = p.gates(&hs[t], &x);
                let next =
                    g.z.zip_zip_map(&g.n, &hs[t], |z, n, h| (1.0 - z) * n + z * h);
                hs.push(next);
                gates.push(g);
            }
            let last = hs[steps].clone();
            (Caches::Gru { hs, gates }, last)
        }
        _ => unreachable!("constructor rejects unsupported architectures"),
    }
}

/// Gradient twin of a model: same shapes, accumulated by `+=`.
struct GradAccum {
    cell_grads: Cell,
    w_out: DMatrix<f64>,
    b_out: DVector<f64>,
}

impl GradAccum {
    fn zeros_like(model: &TrainedModel) -> Result<Self> {
        let tensors: Vec<(String, Vec<usize>, Vec<f64>)> = model
            .cell
            .named_tensors()
            .into_iter()
            .map(|(n, s, d)| (n.to_string(), s, vec![0.0; d.len()]))
            .collect();
        Ok(GradAccum {
            cell_grads: Cell::from_named_tensors(model.cell.spec().clone(), &tensors)?,
            w_out: DMatrix::zeros(model.w_out.nrows(), model.w_out.ncols()),
            b_out: DVector::zeros(model.b_out.len()),
        })
    }

    /// Flatten in the same tensor order as `flatten_params`, scaled by
    /// `1 / batch_len`.
    fn into_flat(self, batch_len: f64) -> Vec<f64> {
        let mut flat = Vec::new();
        for (_, _, data) in self.cell_grads.named_tensors() {
            flat.extend(data);
        }
        flat.extend_from_slice(self.w_out.as_slice());
        flat.extend_from_slice(self.b_out.as_slice());
        for v in &mut flat {
            *v /= batch_len;
        }
        flat
    }
}

fn flatten_params(model: &TrainedModel) -> Vec<f64> {
    let mut flat = Vec::new();
    for (_, _, data) in model.cell.named_tensors() {
        flat.extend(data);
    }
    flat.extend_from_slice(model.w_out.as_slice());
    flat.extend_from_slice(model.b_out.as_slice());
    flat
}

fn write_params(model: &mut TrainedModel, flat: &[f64]) -> Result<()> {
    let mut tensors = Vec::new();
    let mut pos = 0;
    for (name, shape, data) in model.cell.named_tensors() {
        let n = data.len();
        tensors.push((name.to_string(), shape, flat[pos..pos + n].to_vec()));
        pos += n;
    }
    model.cell = Cell::from_named_tensors(model.cell.spec().clone(), &tensors)?;
    let w_len = model.w_out.len();
    model
        .w_out
        .as_mut_slice()
        .copy_from_slice(&flat[pos..pos + w_len]);
    pos += w_len;
    model.b_out.as_mut_slice().copy_from_slice(&flat[pos..]);
    Ok(())
}

/// Accumulate the loss gradient of one example into `acc`; returns the loss.
///
/// Backpropagation runs through at most the last `window` steps; earlier
/// steps contribute to the forward trajectory only.
fn example_grads(
    model: &TrainedModel,
    ex: &Example,
    window: usize,
    acc: &mut GradAccum,
) -> Result<f64> {
    if ex.inputs.nrows() != model.cell.input_dim() {
        return Err(CoreError::contract(format!(
            "example input dimension {} does not match cell input dimension {}",
            ex.inputs.nrows(),
            model.cell.input_dim()
        )));
    }
    if ex.inputs.ncols() == 0 {
        return Err(CoreError::contract("example has no steps"));
    }
    if ex.target >= model.num_classes() {
        return Err(CoreError::contract(format!(
            "target class {} out of range for {} classes",
            ex.target,
            model.num_classes()
        )));
    }
    let (caches, final_state) = forward_caches(model, &ex.inputs);
    let r = model.w_out.ncols();
    let read = final_state.rows(0, r).into_owned();
    let p = softmax(&(&model.w_out * &read + &model.b_out));
    let loss = prob_to_loss(p[ex.target]);
    let mut dy = p;
    dy[ex.target] -= 1.0;
    acc.w_out.ger(1.0, &dy, &read, 1.0);
    acc.b_out += &dy;
    let dread = model.w_out.tr_mul(&dy);
    match (model.cell.params(), acc.cell_grads.params_mut(), caches) {
        (CellParams::Vanilla(p), CellParams::Vanilla(g), Caches::Vanilla { states }) => {
            vanilla_backward(p, g, &states, &ex.inputs, window, dread)
        }
        (CellParams::Lstm(p), CellParams::Lstm(g), Caches::Lstm { hs, cs, gates }) => {
            lstm_backward(p, g, &hs, &cs, &gates, &ex.inputs, window, dread)
        }
        (CellParams::Gru(p), CellParams::Gru(g), Caches::Gru { hs, gates }) => {
            gru_backward(p, g, &hs, &gates, &ex.inputs, window, dread)
        }
        _ => unreachable!("grad twin mirrors the model architecture"),
    }
    Ok(loss)
}

fn vanilla_backward(
    p: &VanillaParams,
    g: &mut VanillaParams,
    states: &[DVector<f64>],
    inputs: &DMatrix<f64>,
    window: usize,
    mut dh: DVector<f64>,
) {
    let steps = states.len() - 1;
    let start = steps.saturating_sub(window);
    for t in (start..steps).rev() {
        // h' = tanh(W_ih x + W_hh h + b); du is the pre-activation grad.
        let du = dh.zip_map(&states[t + 1], |d, h| d * (1.0 - h * h));
        g.w_ih.ger(1.0, &du, &inputs.column(t), 1.0);
        g.w_hh.ger(1.0, &du, &states[t], 1.0);
        g.b += &du;
        dh = p.w_hh.tr_mul(&du);
    }
}

#[allow(clippy::too_many_arguments)]
fn lstm_backward(
    p: &LstmParams,
    g: &mut LstmParams,
    hs: &[DVector<f64>],
    cs: &[DVector<f64>],
    gates: &[LstmGates],
    inputs: &DMatrix<f64>,
    window: usize,
    mut dh: DVector<f64>,
) {
    let steps = gates.len();
    let start = steps.saturating_sub(window);
    let mut dc = DVector::zeros(dh.len());
    for t in (start..steps).rev() {
        let gt = &gates[t];
        // h' = o ∘ tanh(c'), c' = f ∘ c + i ∘ tanh-candidate g.
        let d_o = dh.component_mul(&gt.tanh_c_next);
        let dc_total =
            dc + dh.zip_zip_map(&gt.o, &gt.tanh_c_next, |d, o, th| d * o * (1.0 - th * th));
        let di = dc_total.component_mul(&gt.g);
        let df = dc_total.component_mul(&cs[t]);
        let dg = dc_total.component_mul(&gt.i);
        let da_i = di.zip_map(&gt.i, |d, v| d * v * (1.0 - v));
        let da_f = df.zip_map(&gt.f, |d, v| d * v * (1.0 - v));
        let da_g = dg.zip_map(&gt.g, |d, v| d * (1.0 - v * v));
        let da_o = d_o.zip_map(&gt.o, |d, v| d * v * (1.0 - v));
        let x = inputs.column(t);
        let h_prev = &hs[t];
        g.w_ii.ger(1.0, &da_i, &x, 1.0);
        g.w_if.ger(1.0, &da_f, &x, 1.0);
        g.w_ig.ger(1.0, &da_g, &x, 1.0);
        g.w_io.ger(1.0, &da_o, &x, 1.0);
        g.w_hi.ger(1.0, &da_i, h_prev, 1.0);
        g.w_hf.ger(1.0, &da_f, h_prev, 1.0);
        g.w_hg.ger(1.0, &da_g, h_prev, 1.0);
        g.w_ho.ger(1.0, &da_o, h_prev, 1.0);
        g.b_i += &da_i;
        g.b_f += &da_f;
        g.b_g += &da_g;
        g.b_o += &da_o;
        dh = p.w_hi.tr_mul(&da_i)
            + p.w_hf.tr_mul(&da_f)
            + p.w_hg.tr_mul(&da_g)
            + p.w_ho.tr_mul(&da_o);
        dc = dc_total.component_mul(&gt.f);
    }
}

fn gru_backward(
    p: &GruParams,
    g: &mut GruParams,
    hs: &[DVector<f64>],
    gates: &[GruGates],
    inputs: &DMatrix<f64>,
    window: usize,
    mut dh: DVector<f64>,
) {
    let steps = gates.len();
    let start = steps.saturating_sub(window);
    for t in (start..steps).rev() {
        let gt = &gates[t];
        let h_prev = &hs[t];
        // h' = (1 - z) ∘ n + z ∘ h, n = tanh(W_in x + b_in + r ∘ m),
        // m = W_hn h + b_hn.
        let dz = dh.zip_zip_map(&gt.n, h_prev, |d, n, h| d * (h - n));
        let da_n = dh.zip_zip_map(&gt.z, &gt.n, |d, z, n| d * (1.0 - z) * (1.0 - n * n));
        let dm = da_n.component_mul(&gt.r);
        let dr = da_n.component_mul(&gt.m);
        let da_r = dr.zip_map(&gt.r, |d, v| d * v * (1.0 - v));
        let da_z = dz.zip_map(&gt.z, |d, v| d * v * (1.0 - v));
        let x = inputs.column(t);
        g.w_ir.ger(1.0, &da_r, &x, 1.0);
        g.w_iz.ger(1.0, &da_z, &x, 1.0);
        g.w_in.ger(1.0, &da_n, &x, 1.0);
        g.w_hr.ger(1.0, &da_r, h_prev, 1.0);
        g.w_hz.ger(1.0, &da_z, h_prev, 1.0);
        g.w_hn.ger(1.0, &dm, h_prev, 1.0);
        g.b_r += &da_r;
        g.b_z += &da_z;
        g.b_in += &da_n;
        g.b_hn += &dm;
        dh = dh.component_mul(&gt.z)
            + p.w_hr.tr_mul(&da_r)
            + p.w_hz.tr_mul(&da_z)
            + p.w_hn.tr_mul(&dm);
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    /// Validation loss after each completed epoch.
    pub loss_curve: Vec<f64>,
    /// `(fraction, snapshot)` for every requested checkpoint fraction,
    /// in schedule order.
    pub checkpoints: Vec<(f64, TrainedModel)>,
    /// Validation loss of each snapshot, same order as `checkpoints`.
    pub checkpoint_losses: Vec<(f64, f64)>,
    /// Set when a non-finite loss aborted training.
    pub failed: bool,
    /// Smallest validation loss observed; `+inf` when none was finite.
    pub best_loss: f64,
}

/// Minimize softmax cross-entropy by truncated backpropagation through time.
///
/// Checkpoint fractions refer to the global update budget
/// (`epochs × batches-per-epoch`), so sub-epoch snapshots are exact.
pub fn bptt_train(
    cell: Cell,
    train: &SupervisedSet,
    val: &SupervisedSet,
    config: &SupervisedTrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_supported(&cell)?;
    if train.is_empty() || val.is_empty() {
        return Err(CoreError::contract(
            "training needs non-empty train and validation sets",
        ));
    }
    if train.num_classes != val.num_classes {
        return Err(CoreError::contract(
            "train and validation sets disagree on the class count",
        ));
    }
    let mut model = TrainedModel::new(cell, train.num_classes)?;

    let updates_per_epoch = train.len().div_ceil(config.batch_size);
    let total_updates = updates_per_epoch * config.epochs;
    // (fraction, due-at-update-index), sorted so snapshots pop in order.
    let mut schedule: Vec<(f64, usize)> = config
        .checkpoint_fractions
        .iter()
        .map(|&f| (f, (f * total_updates as f64).round() as usize))
        .collect();
    schedule.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.total_cmp(&b.0)));
    let mut next_checkpoint = 0;
    let mut checkpoints = Vec::new();
    let mut checkpoint_losses = Vec::new();

    let mut flat = flatten_params(&model);
    let mut adam = Adam::new(flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut loss_curve = Vec::new();
    let mut failed = false;
    let mut updates_done = 0usize;

    macro_rules! take_due_checkpoints {
        () => {
            while next_checkpoint < schedule.len() && schedule[next_checkpoint].1 <= updates_done {
                let fraction = schedule[next_checkpoint].0;
                checkpoints.push((fraction, model.clone()));
                checkpoint_losses.push((fraction, eval_loss(&model, val)?));
                next_checkpoint += 1;
            }
        };
    }
    take_due_checkpoints!();

    'epochs: for _ in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut acc = GradAccum::zeros_like(&model)?;
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += example_grads(&model, &train.examples[i], config.seq_len, &mut acc)?;
            }
            if !batch_loss.is_finite() {
                failed = true;
                break 'epochs;
            }
            let mut grad = acc.into_flat(batch.len() as f64);
            clip_global_norm(&mut grad, config.gradient_clip);
            match config.optimizer {
                Optimizer::Sgd => sgd_step(&mut flat, &grad, config.learning_rate),
                Optimizer::Adam => adam.step(&mut flat, &grad, config.learning_rate),
            }
            write_params(&mut model, &flat)?;
            updates_done += 1;
            take_due_checkpoints!();
        }
        let vl = eval_loss(&model, val)?;
        loss_curve.push(vl);
        if !vl.is_finite() {
            failed = true;
            break;
        }
    }
    // Snapshots not reached (aborted run) record the model as it stands.
    while next_checkpoint < schedule.len() {
        let fraction = schedule[next_checkpoint].0;
        checkpoints.push((fraction, model.clone()));
        checkpoint_losses.push((fraction, eval_loss(&model, val)?));
        next_checkpoint += 1;
    }
    let best_loss = loss_curve
        .iter()
        .copied()
        .filter(|l| l.is_finite())
        .fold(f64::INFINITY, f64::min);
    Ok(TrainOutcome {
        model,
        loss_curve,
        checkpoints,
        checkpoint_losses,
        failed,
        best_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{init_cell, max_relative_error};
    use rand::Rng;

    fn random_set(
        n_examples: usize,
        input_dim: usize,
        steps: usize,
        num_classes: usize,
        seed: u64,
    ) -> SupervisedSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let examples = (0..n_examples)
            .map(|_| Example {
                inputs: DMatrix::from_fn(input_dim, steps, |_, _| rng.random_range(-1.0..1.0)),
                target: rng.random_range(0..num_classes),
            })
            .collect();
        SupervisedSet {
            examples,
            num_classes,
            input_dim,
        }
    }

    fn small_model(arch: Architecture, num_classes: usize, seed: u64) -> TrainedModel {
        let spec = CellSpec::new(arch, 4, 3, 0.5, seed).unwrap();
        let mut model = TrainedModel::new(init_cell(&spec).unwrap(), num_classes).unwrap();
        // A nonzero readout so gradients flow into the cell parameters.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        model.w_out = DMatrix::from_fn(num_classes, model.w_out.ncols(), |_, _| {
            rng.random_range(-1.0..1.0)
        });
        model.b_out = DVector::from_fn(num_classes, |_, _| rng.random_range(-0.5..0.5));
        model
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        for arch in [
            Architecture::VanillaRnn,
            Architecture::Lstm,
            Architecture::Gru,
        ] {
            let model = small_model(arch, 3, 17);
            let ex = &random_set(1, 3, 5, 3, 99).examples[0];
            let mut acc = GradAccum::zeros_like(&model).unwrap();
            example_grads(&model, ex, usize::MAX, &mut acc).unwrap();
            let analytic = acc.into_flat(1.0);

            let base = flatten_params(&model);
            let eps = 1e-5;
            let mut numeric = vec![0.0; base.len()];
            let mut probe = model.clone();
            for i in 0..base.len() {
                let mut plus = base.clone();
                plus[i] += eps;
                write_params(&mut probe, &plus).unwrap();
                let lp = probe.example_loss(ex).unwrap();
                let mut minus = base.clone();
                minus[i] -= eps;
                write_params(&mut probe, &minus).unwrap();
                let lm = probe.example_loss(ex).unwrap();
                numeric[i] = (lp - lm) / (2.0 * eps);
            }
            let a = DMatrix::from_vec(base.len(), 1, analytic);
            let n = DMatrix::from_vec(base.len(), 1, numeric);
            let err = max_relative_error(&a, &n);
            assert!(err < 1e-3, "{arch}: gradient error {err}");
        }
    }

    #[test]
    fn batch_gradients_average_per_example_gradients() {
        let model = small_model(Architecture::VanillaRnn, 3, 41);
        let set = random_set(3, 3, 5, 3, 55);
        let (loss, grad) = model.batch_gradients(&set.examples, usize::MAX).unwrap();
        // Oracle: accumulate each example alone and average by hand.
        let mut sum_loss = 0.0;
        let mut sum_grad = vec![0.0; grad.len()];
        for ex in &set.examples {
            let (l, g) = model
                .batch_gradients(std::slice::from_ref(ex), usize::MAX)
                .unwrap();
            sum_loss += l;
            for (acc, v) in sum_grad.iter_mut().zip(&g) {
                *acc += v;
            }
        }
        assert!((loss - sum_loss / 3.0).abs() < 1e-12);
        for (got, want) in grad.iter().zip(&sum_grad) {
            assert!((got - want / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_params_roundtrip_and_length_check() {
        let mut model = small_model(Architecture::Gru, 2, 63);
        let flat = model.flat_params();
        let mut shifted = flat.clone();
        shifted[0] += 0.25;
        model.set_flat_params(&shifted).unwrap();
        assert_eq!(model.flat_params(), shifted);
        assert!(model.set_flat_params(&flat[1..]).is_err());
    }

    #[test]
    fn truncation_window_covering_the_sequence_changes_nothing() {
        let model = small_model(Architecture::Gru, 3, 5);
        let ex = &random_set(1, 3, 6, 3, 7).examples[0];
        let mut full = GradAccum::zeros_like(&model).unwrap();
        example_grads(&model, ex, usize::MAX, &mut full).unwrap();
        let mut exact = GradAccum::zeros_like(&model).unwrap();
        example_grads(&model, ex, 6, &mut exact).unwrap();
        let mut truncated = GradAccum::zeros_like(&model).unwrap();
        example_grads(&model, ex, 1, &mut truncated).unwrap();
        let full = full.into_flat(1.0);
        let exact = exact.into_flat(1.0);
        let truncated = truncated.into_flat(1.0);
        assert_eq!(full, exact);
        assert_ne!(full, truncated);
    }

    #[test]
    fn untrained_model_predicts_uniformly() {
        let spec = CellSpec::new(Architecture::Lstm, 8, 5, 0.2, 3).unwrap();
        let model = TrainedModel::new(init_cell(&spec).unwrap(), 10).unwrap();
        let set = random_set(6, 5, 7, 10, 12);
        let loss = eval_loss(&model, &set).unwrap();
        assert!((loss - 10.0f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn saturated_correct_logit_gives_zero_loss() {
        let spec = CellSpec::new(Architecture::VanillaRnn, 4, 2, 0.3, 8).unwrap();
        let mut model = TrainedModel::new(init_cell(&spec).unwrap(), 2).unwrap();
        model.b_out[0] = 1000.0;
        let mut set = random_set(5, 2, 4, 2, 21);
        for ex in &mut set.examples {
            ex.target = 0;
        }
        assert_eq!(eval_loss(&model, &set).unwrap(), 0.0);
    }

    #[test]
    fn eval_matches_a_naive_recomputation() {
        let model = small_model(Architecture::Lstm, 4, 33);
        let set = random_set(9, 3, 6, 4, 44);
        let expected: f64 = set
            .examples
            .iter()
            .map(|ex| {
                let s = model.final_state(&ex.inputs).unwrap();
                let logits = model.logits(&s);
                let z: f64 = logits.iter().map(|v| v.exp()).sum();
                -(logits[ex.target].exp() / z).ln()
            })
            .sum::<f64>()
            / 9.0;
        let got = eval_loss(&model, &set).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn one_class_lstm_drives_loss_near_zero() {
        let spec = CellSpec::new(Architecture::Lstm, 32, 4, 0.2, 6).unwrap();
        let cell = init_cell(&spec).unwrap();
        let mut set = random_set(40, 4, 8, 3, 15);
        for ex in &mut set.examples {
            ex.target = 1;
        }
        let (train, val) = set.split(0.8, 1).unwrap();
        let config = SupervisedTrainConfig {
            batch_size: 4,
            learning_rate: 0.05,
            ..SupervisedTrainConfig::new(5, 0.05, 2)
        };
        let out = bptt_train(cell, &train, &val, &config).unwrap();
        assert!(!out.failed);
        assert_eq!(out.loss_curve.len(), 5);
        assert!(
            out.best_loss < 0.01,
            "one-class validation loss {}",
            out.best_loss
        );
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let spec = CellSpec::new(Architecture::Gru, 6, 3, 0.3, 9).unwrap();
        let set = random_set(20, 3, 5, 3, 31);
        let (train, val) = set.split(0.8, 4).unwrap();
        let config = SupervisedTrainConfig::new(2, 0.01, 7);
        let a = bptt_train(init_cell(&spec).unwrap(), &train, &val, &config).unwrap();
        let b = bptt_train(init_cell(&spec).unwrap(), &train, &val, &config).unwrap();
        let bits = |c: &[f64]| c.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.loss_curve), bits(&b.loss_curve));
        assert_eq!(a.model.w_out, b.model.w_out);
    }

    #[test]
    fn checkpoints_land_on_the_update_schedule() {
        let spec = CellSpec::new(Architecture::VanillaRnn, 5, 3, 0.3, 14).unwrap();
        let set = random_set(16, 3, 4, 2, 8);
        let (train, val) = set.split(0.75, 2).unwrap();
        let config = SupervisedTrainConfig {
            batch_size: 3,
            checkpoint_fractions: vec![0.0, 0.5, 1.0],
            ..SupervisedTrainConfig::new(2, 0.01, 3)
        };
        let out = bptt_train(init_cell(&spec).unwrap(), &train, &val, &config).unwrap();
        let fractions: Vec<f64> = out.checkpoints.iter().map(|(f, _)| *f).collect();
        assert_eq!(fractions, vec![0.0, 0.5, 1.0]);
        // The fraction-0 snapshot is the untrained model: uniform predictor.
        let (_, first) = &out.checkpoints[0];
        assert_eq!(first.w_out, DMatrix::zeros(2, 5));
        assert!((out.checkpoint_losses[0].1 - 2.0f64.ln()).abs() < 1e-12);
        // The fraction-1 snapshot is the final model.
        let (_, last) = &out.checkpoints[2];
        assert_eq!(last.w_out, out.model.w_out);
    }

    #[test]
    fn model_roundtrip_reproduces_eval_loss() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CellSpec::new(Architecture::Gru, 7, 4, 0.4, 11).unwrap();
        let set = random_set(12, 4, 5, 3, 5);
        let (train, val) = set.split(0.75, 9).unwrap();
        let config = SupervisedTrainConfig::new(1, 0.01, 13);
        let out = bptt_train(init_cell(&spec).unwrap(), &train, &val, &config).unwrap();
        let base = dir.path().join("model");
        out.model.save(&base).unwrap();
        let loaded = TrainedModel::load(&base).unwrap();
        let a = eval_loss(&out.model, &val).unwrap();
        let b = eval_loss(&loaded, &val).unwrap();
        assert!((a - b).abs() <= 1e-12);
        assert_eq!(out.model.cell, loaded.cell);
    }

    #[test]
    fn nan_inputs_mark_the_variant_failed() {
        let spec = CellSpec::new(Architecture::VanillaRnn, 4, 2, 0.3, 2).unwrap();
        let mut set = random_set(8, 2, 4, 2, 3);
        set.examples[0].inputs[(0, 0)] = f64::NAN;
        let val = random_set(4, 2, 4, 2, 9);
        let config = SupervisedTrainConfig::new(2, 0.01, 1);
        let out = bptt_train(init_cell(&spec).unwrap(), &set, &val, &config).unwrap();
        assert!(out.failed);
        assert!(out.best_loss.is_infinite());
    }

    #[test]
    fn unsupported_architectures_are_rejected() {
        let spec = CellSpec::new(Architecture::Asrnn, 6, 2, 0.2, 4).unwrap();
        assert!(TrainedModel::new(init_cell(&spec).unwrap(), 3).is_err());
    }
}
