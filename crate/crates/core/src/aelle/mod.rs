//! Autoencoder over Lyapunov spectra with a joint loss-prediction head,
//! plus the principal-component embedding of its latent space.
//!
//! The model maps a spectrum `Z` (length `L`) to a reconstruction
//! `Ẑ = ψ(φ(Z))` and a scalar loss prediction `T̂ = ξ(φ(Z))`. Training
//! minimizes `mean((Z - Ẑ)²) + α·‖T - T̂‖` with the prediction weight `α`
//! ramped in once reconstruction has converged, so the latent space first
//! organizes around spectrum shape and is then sharpened by task accuracy.

mod pca;

pub use pca::{pca_fit, pca_project, Embedding};

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::checkpoint;
use crate::error::{CoreError, Result};
use crate::lyapunov::SpectrumRecord;
use crate::optim::Adam;

/// Offset inside the log transform of regression targets, so losses that
/// reach exactly zero stay finite: `t = ln(loss + TARGET_EPS)`.
pub const TARGET_EPS: f64 = 1e-8;

/// Epoch at which the α ramp starts when the adaptive plateau rule never
/// triggers.
pub const RAMP_START_FALLBACK: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LNorm {
    L1,
    L2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    /// Encoder layer widths, ending in the latent dimension; the decoder
    /// mirrors them.
    pub layer_sizes: Vec<usize>,
    pub l_norm: LNorm,
    pub alpha_max: f64,
    /// Fixed ramp start; `None` starts the ramp adaptively at the epoch
    /// where smoothed reconstruction improvement falls below 1% (fallback
    /// [`RAMP_START_FALLBACK`]).
    pub alpha_ramp_start_epoch: Option<usize>,
    pub alpha_ramp_epochs: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl AeConfig {
    pub fn new(seed: u64) -> Self {
        AeConfig {
            layer_sizes: vec![128, 64, 32],
            l_norm: LNorm::L1,
            alpha_max: 1.0,
            alpha_ramp_start_epoch: None,
            alpha_ramp_epochs: 50,
            epochs: 300,
            learning_rate: 1e-3,
            batch_size: 32,
            seed,
        }
    }

    pub fn latent_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.is_empty() || self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(CoreError::contract(
                "layer_sizes must be non-empty with positive widths",
            ));
        }
        if !(self.alpha_max >= 0.0 && self.alpha_max.is_finite()) {
            return Err(CoreError::contract("alpha_max must be finite and >= 0"));
        }
        if self.alpha_ramp_epochs == 0 {
            return Err(CoreError::contract("alpha_ramp_epochs must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(CoreError::contract("training needs epochs >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::contract("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(CoreError::contract("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Prediction weight at `epoch`: zero before the ramp, linear to
/// `alpha_max` over `alpha_ramp_epochs`, constant afterwards.
pub fn alpha_at(config: &AeConfig, epoch: usize) -> f64 {
    ramp_alpha(
        config.alpha_max,
        config.alpha_ramp_start_epoch.unwrap_or(RAMP_START_FALLBACK),
        config.alpha_ramp_epochs,
        epoch,
    )
}

fn ramp_alpha(alpha_max: f64, start: usize, ramp_epochs: usize, epoch: usize) -> f64 {
    if epoch <= start {
        return 0.0;
    }
    let frac = ((epoch - start) as f64 / ramp_epochs as f64).min(1.0);
    alpha_max * frac
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `out × in`; the layer computes `W x + b`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl DenseLayer {
    fn glorot(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (out + inp) as f64).sqrt();
        DenseLayer {
            w: DMatrix::from_fn(out, inp, |_, _| rng.random_range(-bound..bound)),
            b: DVector::zeros(out),
        }
    }

    fn zeros(out: usize, inp: usize) -> Self {
        DenseLayer {
            w: DMatrix::zeros(out, inp),
            b: DVector::zeros(out),
        }
    }

    fn affine(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w * x + &self.b
    }
}

/// The autoencoder: encoder `φ`, mirrored decoder `ψ`, affine predictor
/// `ξ`, with tanh on hidden layers and linear outputs.
///
/// The raw network operates in standardized space. The per-index input
/// statistics and the log-target statistics live on the model so records
/// can be standardized for inference exactly as during training;
/// [`AeModel::reconstruct`] and [`AeModel::predict_target_loss`]
/// de-standardize back to original units.
#[derive(Clone, Debug, PartialEq)]
pub struct AeModel {
    pub encoder: Vec<DenseLayer>,
    pub decoder: Vec<DenseLayer>,
    pub predictor: DenseLayer,
    pub l_norm: LNorm,
    pub input_mean: DVector<f64>,
    pub input_std: DVector<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    /// Mean training loss per epoch (standardized space).
    pub loss_history: Vec<f64>,
    /// Epoch at which the α ramp actually started.
    pub ramp_start: usize,
}

/// Fresh model with Glorot-uniform weights and identity statistics.
pub fn ae_init(input_len: usize, config: &AeConfig) -> Result<AeModel> {
    config.validate()?;
    if input_len == 0 {
        return Err(CoreError::contract("autoencoder input length must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dims = vec![input_len];
    dims.extend_from_slice(&config.layer_sizes);
    let encoder: Vec<DenseLayer> = dims
        .windows(2)
        .map(|w| DenseLayer::glorot(w[1], w[0], &mut rng))
        .collect();
    let decoder: Vec<DenseLayer> = dims
        .windows(2)
        .rev()
        .map(|w| DenseLayer::glorot(w[0], w[1], &mut rng))
        .collect();
    let predictor = DenseLayer::glorot(1, config.latent_dim(), &mut rng);
    Ok(AeModel {
        encoder,
        decoder,
        predictor,
        l_norm: config.l_norm,
        input_mean: DVector::zeros(input_len),
        input_std: DVector::from_element(input_len, 1.0),
        target_mean: 0.0,
        target_std: 1.0,
        loss_history: Vec::new(),
        ramp_start: 0,
    })
}

fn run_stack(layers: &[DenseLayer], x: &DVector<f64>) -> DVector<f64> {
    let mut h = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        h = layer.affine(&h);
        if i + 1 < layers.len() {
            h.apply(|v| *v = v.tanh());
        }
    }
    h
}

/// One raw forward pass: `(Ẑ, T̂, latent)`. No standardization — a
/// zero-weight model maps everything to zero.
pub fn ae_forward(model: &AeModel, z: &DVector<f64>) -> Result<(DVector<f64>, f64, DVector<f64>)> {
    if z.len() != model.input_len() {
        return Err(CoreError::contract(format!(
            "spectrum length {} does not match model input length {}",
            z.len(),
            model.input_len()
        )));
    }
    let latent = run_stack(&model.encoder, z);
    let zhat = run_stack(&model.decoder, &latent);
    let that = model.predictor.affine(&latent)[0];
    Ok((zhat, that, latent))
}

/// The joint objective: reconstruction MSE plus `α`-weighted prediction
/// error (`|T - T̂|` for L1, `(T - T̂)²` for L2).
pub fn ae_loss(
    z: &DVector<f64>,
    zhat: &DVector<f64>,
    t: f64,
    that: f64,
    alpha: f64,
    l_norm: LNorm,
) -> f64 {
    assert_eq!(z.len(), zhat.len(), "spectrum and reconstruction lengths");
    assert!(alpha >= 0.0, "alpha must be non-negative");
    let mse = (z - zhat).norm_squared() / z.len() as f64;
    let pen = match l_norm {
        LNorm::L1 => (t - that).abs(),
        LNorm::L2 => (t - that) * (t - that),
    };
    mse + alpha * pen
}

impl AeModel {
    pub fn input_len(&self) -> usize {
        self.encoder
            .first()
            .map(|l| l.w.ncols())
            .unwrap_or_default()
    }

    pub fn latent_dim(&self) -> usize {
        self.predictor.w.ncols()
    }

    fn standardized(&self, spectrum: &[f64]) -> Result<DVector<f64>> {
        if spectrum.len() != self.input_len() {
            return Err(CoreError::contract(format!(
                "spectrum length {} does not match model input length {}",
                spectrum.len(),
                self.input_len()
            )));
        }
        Ok(DVector::from_fn(spectrum.len(), |i, _| {
            (spectrum[i] - self.input_mean[i]) / self.input_std[i]
        }))
    }

    /// Latent code of a spectrum in original units.
    pub fn latent(&self, spectrum: &[f64]) -> Result<DVector<f64>> {
        Ok(run_stack(&self.encoder, &self.standardized(spectrum)?))
    }

    /// Reconstruction in original units (per-step log-expansion rates).
    pub fn reconstruct(&self, spectrum: &[f64]) -> Result<Vec<f64>> {
        let (zhat, _, _) = ae_forward(self, &self.standardized(spectrum)?)?;
        Ok((0..zhat.len())
            .map(|i| zhat[i] * self.input_std[i] + self.input_mean[i])
            .collect())
    }

    /// Predicted task loss in original units.
    pub fn predict_target_loss(&self, spectrum: &[f64]) -> Result<f64> {
        let (_, that, _) = ae_forward(self, &self.standardized(spectrum)?)?;
        Ok((that * self.target_std + self.target_mean).exp() - TARGET_EPS)
    }

    /// Standardized-space log target for a task loss.
    pub fn standardize_target(&self, target_loss: f64) -> f64 {
        ((target_loss + TARGET_EPS).ln() - self.target_mean) / self.target_std
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        let push_layer = |tensors: &mut Vec<(String, Vec<usize>, Vec<f64>)>,
                          name: String,
                          layer: &DenseLayer| {
            tensors.push((
                format!("{name}.w"),
                vec![layer.w.nrows(), layer.w.ncols()],
                layer.w.as_slice().to_vec(),
            ));
            tensors.push((
                format!("{name}.b"),
                vec![layer.b.len()],
                layer.b.as_slice().to_vec(),
            ));
        };
        for (i, layer) in self.encoder.iter().enumerate() {
            push_layer(&mut tensors, format!("encoder.{i}"), layer);
        }
        for (i, layer) in self.decoder.iter().enumerate() {
            push_layer(&mut tensors, format!("decoder.{i}"), layer);
        }
        push_layer(&mut tensors, "predictor".to_string(), &self.predictor);
        tensors.push((
            "stats.input_mean".to_string(),
            vec![self.input_mean.len()],
            self.input_mean.as_slice().to_vec(),
        ));
        tensors.push((
            "stats.input_std".to_string(),
            vec![self.input_std.len()],
            self.input_std.as_slice().to_vec(),
        ));
        tensors.push((
            "history.loss".to_string(),
            vec![self.loss_history.len()],
            self.loss_history.clone(),
        ));
        let meta = serde_json::json!({
            "kind": "ae-model",
            "l_norm": self.l_norm,
            "target_mean": self.target_mean,
            "target_std": self.target_std,
            "ramp_start": self.ramp_start,
            "encoder_layers": self.encoder.len(),
            "decoder_layers": self.decoder.len(),
        });
        checkpoint::save_tensors(base, meta, &tensors)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (meta, tensors) = checkpoint::load_tensors(base)?;
        let bad = |message: String| CoreError::Format {
            path: checkpoint::sidecar_path(base).display().to_string(),
            offset: 0,
            message,
        };
        let field = |name: &str| {
            meta.get(name)
                .cloned()
                .ok_or_else(|| bad(format!("missing `{name}` in model sidecar")))
        };
        let l_norm: LNorm = serde_json::from_value(field("l_norm")?)
            .map_err(|e| bad(format!("bad l_norm: {e}")))?;
        let target_mean = field("target_mean")?
            .as_f64()
            .ok_or_else(|| bad("target_mean is not a number".into()))?;
        let target_std = field("target_std")?
            .as_f64()
            .ok_or_else(|| bad("target_std is not a number".into()))?;
        let ramp_start = field("ramp_start")?
            .as_u64()
            .ok_or_else(|| bad("ramp_start is not an integer".into()))?
            as usize;
        let encoder_layers = field("encoder_layers")?
            .as_u64()
            .ok_or_else(|| bad("encoder_layers is not an integer".into()))?
            as usize;
        let decoder_layers = field("decoder_layers")?
            .as_u64()
            .ok_or_else(|| bad("decoder_layers is not an integer".into()))?
            as usize;

        let mut by_name: std::collections::HashMap<String, (Vec<usize>, Vec<f64>)> =
            tensors.into_iter().map(|(n, s, d)| (n, (s, d))).collect();
        let mut take_layer = |name: String| -> Result<DenseLayer> {
            let (ws, wd) = by_name
                .remove(&format!("{name}.w"))
                .ok_or_else(|| bad(format!("missing tensor {name}.w")))?;
            if ws.len() != 2 || ws[0] * ws[1] != wd.len() {
                return Err(bad(format!("tensor {name}.w shape mismatch")));
            }
            let (_, bd) = by_name
                .remove(&format!("{name}.b"))
                .ok_or_else(|| bad(format!("missing tensor {name}.b")))?;
            Ok(DenseLayer {
                w: DMatrix::from_column_slice(ws[0], ws[1], &wd),
                b: DVector::from_vec(bd),
            })
        };
        let encoder: Vec<DenseLayer> = (0..encoder_layers)
            .map(|i| take_layer(format!("encoder.{i}")))
            .collect::<Result<_>>()?;
        let decoder: Vec<DenseLayer> = (0..decoder_layers)
            .map(|i| take_layer(format!("decoder.{i}")))
            .collect::<Result<_>>()?;
        let predictor = take_layer("predictor".to_string())?;
        let mean = by_name
            .remove("stats.input_mean")
            .ok_or_else(|| bad("missing tensor stats.input_mean".into()))?
            .1;
        let std = by_name
            .remove("stats.input_std")
            .ok_or_else(|| bad("missing tensor stats.input_std".into()))?
            .1;
        let history = by_name
            .remove("history.loss")
            .map(|(_, d)| d)
            .unwrap_or_default();
        Ok(AeModel {
            encoder,
            decoder,
            predictor,
            l_norm,
            input_mean: DVector::from_vec(mean),
            input_std: DVector::from_vec(std),
            target_mean,
            target_std,
            loss_history: history,
            ramp_start,
        })
    }
}

// ---------------------------------------------------------------------------
// Training.

fn flatten_model(model: &AeModel) -> Vec<f64> {
    let mut flat = Vec::new();
    for layer in model.encoder.iter().chain(&model.decoder) {
        flat.extend_from_slice(layer.w.as_slice());
        flat.extend_from_slice(layer.b.as_slice());
    }
    flat.extend_from_slice(model.predictor.w.as_slice());
    flat.extend_from_slice(model.predictor.b.as_slice());
    flat
}

fn write_model(model: &mut AeModel, flat: &[f64]) {
    let mut pos = 0;
    for layer in model.encoder.iter_mut().chain(model.decoder.iter_mut()) {
        let wl = layer.w.len();
        layer.w.as_mut_slice().copy_from_slice(&flat[pos..pos + wl]);
        pos += wl;
        let bl = layer.b.len();
        layer.b.as_mut_slice().copy_from_slice(&flat[pos..pos + bl]);
        pos += bl;
    }
    let wl = model.predictor.w.len();
    model
        .predictor
        .w
        .as_mut_slice()
        .copy_from_slice(&flat[pos..pos + wl]);
    pos += wl;
    model
        .predictor
        .b
        .as_mut_slice()
        .copy_from_slice(&flat[pos..]);
}

/// Gradient twin with the model's shapes.
struct AeGrads {
    encoder: Vec<DenseLayer>,
    decoder: Vec<DenseLayer>,
    predictor: DenseLayer,
}

impl AeGrads {
    fn zeros_like(model: &AeModel) -> Self {
        let zero = |l: &DenseLayer| DenseLayer::zeros(l.w.nrows(), l.w.ncols());
        AeGrads {
            encoder: model.encoder.iter().map(zero).collect(),
            decoder: model.decoder.iter().map(zero).collect(),
            predictor: zero(&model.predictor),
        }
    }

    fn into_flat(self, scale: f64) -> Vec<f64> {
        let mut flat = Vec::new();
        for layer in self.encoder.iter().chain(&self.decoder) {
            flat.extend_from_slice(layer.w.as_slice());
            flat.extend_from_slice(layer.b.as_slice());
        }
        flat.extend_from_slice(self.predictor.w.as_slice());
        flat.extend_from_slice(self.predictor.b.as_slice());
        for v in &mut flat {
            *v *= scale;
        }
        flat
    }
}

/// Forward one stack keeping per-layer inputs and activated outputs.
fn forward_stack_cached(layers: &[DenseLayer], x: &DVector<f64>) -> Vec<DVector<f64>> {
    // Returns [x, h_1, ..., h_n]; h_i activated except the last.
    let mut hs = Vec::with_capacity(layers.len() + 1);
    hs.push(x.clone());
    for (i, layer) in layers.iter().enumerate() {
        let mut h = layer.affine(&hs[i]);
        if i + 1 < layers.len() {
            h.apply(|v| *v = v.tanh());
        }
        hs.push(h);
    }
    hs
}

/// Backward through a stack given the gradient at its output; returns the
/// gradient at its input.
fn backward_stack(
    layers: &[DenseLayer],
    grads: &mut [DenseLayer],
    hs: &[DVector<f64>],
    mut d: DVector<f64>,
) -> DVector<f64> {
    for i in (0..layers.len()).rev() {
        if i + 1 < layers.len() {
            // tanh applied at this layer's output.
            d = d.zip_map(&hs[i + 1], |g, h| g * (1.0 - h * h));
        }
        grads[i].w.ger(1.0, &d, &hs[i], 1.0);
        grads[i].b += &d;
        d = layers[i].w.tr_mul(&d);
    }
    d
}

/// Loss and gradient of one standardized example, accumulated into `acc`.
fn example_grads(model: &AeModel, z: &DVector<f64>, t: f64, alpha: f64, acc: &mut AeGrads) -> f64 {
    let enc = forward_stack_cached(&model.encoder, z);
    let latent = enc.last().expect("encoder has layers").clone();
    let dec = forward_stack_cached(&model.decoder, &latent);
    let zhat = dec.last().expect("decoder has layers");
    let that = model.predictor.affine(&latent)[0];
    let loss = ae_loss(z, zhat, t, that, alpha, model.l_norm);

    let l = z.len() as f64;
    let dzhat = (zhat - z) * (2.0 / l);
    let dthat = alpha
        * match model.l_norm {
            LNorm::L1 => (that - t).signum() * f64::from(that != t),
            LNorm::L2 => 2.0 * (that - t),
        };
    let mut dlatent = backward_stack(&model.decoder, &mut acc.decoder, &dec, dzhat);
    for j in 0..latent.len() {
        acc.predictor.w[(0, j)] += dthat * latent[j];
    }
    acc.predictor.b[0] += dthat;
    dlatent += model.predictor.w.row(0).transpose() * dthat;
    backward_stack(&model.encoder, &mut acc.encoder, &enc, dlatent);
    loss
}

/// Fit the autoencoder to a cohort of spectrum records.
///
/// Spectra must share one length (interpolate first when mixing hidden
/// sizes). Inputs are standardized per index and targets as
/// `ln(target_loss + eps)`, both over this training set; the statistics are
/// stored on the returned model.
pub fn ae_train(records: &[SpectrumRecord], config: &AeConfig) -> Result<AeModel> {
    config.validate()?;
    if records.len() < 20 {
        return Err(CoreError::contract(format!(
            "autoencoder training needs at least 20 records, got {}",
            records.len()
        )));
    }
    let l = records[0].spectrum.len();
    if l == 0 {
        return Err(CoreError::contract("records carry empty spectra"));
    }
    if records.iter().any(|r| r.spectrum.len() != l) {
        return Err(CoreError::contract(
            "records mix spectrum lengths; interpolate to a common length first",
        ));
    }
    if records
        .iter()
        .any(|r| !r.target_loss.is_finite() || r.spectrum.iter().any(|v| !v.is_finite()))
    {
        return Err(CoreError::contract(
            "records carry non-finite spectra or targets",
        ));
    }

    let mut model = ae_init(l, config)?;
    let n = records.len() as f64;
    for i in 0..l {
        let mean = records.iter().map(|r| r.spectrum[i]).sum::<f64>() / n;
        let var = records
            .iter()
            .map(|r| (r.spectrum[i] - mean).powi(2))
            .sum::<f64>()
            / n;
        model.input_mean[i] = mean;
        model.input_std[i] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    }
    let logs: Vec<f64> = records
        .iter()
        .map(|r| (r.target_loss + TARGET_EPS).ln())
        .collect();
    let t_mean = logs.iter().sum::<f64>() / n;
    let t_var = logs.iter().map(|t| (t - t_mean).powi(2)).sum::<f64>() / n;
    model.target_mean = t_mean;
    model.target_std = if t_var.sqrt() > 1e-12 {
        t_var.sqrt()
    } else {
        1.0
    };

    let xs: Vec<DVector<f64>> = records
        .iter()
        .map(|r| model.standardized(&r.spectrum))
        .collect::<Result<_>>()?;
    let ts: Vec<f64> = records
        .iter()
        .map(|r| model.standardize_target(r.target_loss))
        .collect();

    let mut flat = flatten_model(&model);
    let mut adam = Adam::new(flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut ramp_start = config.alpha_ramp_start_epoch;
    let mut smoothed_recon = f64::INFINITY;
    // Divergence reference: the loss of the untouched initial weights,
    // floored at 1 — standardized data has unit variance, so any loss
    // beyond ~1e3 is a genuine blow-up even when the start is near-perfect.
    let initial_loss = xs
        .iter()
        .zip(&ts)
        .map(|(x, &t)| {
            let (zhat, that, _) = ae_forward(&model, x).expect("lengths already checked");
            ae_loss(x, &zhat, t, that, 0.0, config.l_norm)
        })
        .sum::<f64>()
        / n;
    let initial_loss = initial_loss.max(1.0);

    for epoch in 0..config.epochs {
        let alpha = match ramp_start {
            Some(start) => ramp_alpha(config.alpha_max, start, config.alpha_ramp_epochs, epoch),
            None => 0.0,
        };
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_recon = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc = AeGrads::zeros_like(&model);
            for &i in batch {
                let loss = example_grads(&model, &xs[i], ts[i], alpha, &mut acc);
                epoch_loss += loss;
                let pen = match model.l_norm {
                    LNorm::L1 => (ts[i] - predict_only(&model, &xs[i])).abs(),
                    LNorm::L2 => (ts[i] - predict_only(&model, &xs[i])).powi(2),
                };
                epoch_recon += loss - alpha * pen;
            }
            let grad = acc.into_flat(1.0 / batch.len() as f64);
            adam.step(&mut flat, &grad, config.learning_rate);
            write_model(&mut model, &flat);
        }
        epoch_loss /= n;
        epoch_recon /= n;
        model.loss_history.push(epoch_loss);

        if !epoch_loss.is_finite() || epoch_loss > 1e3 * initial_loss {
            return Err(CoreError::Diverged(format!(
                "autoencoder loss {epoch_loss:.3e} exceeded 1000x the initial loss at epoch \
                 {epoch}; try a smaller alpha_max or learning rate"
            )));
        }

        if ramp_start.is_none() {
            // Adaptive start: ramp once smoothed reconstruction improves by
            // less than 1% per epoch (after a short burn-in), else at the
            // fallback epoch.
            let prev = smoothed_recon;
            smoothed_recon = if prev.is_finite() {
                0.5 * prev + 0.5 * epoch_recon
            } else {
                epoch_recon
            };
            let plateaued = epoch >= 5
                && prev.is_finite()
                && (prev - smoothed_recon) / prev.abs().max(1e-12) < 0.01;
            if plateaued || epoch + 1 >= RAMP_START_FALLBACK {
                ramp_start = Some(epoch + 1);
            }
        }
    }
    model.ramp_start = ramp_start.unwrap_or(config.epochs);
    Ok(model)
}

/// Predictor output alone (used to split the recon part out of a loss).
fn predict_only(model: &AeModel, z: &DVector<f64>) -> f64 {
    let latent = run_stack(&model.encoder, z);
    model.predictor.affine(&latent)[0]
}
