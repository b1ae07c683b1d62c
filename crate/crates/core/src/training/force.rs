//! Readout learning for the rank-1 signal task: recursive least squares on
//! the readout row with output feedback (the FORCE scheme).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mix64;
use crate::cells::{init_cell, Architecture, Cell, CellParams, CellSpec};
use crate::error::{CoreError, Result};

/// Any state coordinate beyond this magnitude counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceConfig {
    /// Network size N.
    pub n: usize,
    /// Recurrent gain g.
    pub g: f64,
    /// Euler step of the continuous dynamics.
    pub dt: f64,
    /// RLS initialization scale: `P_0 = I / delta`.
    pub rls_delta: f64,
    pub train_steps: usize,
    pub test_steps: usize,
    /// Readout updates happen every `update_stride` steps.
    pub update_stride: usize,
    pub seed: u64,
}

impl ForceConfig {
    pub fn new(n: usize, g: f64, seed: u64) -> Self {
        ForceConfig {
            n,
            g,
            dt: 0.1,
            rls_delta: 1.0,
            train_steps: 2400,
            test_steps: 600,
            update_stride: 2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(CoreError::contract("FORCE needs n >= 2"));
        }
        if !(self.g > 0.0) {
            return Err(CoreError::contract("FORCE gain g must be positive"));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return Err(CoreError::contract(format!(
                "FORCE dt must lie in (0, 1], got {}",
                self.dt
            )));
        }
        if !(self.rls_delta > 0.0) {
            return Err(CoreError::contract("rls_delta must be positive"));
        }
        if self.train_steps == 0 || self.test_steps == 0 {
            return Err(CoreError::contract(
                "train_steps and test_steps must be >= 1",
            ));
        }
        if self.update_stride == 0 {
            return Err(CoreError::contract("update_stride must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ForceOutcome {
    /// The rank-1 cell with its trained readout row.
    pub cell: Cell,
    /// Time-averaged RMS of `(z - target)` over the test window, normalized
    /// by the target RMS; `+inf` when the run diverged.
    pub test_error: f64,
    pub diverged: bool,
}

fn rank1_cell(config: &ForceConfig) -> Result<Cell> {
    let spec = CellSpec::new(Architecture::Rank1Rnn, config.n, 1, config.g, config.seed)?;
    let mut cell = init_cell(&spec)?;
    cell.set_rank1_dt(config.dt)?;
    Ok(cell)
}

/// Train a freshly initialized rank-1 network on `target`.
pub fn force_train(config: &ForceConfig, target: &[f64]) -> Result<ForceOutcome> {
    let mut cell = rank1_cell(config)?;
    let (test_error, diverged) = force_train_in_place(&mut cell, config, target)?;
    Ok(ForceOutcome {
        cell,
        test_error,
        diverged,
    })
}

/// RLS on the readout of an existing rank-1 cell (mutated in place).
///
/// Training runs over `target[..train_steps]`, the error is measured over
/// the following `test_steps` values with the readout frozen.
pub fn force_train_in_place(
    cell: &mut Cell,
    config: &ForceConfig,
    target: &[f64],
) -> Result<(f64, bool)> {
    config.validate()?;
    let needed = config.train_steps + config.test_steps;
    if target.len() < needed {
        return Err(CoreError::contract(format!(
            "target provides {} steps but train + test needs {needed}",
            target.len()
        )));
    }
    let n = config.n;
    let CellParams::Rank1(params) = cell.params_mut() else {
        return Err(CoreError::contract("FORCE applies to rank-1 cells only"));
    };

    // The origin is a fixed point of the autonomous dynamics, so runs start
    // from a small random state drawn from a seed-derived stream.
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(config.seed ^ 0x464f_5243_4500));
    let mut x = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let zero_input = DVector::zeros(1);
    let mut p_mat = DMatrix::<f64>::identity(n, n) / config.rls_delta;

    for t in 0..config.train_steps {
        x = params.step(&x, &zero_input);
        if x.amax() > DIVERGENCE_LIMIT || !x.iter().all(|v| v.is_finite()) {
            return Ok((f64::INFINITY, true));
        }
        if t % config.update_stride == 0 {
            let r = x.map(f64::tanh);
            let k = &p_mat * &r;
            let c = 1.0 / (1.0 + r.dot(&k));
            let z = params.w_out.dot(&r);
            let e = z - target[t];
            // P <- P - c k k^T, w <- w - c e k.
            p_mat.ger(-c, &k, &k, 1.0);
            params.w_out.axpy(-c * e, &k, 1.0);
        }
    }

    let mut err_sq = 0.0;
    let mut tgt_sq = 0.0;
    for t in config.train_steps..needed {
        x = params.step(&x, &zero_input);
        if x.amax() > DIVERGENCE_LIMIT || !x.iter().all(|v| v.is_finite()) {
            return Ok((f64::INFINITY, true));
        }
        let z = params.w_out.dot(&x.map(f64::tanh));
        err_sq += (z - target[t]) * (z - target[t]);
        tgt_sq += target[t] * target[t];
    }
    let steps = config.test_steps as f64;
    let err_rms = (err_sq / steps).sqrt();
    let tgt_rms = (tgt_sq / steps).sqrt();
    let test_error = if tgt_rms < 1e-12 {
        err_rms
    } else {
        err_rms / tgt_rms
    };
    Ok((test_error, false))
}
