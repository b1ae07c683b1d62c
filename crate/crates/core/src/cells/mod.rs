//! Recurrent cell zoo: parameter containers, deterministic initialization,
//! one-step state maps, and exact analytical Jacobians of those maps.
//!
//! Every cell is immutable after construction; `step` and `jacobian` are pure
//! functions of `(cell, state, input)` and safe to call concurrently.
//!
//! Jacobian index convention, used everywhere downstream: entry `(i, j)` is
//! the partial derivative of component `j` of the *next* state with respect
//! to component `i` of the *current* state. For a linear map `h' = A h` this
//! yields `Aᵀ`. The `LinearCell` test oracle pins the convention.

mod asrnn;
mod gru;
mod linear;
mod lstm;
mod rank1;
mod vanilla;

pub use asrnn::AsrnnParams;
pub use gru::{GruGates, GruParams};
pub use linear::{fd_jacobian, max_relative_error, LinearCell};
pub use lstm::{LstmGates, LstmParams};
pub use rank1::Rank1Params;
pub use vanilla::VanillaParams;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Supported recurrent architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    VanillaRnn,
    Lstm,
    Gru,
    Rank1Rnn,
    Asrnn,
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::VanillaRnn => "rnn",
            Architecture::Lstm => "lstm",
            Architecture::Gru => "gru",
            Architecture::Rank1Rnn => "rank1",
            Architecture::Asrnn => "asrnn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rnn" | "vanilla-rnn" => Ok(Architecture::VanillaRnn),
            "lstm" => Ok(Architecture::Lstm),
            "gru" => Ok(Architecture::Gru),
            "rank1" | "rank1-rnn" => Ok(Architecture::Rank1Rnn),
            "asrnn" => Ok(Architecture::Asrnn),
            other => Err(CoreError::contract(format!(
                "unknown architecture `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters identifying one cell instance. Identical `(spec, seed)`
/// pairs produce bit-identical parameter draws.
///
/// `init_param` is the half-width `p` of the uniform init for the gated and
/// vanilla nets and the gain `g` for the rank-1 net.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub architecture: Architecture,
    pub hidden_size: usize,
    pub input_size: usize,
    pub init_param: f64,
    pub seed: u64,
}

impl CellSpec {
    pub fn new(
        architecture: Architecture,
        hidden_size: usize,
        input_size: usize,
        init_param: f64,
        seed: u64,
    ) -> Result<Self> {
        let spec = CellSpec {
            architecture,
            hidden_size,
            input_size,
            init_param,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(CoreError::contract("hidden_size must be >= 1"));
        }
        if self.input_size == 0 {
            return Err(CoreError::contract("input_size must be >= 1"));
        }
        if !(self.init_param > 0.0) || !self.init_param.is_finite() {
            return Err(CoreError::contract(format!(
                "init_param must be finite and > 0, got {}",
                self.init_param
            )));
        }
        Ok(())
    }

    /// Dimension of the dynamical state tracked by the LE machinery.
    /// The LSTM state is the concatenated `(h, c)`, so its dimension is
    /// twice the hidden size.
    pub fn state_dim(&self) -> usize {
        match self.architecture {
            Architecture::Lstm => 2 * self.hidden_size,
            _ => self.hidden_size,
        }
    }
}

/// Dynamical state of a cell. For the LSTM this is `[h; c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState(pub DVector<f64>);

impl CellState {
    pub fn zeros(dim: usize) -> Self {
        CellState(DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// One time step of external input.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInput(pub DVector<f64>);

impl StepInput {
    pub fn zeros(dim: usize) -> Self {
        StepInput(DVector::zeros(dim))
    }

    pub fn from_slice(values: &[f64]) -> Self {
        StepInput(DVector::from_column_slice(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// A discrete-time dynamical system with an input-dependent one-step map.
///
/// Implemented by every cell in the zoo and by the `LinearCell` oracle, so
/// the LE engine works uniformly over both. `Sync` lets per-sequence runs
/// share one map across worker threads.
pub trait DynamicalMap: Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// Next state. Errors if dimensions mismatch.
    fn step(&self, state: &CellState, input: &StepInput) -> Result<CellState>;

    /// Jacobian of the one-step map in the convention described at module
    /// level: `J[(i, j)] = d next_j / d current_i`.
    fn jacobian(&self, state: &CellState, input: &StepInput) -> Result<DMatrix<f64>>;

    fn check_dims(&self, state: &CellState, input: &StepInput) -> Result<()> {
        if state.dim() != self.state_dim() {
            return Err(CoreError::contract(format!(
                "state dimension {} does not match cell state dimension {}",
                state.dim(),
                self.state_dim()
            )));
        }
        if input.dim() != self.input_dim() {
            return Err(CoreError::contract(format!(
                "input dimension {} does not match cell input dimension {}",
                input.dim(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Architecture-specific parameter container.
#[derive(Clone, Debug, PartialEq)]
pub enum CellParams {
    Vanilla(VanillaParams),
    Lstm(LstmParams),
    Gru(GruParams),
    Rank1(Rank1Params),
    Asrnn(AsrnnParams),
}

/// A concrete recurrent cell: spec plus drawn parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    spec: CellSpec,
    params: CellParams,
}

/// Draw all cell parameters deterministically from the `CellSpec` seed.
///
/// Gated and vanilla nets (and the antisymmetric net) sample every weight
/// matrix and bias uniformly on `[-p, p]`. The rank-1 net samples recurrent
/// entries from `Normal(0, g²/N)`, feedback and input weights uniformly on
/// `[-1, 1]`, and starts with a zero readout.
pub fn init_cell(spec: &CellSpec) -> Result<Cell> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let params = match spec.architecture {
        Architecture::VanillaRnn => CellParams::Vanilla(VanillaParams::init(spec, &mut rng)),
        Architecture::Lstm => CellParams::Lstm(LstmParams::init(spec, &mut rng)),
        Architecture::Gru => CellParams::Gru(GruParams::init(spec, &mut rng)),
        Architecture::Rank1Rnn => CellParams::Rank1(Rank1Params::init(spec, &mut rng)),
        Architecture::Asrnn => CellParams::Asrnn(AsrnnParams::init(spec, &mut rng)),
    };
    Ok(Cell {
        spec: spec.clone(),
        params,
    })
}

impl Cell {
    pub fn from_parts(spec: CellSpec, params: CellParams) -> Result<Self> {
        spec.validate()?;
        Ok(Cell { spec, params })
    }

    pub fn spec(&self) -> &CellSpec {
        &self.spec
    }

    pub fn params(&self) -> &CellParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut CellParams {
        &mut self.params
    }

    pub fn zero_state(&self) -> CellState {
        CellState::zeros(self.spec.state_dim())
    }

    /// Euler step size used by the rank-1 cell; 0.1 unless overridden.
    pub fn set_rank1_dt(&mut self, dt: f64) -> Result<()> {
        match &mut self.params {
            CellParams::Rank1(p) => {
                if !(dt > 0.0 && dt <= 1.0) {
                    return Err(CoreError::contract(format!(
                        "dt must be in (0, 1], got {dt}"
                    )));
                }
                p.dt = dt;
                Ok(())
            }
            _ => Err(CoreError::contract(
                "set_rank1_dt only applies to rank-1 cells",
            )),
        }
    }

    /// Flat view of every parameter tensor, in a fixed order, for
    /// checkpointing. Names are stable across versions.
    pub fn named_tensors(&self) -> Vec<(&'static str, Vec<usize>, Vec<f64>)> {
        match &self.params {
            CellParams::Vanilla(p) => p.named_tensors(),
            CellParams::Lstm(p) => p.named_tensors(),
            CellParams::Gru(p) => p.named_tensors(),
            CellParams::Rank1(p) => p.named_tensors(),
            CellParams::Asrnn(p) => p.named_tensors(),
        }
    }

    /// Rebuild a cell from checkpointed tensors (inverse of `named_tensors`).
    pub fn from_named_tensors(
        spec: CellSpec,
        tensors: &[(String, Vec<usize>, Vec<f64>)],
    ) -> Result<Self> {
        let params = match spec.architecture {
            Architecture::VanillaRnn => CellParams::Vanilla(VanillaParams::from_tensors(tensors)?),
            Architecture::Lstm => CellParams::Lstm(LstmParams::from_tensors(tensors)?),
            Architecture::Gru => CellParams::Gru(GruParams::from_tensors(tensors)?),
            Architecture::Rank1Rnn => CellParams::Rank1(Rank1Params::from_tensors(tensors)?),
            Architecture::Asrnn => CellParams::Asrnn(AsrnnParams::from_tensors(tensors)?),
        };
        Cell::from_parts(spec, params)
    }
}

impl DynamicalMap for Cell {
    fn state_dim(&self) -> usize {
        self.spec.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.spec.input_size
    }

    fn step(&self, state: &CellState, input: &StepInput) -> Result<CellState> {
        self.check_dims(state, input)?;
        let next = match &self.params {
            CellParams::Vanilla(p) => p.step(&state.0, &input.0),
            CellParams::Lstm(p) => p.step(&state.0, &input.0),
            CellParams::Gru(p) => p.step(&state.0, &input.0),
            CellParams::Rank1(p) => p.step(&state.0, &input.0),
            CellParams::Asrnn(p) => p.step(&state.0, &input.0),
        };
        Ok(CellState(next))
    }

    fn jacobian(&self, state: &CellState, input: &StepInput) -> Result<DMatrix<f64>> {
        self.check_dims(state, input)?;
        Ok(match &self.params {
            CellParams::Vanilla(p) => p.jacobian(&state.0, &input.0),
            CellParams::Lstm(p) => p.jacobian(&state.0, &input.0),
            CellParams::Gru(p) => p.jacobian(&state.0, &input.0),
            CellParams::Rank1(p) => p.jacobian(&state.0, &input.0),
            CellParams::Asrnn(p) => p.jacobian(&state.0, &input.0),
        })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sample a matrix with entries uniform on `[-half_width, half_width]`.
pub(crate) fn uniform_matrix(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    half_width: f64,
) -> DMatrix<f64> {
    use rand::Rng;
    DMatrix::from_fn(rows, cols, |_, _| {
        rng.random_range(-half_width..=half_width)
    })
}

pub(crate) fn uniform_vector(rng: &mut ChaCha8Rng, len: usize, half_width: f64) -> DVector<f64> {
    use rand::Rng;
    DVector::from_fn(len, |_, _| rng.random_range(-half_width..=half_width))
}

pub(crate) fn tensor_to_matrix(
    tensors: &[(String, Vec<usize>, Vec<f64>)],
    name: &str,
) -> Result<DMatrix<f64>> {
    let (_, shape, data) = tensors
        .iter()
        .find(|(n, _, _)| n == name)
        .ok_or_else(|| CoreError::contract(format!("checkpoint missing tensor `{name}`")))?;
    if shape.len() != 2 || shape[0] * shape[1] != data.len() {
        return Err(CoreError::contract(format!(
            "tensor `{name}` has inconsistent shape {shape:?} for {} values",
            data.len()
        )));
    }
    // Tensors are stored row-major.
    Ok(DMatrix::from_row_slice(shape[0], shape[1], data))
}

pub(crate) fn tensor_to_vector(
    tensors: &[(String, Vec<usize>, Vec<f64>)],
    name: &str,
) -> Result<DVector<f64>> {
    let (_, shape, data) = tensors
        .iter()
        .find(|(n, _, _)| n == name)
        .ok_or_else(|| CoreError::contract(format!("checkpoint missing tensor `{name}`")))?;
    if shape.len() != 1 || shape[0] != data.len() {
        return Err(CoreError::contract(format!(
            "tensor `{name}` has inconsistent shape {shape:?} for {} values",
            data.len()
        )));
    }
    Ok(DVector::from_column_slice(data))
}

pub(crate) fn matrix_tensor(
    name: &'static str,
    m: &DMatrix<f64>,
) -> (&'static str, Vec<usize>, Vec<f64>) {
    let mut data = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            data.push(m[(i, j)]);
        }
    }
    (name, vec![m.nrows(), m.ncols()], data)
}

pub(crate) fn vector_tensor(
    name: &'static str,
    v: &DVector<f64>,
) -> (&'static str, Vec<usize>, Vec<f64>) {
    (name, vec![v.len()], v.as_slice().to_vec())
}
