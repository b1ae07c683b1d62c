use nalgebra::DMatrix;

use crate::cells::{CellState, DynamicalMap, StepInput};
use crate::error::Result;

/// Diagnostic cell `h' = A h` with a constant, exactly known Jacobian.
///
/// Not part of the architecture zoo; it exists so exponent and convention
/// oracles have a system whose spectrum is analytic: the exponents of the
/// diagonal case `A = diag(a_1..a_n)` are `ln|a_i|`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearCell {
    a: DMatrix<f64>,
    input_dim: usize,
}

impl LinearCell {
    pub fn new(a: DMatrix<f64>, input_dim: usize) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "linear cell matrix must be square");
        LinearCell { a, input_dim }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        LinearCell {
            a: DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }),
            input_dim: 1,
        }
    }

    pub fn identity(n: usize) -> Self {
        LinearCell {
            a: DMatrix::identity(n, n),
            input_dim: 1,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl DynamicalMap for LinearCell {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn step(&self, state: &CellState, input: &StepInput) -> Result<CellState> {
        self.check_dims(state, input)?;
        Ok(CellState(&self.a * &state.0))
    }

    fn jacobian(&self, state: &CellState, input: &StepInput) -> Result<DMatrix<f64>> {
        self.check_dims(state, input)?;
        Ok(self.a.transpose())
    }
}

/// Central-difference Jacobian of any `DynamicalMap`, in the same index
/// convention as `DynamicalMap::jacobian`. Test oracle; deliberately knows
/// nothing about the analytic derivations it checks.
pub fn fd_jacobian<M: DynamicalMap>(
    map: &M,
    state: &CellState,
    input: &StepInput,
    eps: f64,
) -> Result<DMatrix<f64>> {
    let d = map.state_dim();
    let mut jac = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut plus = state.clone();
        plus.0[i] += eps;
        let mut minus = state.clone();
        minus.0[i] -= eps;
        let f_plus = map.step(&plus, input)?;
        let f_minus = map.step(&minus, input)?;
        for j in 0..d {
            jac[(i, j)] = (f_plus.0[j] - f_minus.0[j]) / (2.0 * eps);
        }
    }
    Ok(jac)
}

/// Largest relative deviation between two matrices, with an absolute floor
/// so near-zero entries do not blow the ratio up.
pub fn max_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = a
        .iter()
        .chain(b.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-12);
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / scale)
        .fold(0.0, f64::max)
}
