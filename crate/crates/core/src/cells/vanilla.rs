use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use super::{
    matrix_tensor, tensor_to_matrix, tensor_to_vector, uniform_matrix, uniform_vector,
    vector_tensor,
};
use crate::cells::CellSpec;
use crate::error::Result;

/// Vanilla tanh RNN: `h' = tanh(W_ih x + W_hh h + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VanillaParams {
    pub w_ih: DMatrix<f64>,
    pub w_hh: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl VanillaParams {
    pub fn init(spec: &CellSpec, rng: &mut ChaCha8Rng) -> Self {
        let h = spec.hidden_size;
        let p = spec.init_param;
        VanillaParams {
            w_ih: uniform_matrix(rng, h, spec.input_size, p),
            w_hh: uniform_matrix(rng, h, h, p),
            b: uniform_vector(rng, h, p),
        }
    }

    pub fn step(&self, h: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let mut u = &self.w_ih * x + &self.w_hh * h + &self.b;
        u.apply(|v| *v = v.tanh());
        u
    }

    /// `J[(i, j)] = (1 - h'_j²) · W_hh[(j, i)]`.
    pub fn jacobian(&self, h: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
        let next = self.step(h, x);
        let n = h.len();
        DMatrix::from_fn(n, n, |i, j| (1.0 - next[j] * next[j]) * self.w_hh[(j, i)])
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, Vec<usize>, Vec<f64>)> {
        vec![
            matrix_tensor("w_ih", &self.w_ih),
            matrix_tensor("w_hh", &self.w_hh),
            vector_tensor("b", &self.b),
        ]
    }

    pub fn from_tensors(tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self> {
        Ok(VanillaParams {
            w_ih: tensor_to_matrix(tensors, "w_ih")?,
            w_hh: tensor_to_matrix(tensors, "w_hh")?,
            b: tensor_to_vector(tensors, "b")?,
        })
    }
}
