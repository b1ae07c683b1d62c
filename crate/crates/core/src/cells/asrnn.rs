use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use super::{
    matrix_tensor, tensor_to_matrix, tensor_to_vector, uniform_matrix, uniform_vector,
    vector_tensor,
};
use crate::cells::CellSpec;
use crate::error::Result;

pub const DEFAULT_EPS: f64 = 0.1;
pub const DEFAULT_GAMMA: f64 = 0.01;

/// Antisymmetric RNN: `h' = h + ε·tanh(M h + V x + b)` with
/// `M = W − Wᵀ − γI` built once at init. The antisymmetric part keeps the
/// linearized dynamics close to norm-preserving; γ adds slight diffusion.
#[derive(Clone, Debug, PartialEq)]
pub struct AsrnnParams {
    /// Effective recurrent matrix `W − Wᵀ − γI`.
    pub m: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub b: DVector<f64>,
    pub eps: f64,
}

impl AsrnnParams {
    pub fn init(spec: &CellSpec, rng: &mut ChaCha8Rng) -> Self {
        let h = spec.hidden_size;
        let p = spec.init_param;
        let w = uniform_matrix(rng, h, h, p);
        let mut m = &w - w.transpose();
        for i in 0..h {
            m[(i, i)] -= DEFAULT_GAMMA;
        }
        AsrnnParams {
            m,
            v: uniform_matrix(rng, h, spec.input_size, p),
            b: uniform_vector(rng, h, p),
            eps: DEFAULT_EPS,
        }
    }

    pub fn step(&self, h: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let mut u = &self.m * h + &self.v * x + &self.b;
        u.apply(|v| *v = v.tanh());
        h + self.eps * u
    }

    pub fn jacobian(&self, h: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
        let n = h.len();
        let u = &self.m * h + &self.v * x + &self.b;
        let mut jac = DMatrix::zeros(n, n);
        for a in 0..n {
            let t = u[a].tanh();
            let dt = 1.0 - t * t;
            for b in 0..n {
                let mut v = self.eps * dt * self.m[(a, b)];
                if a == b {
                    v += 1.0;
                }
                jac[(b, a)] = v;
            }
        }
        jac
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, Vec<usize>, Vec<f64>)> {
        vec![
            matrix_tensor("m", &self.m),
            matrix_tensor("v", &self.v),
            vector_tensor("b", &self.b),
            ("eps", vec![1], vec![self.eps]),
        ]
    }

    pub fn from_tensors(tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self> {
        let eps = tensor_to_vector(tensors, "eps")?[0];
        Ok(AsrnnParams {
            m: tensor_to_matrix(tensors, "m")?,
            v: tensor_to_matrix(tensors, "v")?,
            b: tensor_to_vector(tensors, "b")?,
            eps,
        })
    }
}
