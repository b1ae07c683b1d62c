use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use super::{
    matrix_tensor, sigmoid, tensor_to_matrix, tensor_to_vector, uniform_matrix, uniform_vector,
    vector_tensor,
};
use crate::cells::CellSpec;
use crate::error::Result;

/// GRU with the reset gate applied inside the candidate's recurrent term:
///
/// ```text
/// r = σ(W_ir x + W_hr h + b_r)
/// z = σ(W_iz x + W_hz h + b_z)
/// n = tanh(W_in x + b_in + r∘(W_hn h + b_hn))
/// h' = (1 − z)∘n + z∘h
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_ir: DMatrix<f64>,
    pub w_iz: DMatrix<f64>,
    pub w_in: DMatrix<f64>,
    pub w_hr: DMatrix<f64>,
    pub w_hz: DMatrix<f64>,
    pub w_hn: DMatrix<f64>,
    pub b_r: DVector<f64>,
    pub b_z: DVector<f64>,
    pub b_in: DVector<f64>,
    pub b_hn: DVector<f64>,
}

pub struct GruGates {
    pub r: DVector<f64>,
    pub z: DVector<f64>,
    pub n: DVector<f64>,
    /// `m = W_hn h + b_hn`, the reset-gated recurrent pre-activation.
    pub m: DVector<f64>,
}

impl GruParams {
    pub fn init(spec: &CellSpec, rng: &mut ChaCha8Rng) -> Self {
        let h = spec.hidden_size;
        let n = spec.input_size;
        let p = spec.init_param;
        GruParams {
            w_ir: uniform_matrix(rng, h, n, p),
            w_iz: uniform_matrix(rng, h, n, p),
            w_in: uniform_matrix(rng, h, n, p),
            w_hr: uniform_matrix(rng, h, h, p),
            w_hz: uniform_matrix(rng, h, h, p),
            w_hn: uniform_matrix(rng, h, h, p),
            b_r: uniform_vector(rng, h, p),
            b_z: uniform_vector(rng, h, p),
            b_in: uniform_vector(rng, h, p),
            b_hn: uniform_vector(rng, h, p),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.b_r.len()
    }

    pub fn gates(&self, h: &DVector<f64>, x: &DVector<f64>) -> GruGates {
        let mut r = &self.w_ir * x + &self.w_hr * h + &self.b_r;
        let mut z = &self.w_iz * x + &self.w_hz * h + &self.b_z;
        r.apply(|v| *v = sigmoid(*v));
        z.apply(|v| *v = sigmoid(*v));
        let m = &self.w_hn * h + &self.b_hn;
        let mut n = &self.w_in * x + &self.b_in + r.component_mul(&m);
        n.apply(|v| *v = v.tanh());
        GruGates { r, z, n, m }
    }

    pub fn step(&self, h: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let GruGates { z, n, .. } = self.gates(h, x);
        let ones = DVector::from_element(h.len(), 1.0);
        (ones - &z).component_mul(&n) + z.component_mul(h)
    }

    /// `J[(b, a)] = dh'_a/dh_b`.
    pub fn jacobian(&self, h: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
        let hs = h.len();
        let GruGates { r, z, n, m } = self.gates(h, x);
        let mut jac = DMatrix::zeros(hs, hs);
        for a in 0..hs {
            let dz = z[a] * (1.0 - z[a]);
            let dr = r[a] * (1.0 - r[a]);
            let dn = 1.0 - n[a] * n[a];
            for b in 0..hs {
                // Gate path, candidate path (through both r and W_hn), and
                // the direct carry term on the diagonal.
                let dn_dh = dn * (m[a] * dr * self.w_hr[(a, b)] + r[a] * self.w_hn[(a, b)]);
                let mut v = (h[a] - n[a]) * dz * self.w_hz[(a, b)] + (1.0 - z[a]) * dn_dh;
                if a == b {
                    v += z[a];
                }
                jac[(b, a)] = v;
            }
        }
        jac
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, Vec<usize>, Vec<f64>)> {
        vec![
            matrix_tensor("w_ir", &self.w_ir),
            matrix_tensor("w_iz", &self.w_iz),
            matrix_tensor("w_in", &self.w_in),
            matrix_tensor("w_hr", &self.w_hr),
            matrix_tensor("w_hz", &self.w_hz),
            matrix_tensor("w_hn", &self.w_hn),
            vector_tensor("b_r", &self.b_r),
            vector_tensor("b_z", &self.b_z),
            vector_tensor("b_in", &self.b_in),
            vector_tensor("b_hn", &self.b_hn),
        ]
    }

    pub fn from_tensors(tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self> {
        Ok(GruParams {
            w_ir: tensor_to_matrix(tensors, "w_ir")?,
            w_iz: tensor_to_matrix(tensors, "w_iz")?,
            w_in: tensor_to_matrix(tensors, "w_in")?,
            w_hr: tensor_to_matrix(tensors, "w_hr")?,
            w_hz: tensor_to_matrix(tensors, "w_hz")?,
            w_hn: tensor_to_matrix(tensors, "w_hn")?,
            b_r: tensor_to_vector(tensors, "b_r")?,
            b_z: tensor_to_vector(tensors, "b_z")?,
            b_in: tensor_to_vector(tensors, "b_in")?,
            b_hn: tensor_to_vector(tensors, "b_hn")?,
        })
    }
}
