use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use super::{
    matrix_tensor, sigmoid, tensor_to_matrix, tensor_to_vector, uniform_matrix, uniform_vector,
    vector_tensor,
};
use crate::cells::CellSpec;
use crate::error::Result;

/// LSTM with the usual gate equations; the dynamical state is `[h; c]`.
///
/// ```text
/// i = σ(W_ii x + W_hi h + b_i)      f = σ(W_if x + W_hf h + b_f)
/// g = tanh(W_ig x + W_hg h + b_g)   o = σ(W_io x + W_ho h + b_o)
/// c' = f∘c + i∘g                    h' = o∘tanh(c')
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_ii: DMatrix<f64>,
    pub w_if: DMatrix<f64>,
    pub w_ig: DMatrix<f64>,
    pub w_io: DMatrix<f64>,
    pub w_hi: DMatrix<f64>,
    pub w_hf: DMatrix<f64>,
    pub w_hg: DMatrix<f64>,
    pub w_ho: DMatrix<f64>,
    pub b_i: DVector<f64>,
    pub b_f: DVector<f64>,
    pub b_g: DVector<f64>,
    pub b_o: DVector<f64>,
}

/// Gate activations cached for one step; reused by the Jacobian and BPTT.
pub struct LstmGates {
    pub i: DVector<f64>,
    pub f: DVector<f64>,
    pub g: DVector<f64>,
    pub o: DVector<f64>,
    pub c_next: DVector<f64>,
    pub tanh_c_next: DVector<f64>,
}

impl LstmParams {
    pub fn init(spec: &CellSpec, rng: &mut ChaCha8Rng) -> Self {
        let h = spec.hidden_size;
        let n = spec.input_size;
        let p = spec.init_param;
        LstmParams {
            w_ii: uniform_matrix(rng, h, n, p),
            w_if: uniform_matrix(rng, h, n, p),
            w_ig: uniform_matrix(rng, h, n, p),
            w_io: uniform_matrix(rng, h, n, p),
            w_hi: uniform_matrix(rng, h, h, p),
            w_hf: uniform_matrix(rng, h, h, p),
            w_hg: uniform_matrix(rng, h, h, p),
            w_ho: uniform_matrix(rng, h, h, p),
            b_i: uniform_vector(rng, h, p),
            b_f: uniform_vector(rng, h, p),
            b_g: uniform_vector(rng, h, p),
            b_o: uniform_vector(rng, h, p),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.b_i.len()
    }

    pub fn gates(&self, h: &DVector<f64>, c: &DVector<f64>, x: &DVector<f64>) -> LstmGates {
        let mut i = &self.w_ii * x + &self.w_hi * h + &self.b_i;
        let mut f = &self.w_if * x + &self.w_hf * h + &self.b_f;
        let mut g = &self.w_ig * x + &self.w_hg * h + &self.b_g;
        let mut o = &self.w_io * x + &self.w_ho * h + &self.b_o;
        i.apply(|v| *v = sigmoid(*v));
        f.apply(|v| *v = sigmoid(*v));
        g.apply(|v| *v = v.tanh());
        o.apply(|v| *v = sigmoid(*v));
        let c_next = f.component_mul(c) + i.component_mul(&g);
        let mut tanh_c_next = c_next.clone();
        tanh_c_next.apply(|v| *v = v.tanh());
        LstmGates {
            i,
            f,
            g,
            o,
            c_next,
            tanh_c_next,
        }
    }

    /// State layout is `[h; c]` with `h = s[..H]`, `c = s[H..]`.
    pub fn step(&self, s: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let hs = self.hidden_size();
        let h = s.rows(0, hs).into_owned();
        let c = s.rows(hs, hs).into_owned();
        let gates = self.gates(&h, &c, x);
        let h_next = gates.o.component_mul(&gates.tanh_c_next);
        let mut next = DVector::zeros(2 * hs);
        next.rows_mut(0, hs).copy_from(&h_next);
        next.rows_mut(hs, hs).copy_from(&gates.c_next);
        next
    }

    /// Full 2H×2H Jacobian over the concatenated state, in the row = current
    /// index, column = next index convention.
    pub fn jacobian(&self, s: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
        let hs = self.hidden_size();
        let h = s.rows(0, hs).into_owned();
        let c = s.rows(hs, hs).into_owned();
        let LstmGates {
            i,
            f,
            g,
            o,
            c_next: _,
            tanh_c_next: th,
        } = self.gates(&h, &c, x);

        let mut jac = DMatrix::zeros(2 * hs, 2 * hs);
        // a indexes the next state component, b the current one.
        for a in 0..hs {
            let di = i[a] * (1.0 - i[a]); // σ'
            let df = f[a] * (1.0 - f[a]);
            let dg = 1.0 - g[a] * g[a]; // tanh'
            let do_ = o[a] * (1.0 - o[a]);
            let dth = 1.0 - th[a] * th[a];
            for b in 0..hs {
                // dc'_a/dh_b through the three gated paths.
                let dc_dh = c[a] * df * self.w_hf[(a, b)]
                    + g[a] * di * self.w_hi[(a, b)]
                    + i[a] * dg * self.w_hg[(a, b)];
                // dh'_a/dh_b = tanh(c'_a)·σ'(o) W_ho + o_a·tanh'(c'_a)·dc'_a/dh_b
                let dh_dh = th[a] * do_ * self.w_ho[(a, b)] + o[a] * dth * dc_dh;
                jac[(b, a)] = dh_dh;
                jac[(b, hs + a)] = dc_dh;
            }
            // Diagonal cell-state paths.
            let dh_dc = o[a] * dth * f[a]; // dh'_a/dc_a
            jac[(hs + a, a)] = dh_dc;
            jac[(hs + a, hs + a)] = f[a]; // dc'_a/dc_a
        }
        jac
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, Vec<usize>, Vec<f64>)> {
        vec![
            matrix_tensor("w_ii", &self.w_ii),
            matrix_tensor("w_if", &self.w_if),
            matrix_tensor("w_ig", &self.w_ig),
            matrix_tensor("w_io", &self.w_io),
            matrix_tensor("w_hi", &self.w_hi),
            matrix_tensor("w_hf", &self.w_hf),
            matrix_tensor("w_hg", &self.w_hg),
            matrix_tensor("w_ho", &self.w_ho),
            vector_tensor("b_i", &self.b_i),
            vector_tensor("b_f", &self.b_f),
            vector_tensor("b_g", &self.b_g),
            vector_tensor("b_o", &self.b_o),
        ]
    }

    pub fn from_tensors(tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self> {
        Ok(LstmParams {
            w_ii: tensor_to_matrix(tensors, "w_ii")?,
            w_if: tensor_to_matrix(tensors, "w_if")?,
            w_ig: tensor_to_matrix(tensors, "w_ig")?,
            w_io: tensor_to_matrix(tensors, "w_io")?,
            w_hi: tensor_to_matrix(tensors, "w_hi")?,
            w_hf: tensor_to_matrix(tensors, "w_hf")?,
            w_hg: tensor_to_matrix(tensors, "w_hg")?,
            w_ho: tensor_to_matrix(tensors, "w_ho")?,
            b_i: tensor_to_vector(tensors, "b_i")?,
            b_f: tensor_to_vector(tensors, "b_f")?,
            b_g: tensor_to_vector(tensors, "b_g")?,
            b_o: tensor_to_vector(tensors, "b_o")?,
        })
    }
}
