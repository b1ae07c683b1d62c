use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    matrix_tensor, tensor_to_matrix, tensor_to_vector, uniform_matrix, uniform_vector,
    vector_tensor,
};
use crate::cells::CellSpec;
use crate::error::Result;

pub const DEFAULT_DT: f64 = 0.1;

/// Random recurrent network whose readout row is the only trained part.
///
/// Continuous dynamics `ẋ = −x + W_rec tanh(x) + w_fb z + W_in u` with
/// readout `z = w_outᵀ tanh(x)`, discretized by forward Euler with step `dt`.
/// The gain `g` is folded into `w_rec` at init time: entries are drawn from
/// `Normal(0, g²/N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rank1Params {
    pub w_rec: DMatrix<f64>,
    pub w_in: DMatrix<f64>,
    pub w_fb: DVector<f64>,
    pub w_out: DVector<f64>,
    pub dt: f64,
}

impl Rank1Params {
    pub fn init(spec: &CellSpec, rng: &mut ChaCha8Rng) -> Self {
        let n = spec.hidden_size;
        let g = spec.init_param;
        let normal = Normal::new(0.0, g / (n as f64).sqrt()).expect("positive std");
        let w_rec = DMatrix::from_fn(n, n, |_, _| normal.sample(rng));
        Rank1Params {
            w_rec,
            w_in: uniform_matrix(rng, n, spec.input_size, 1.0),
            w_fb: uniform_vector(rng, n, 1.0),
            w_out: DVector::zeros(n),
            dt: DEFAULT_DT,
        }
    }

    pub fn size(&self) -> usize {
        self.w_fb.len()
    }

    /// Readout of the current state: `z = w_outᵀ tanh(x)`.
    pub fn readout(&self, x: &DVector<f64>) -> f64 {
        x.iter()
            .zip(self.w_out.iter())
            .map(|(xi, wi)| wi * xi.tanh())
            .sum()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut r = x.clone();
        r.apply(|v| *v = v.tanh());
        let z = self.w_out.dot(&r);
        let drive = &self.w_rec * &r + &self.w_fb * z + &self.w_in * u;
        x + self.dt * (drive - x)
    }

    /// `J[(b, a)] = (1−dt)δ_ab + dt·(W_rec[(a,b)] + w_fb[a]·w_out[b])·(1−tanh²x_b)`.
    pub fn jacobian(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let dtanh: Vec<f64> = x
            .iter()
            .map(|v| {
                let t = v.tanh();
                1.0 - t * t
            })
            .collect();
        let keep = 1.0 - self.dt;
        let mut jac = DMatrix::zeros(n, n);
        for a in 0..n {
            let fb = self.w_fb[a];
            for b in 0..n {
                let mut v = self.dt * (self.w_rec[(a, b)] + fb * self.w_out[b]) * dtanh[b];
                if a == b {
                    v += keep;
                }
                jac[(b, a)] = v;
            }
        }
        jac
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, Vec<usize>, Vec<f64>)> {
        vec![
            matrix_tensor("w_rec", &self.w_rec),
            matrix_tensor("w_in", &self.w_in),
            vector_tensor("w_fb", &self.w_fb),
            vector_tensor("w_out", &self.w_out),
            ("dt", vec![1], vec![self.dt]),
        ]
    }

    pub fn from_tensors(tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self> {
        let dt = tensor_to_vector(tensors, "dt")?[0];
        Ok(Rank1Params {
            w_rec: tensor_to_matrix(tensors, "w_rec")?,
            w_in: tensor_to_matrix(tensors, "w_in")?,
            w_fb: tensor_to_vector(tensors, "w_fb")?,
            w_out: tensor_to_vector(tensors, "w_out")?,
            dt,
        })
    }
}
