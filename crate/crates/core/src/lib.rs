//! Lyapunov-spectrum analysis of recurrent network hyperparameter variants.
//!
//! The pipeline has three stages: compute Lyapunov-exponent (LE) spectra of
//! recurrent cells by QR reorthonormalization of tangent frames, train an
//! autoencoder whose latent layer jointly reconstructs spectra and predicts
//! task loss, then embed the latent space with PCA and classify variants into
//! high/low accuracy from their embedding coordinates.

pub mod aelle;
pub mod cells;
pub mod classify;
pub mod data;
pub mod error;
pub mod lyapunov;
mod optim;
pub mod pipeline;
pub mod training;

pub use error::CoreError;

use serde::{Deserialize, Serialize};

/// Which experiment family a variant belongs to. Tags every record and picks
/// task-specific defaults (loss kind, input construction, thresholds).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Rank-1 network reproducing a periodic target signal via recursive
    /// least squares on the readout row.
    TargetLearning,
    /// Next-character prediction over a text corpus.
    CharRnn,
    /// Row-wise sequential digit classification.
    Smnist,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::TargetLearning => "target-learning",
            Task::CharRnn => "char-rnn",
            Task::Smnist => "smnist",
        }
    }

    pub fn parse(s: &str) -> error::Result<Self> {
        match s {
            "target-learning" => Ok(Task::TargetLearning),
            "char-rnn" => Ok(Task::CharRnn),
            "smnist" => Ok(Task::Smnist),
            other => Err(CoreError::contract(format!("unknown task `{other}`"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
