//! Ingestion and persistence: image/text/signal datasets, the JSONL spectrum
//! store, the checkpoint container, and the on-disk cohort layout.

pub mod checkpoint;
pub mod mnist;
pub mod signal;
pub mod spectra;
pub mod text;

pub use checkpoint::{load_cell, load_tensors, save_cell, save_tensors};
pub use mnist::{load_mnist_idx, RowImageDataset};
pub use signal::{gen_four_sine, FourSineParams};
pub use spectra::{append_spectra, read_spectra, write_spectra};
pub use text::{char_dataset_from_text, load_text_corpus, CharDataset};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cells::{Cell, CellSpec};
use crate::error::{CoreError, Result};
use crate::lyapunov::SpectrumRecord;
use crate::Task;

/// One hyperparameter variant: a cell spec plus its place in the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub variant_id: String,
    pub task: Task,
    pub replicate: usize,
    pub spec: CellSpec,
}

/// Training outcome of one variant: the per-evaluation validation-loss curve
/// and the target loss the autoencoder regresses (best validation loss;
/// capped at the divergence sentinel for failed variants).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub variant_id: String,
    pub curve: Vec<f64>,
    pub target_loss: f64,
    /// `(training fraction, validation loss)` at each parameter snapshot,
    /// for variants trained with checkpoints.
    #[serde(default)]
    pub checkpoint_losses: Vec<(f64, f64)>,
    /// True when training was aborted (divergence, non-finite loss).
    #[serde(default)]
    pub failed: bool,
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CoreError::io(parent.display().to_string(), e))?;
        }
    }
    let file = File::create(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row)
            .map_err(|e| CoreError::contract(format!("unserializable row: {e}")))?;
        writeln!(out, "{line}").map_err(|e| CoreError::io(path.display().to_string(), e))?;
    }
    out.flush()
        .map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: T = serde_json::from_str(&line).map_err(|e| CoreError::Record {
            line: idx + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// On-disk home of one experiment cohort.
///
/// ```text
/// root/
///   variants.jsonl        one `Variant` per line
///   losses.jsonl          one `LossRecord` per line
///   spectra.jsonl         one `SpectrumRecord` per line
///   checkpoints/<variant_id>@<pct>.bin|.json
/// ```
///
/// The index is the filesystem itself: everything is rebuildable from these
/// files alone. Writers either append records or atomically replace a whole
/// stage file with deterministic content; existing records are never edited
/// in place.
#[derive(Clone, Debug)]
pub struct CohortStore {
    root: PathBuf,
}

impl CohortStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join("checkpoints"))
            .map_err(|e| CoreError::io(root.display().to_string(), e))?;
        Ok(CohortStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn variants_path(&self) -> PathBuf {
        self.root.join("variants.jsonl")
    }

    pub fn losses_path(&self) -> PathBuf {
        self.root.join("losses.jsonl")
    }

    pub fn spectra_path(&self) -> PathBuf {
        self.root.join("spectra.jsonl")
    }

    pub fn write_variants(&self, variants: &[Variant]) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for v in variants {
            if !seen.insert(v.variant_id.as_str()) {
                return Err(CoreError::contract(format!(
                    "duplicate variant_id `{}`",
                    v.variant_id
                )));
            }
            v.spec.validate()?;
        }
        write_jsonl(&self.variants_path(), variants)
    }

    pub fn read_variants(&self) -> Result<Vec<Variant>> {
        let path = self.variants_path();
        if !path.exists() {
            return Err(CoreError::MissingArtifact {
                path: path.display().to_string(),
                produced_by: "gen-variants".to_string(),
            });
        }
        read_jsonl(&path)
    }

    pub fn write_losses(&self, losses: &[LossRecord]) -> Result<()> {
        write_jsonl(&self.losses_path(), losses)
    }

    pub fn read_losses(&self) -> Result<Vec<LossRecord>> {
        let path = self.losses_path();
        if !path.exists() {
            return Err(CoreError::MissingArtifact {
                path: path.display().to_string(),
                produced_by: "train-variants".to_string(),
            });
        }
        read_jsonl(&path)
    }

    pub fn write_spectra(&self, records: &[SpectrumRecord]) -> Result<()> {
        spectra::write_spectra(&self.spectra_path(), records)
    }

    pub fn append_spectra(&self, records: &[SpectrumRecord]) -> Result<()> {
        spectra::append_spectra(&self.spectra_path(), records)
    }

    pub fn read_spectra(&self) -> Result<Vec<SpectrumRecord>> {
        let path = self.spectra_path();
        if !path.exists() {
            return Err(CoreError::MissingArtifact {
                path: path.display().to_string(),
                produced_by: "compute-le".to_string(),
            });
        }
        spectra::read_spectra(&path)
    }

    /// Extension-free base path of a checkpoint, tagged by the training
    /// fraction as an integer percentage.
    pub fn checkpoint_base(&self, variant_id: &str, fraction: f64) -> PathBuf {
        let pct = (fraction * 100.0).round() as u32;
        self.root
            .join("checkpoints")
            .join(format!("{variant_id}@{pct:03}"))
    }

    pub fn save_checkpoint(&self, variant_id: &str, fraction: f64, cell: &Cell) -> Result<()> {
        checkpoint::save_cell(&self.checkpoint_base(variant_id, fraction), cell)
    }

    pub fn load_checkpoint(&self, variant_id: &str, fraction: f64) -> Result<Cell> {
        let base = self.checkpoint_base(variant_id, fraction);
        if !checkpoint::sidecar_path(&base).exists() {
            return Err(CoreError::MissingArtifact {
                path: base.display().to_string(),
                produced_by: "train-variants".to_string(),
            });
        }
        checkpoint::load_cell(&base)
    }

    /// Cross-file consistency: spectra and losses must reference known
    /// variants, and no `(variant_id, training_fraction)` pair may repeat.
    pub fn validate(&self) -> Result<()> {
        let variants = self.read_variants()?;
        let ids: std::collections::HashSet<&str> =
            variants.iter().map(|v| v.variant_id.as_str()).collect();
        if ids.len() != variants.len() {
            return Err(CoreError::contract(
                "duplicate variant ids in variants.jsonl",
            ));
        }
        if self.spectra_path().exists() {
            let mut seen = std::collections::HashSet::new();
            for (i, record) in self.read_spectra()?.iter().enumerate() {
                if !ids.contains(record.variant_id.as_str()) {
                    return Err(CoreError::Record {
                        line: i + 1,
                        message: format!(
                            "spectrum references unknown variant `{}`",
                            record.variant_id
                        ),
                    });
                }
                let key = (
                    record.variant_id.clone(),
                    record.training_fraction.to_bits(),
                );
                if !seen.insert(key) {
                    return Err(CoreError::Record {
                        line: i + 1,
                        message: format!(
                            "duplicate spectrum for variant `{}` at fraction {}",
                            record.variant_id, record.training_fraction
                        ),
                    });
                }
            }
        }
        if self.losses_path().exists() {
            for (i, loss) in self.read_losses()?.iter().enumerate() {
                if !ids.contains(loss.variant_id.as_str()) {
                    return Err(CoreError::Record {
                        line: i + 1,
                        message: format!(
                            "loss record references unknown variant `{}`",
                            loss.variant_id
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Spec sugar used by store tests and the variant generator.
pub fn variant(
    variant_id: impl Into<String>,
    task: Task,
    replicate: usize,
    spec: CellSpec,
) -> Variant {
    Variant {
        variant_id: variant_id.into(),
        task,
        replicate,
        spec,
    }
}
