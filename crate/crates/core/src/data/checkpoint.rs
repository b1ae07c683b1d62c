//! Checkpoints: a flat binary of little-endian 64-bit floats plus a JSON
//! sidecar describing tensor names, shapes, and offsets. The same container
//! serves cell parameters and autoencoder weights.
//!
//! `base` paths are extension-free; `save` writes `base.bin` and `base.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cells::{Cell, CellSpec};
use crate::error::{CoreError, Result};

/// `(name, shape, row-major values)` — one tensor as handed to the store.
pub type NamedTensor = (String, Vec<usize>, Vec<f64>);

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    /// Offset into the binary payload, counted in f64 slots.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    /// Free-form owner metadata (a cell spec, an autoencoder config, ...).
    meta: serde_json::Value,
    tensors: Vec<TensorMeta>,
}

pub fn bin_path(base: &Path) -> PathBuf {
    base.with_extension("bin")
}

pub fn sidecar_path(base: &Path) -> PathBuf {
    base.with_extension("json")
}

/// Write a tensor blob. Row-major data, concatenated in the given order.
pub fn save_tensors(
    base: &Path,
    meta: serde_json::Value,
    tensors: &[(String, Vec<usize>, Vec<f64>)],
) -> Result<()> {
    if let Some(parent) = base.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CoreError::io(parent.display().to_string(), e))?;
        }
    }
    let mut metas = Vec::with_capacity(tensors.len());
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, shape, data) in tensors {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(CoreError::contract(format!(
                "tensor `{name}` shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        metas.push(TensorMeta {
            name: name.clone(),
            shape: shape.clone(),
            offset,
        });
        offset += data.len();
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let bin = bin_path(base);
    std::fs::write(&bin, &payload).map_err(|e| CoreError::io(bin.display().to_string(), e))?;
    let sidecar = Sidecar {
        meta,
        tensors: metas,
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| CoreError::contract(format!("unserializable sidecar: {e}")))?;
    let side = sidecar_path(base);
    std::fs::write(&side, json).map_err(|e| CoreError::io(side.display().to_string(), e))?;
    Ok(())
}

/// Read a tensor blob back: `(meta, tensors)` in stored order.
pub fn load_tensors(
    base: &Path,
) -> Result<(serde_json::Value, Vec<(String, Vec<usize>, Vec<f64>)>)> {
    let side = sidecar_path(base);
    let json =
        std::fs::read_to_string(&side).map_err(|e| CoreError::io(side.display().to_string(), e))?;
    let sidecar: Sidecar = serde_json::from_str(&json).map_err(|e| CoreError::Format {
        path: side.display().to_string(),
        offset: 0,
        message: format!("bad sidecar: {e}"),
    })?;

    let bin = bin_path(base);
    let payload = std::fs::read(&bin).map_err(|e| CoreError::io(bin.display().to_string(), e))?;
    let total: usize = sidecar
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    if payload.len() != total * 8 {
        return Err(CoreError::Format {
            path: bin.display().to_string(),
            offset: payload.len() as u64,
            message: format!(
                "expected {} bytes of f64 data, found {}",
                total * 8,
                payload.len()
            ),
        });
    }

    let mut tensors = Vec::with_capacity(sidecar.tensors.len());
    for meta in &sidecar.tensors {
        let len: usize = meta.shape.iter().product();
        let start = meta.offset * 8;
        let end = start + len * 8;
        if end > payload.len() {
            return Err(CoreError::Format {
                path: bin.display().to_string(),
                offset: start as u64,
                message: format!("tensor `{}` extends past end of file", meta.name),
            });
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((meta.name.clone(), meta.shape.clone(), data));
    }
    Ok((sidecar.meta, tensors))
}

/// Checkpoint a cell (spec in the sidecar, parameters in the payload).
pub fn save_cell(base: &Path, cell: &Cell) -> Result<()> {
    let tensors: Vec<(String, Vec<usize>, Vec<f64>)> = cell
        .named_tensors()
        .into_iter()
        .map(|(n, s, d)| (n.to_string(), s, d))
        .collect();
    let meta = serde_json::to_value(cell.spec())
        .map_err(|e| CoreError::contract(format!("unserializable cell spec: {e}")))?;
    save_tensors(base, meta, &tensors)
}

pub fn load_cell(base: &Path) -> Result<Cell> {
    let (meta, tensors) = load_tensors(base)?;
    let spec: CellSpec = serde_json::from_value(meta).map_err(|e| CoreError::Format {
        path: sidecar_path(base).display().to_string(),
        offset: 0,
        message: format!("sidecar meta is not a cell spec: {e}"),
    })?;
    Cell::from_named_tensors(spec, &tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{init_cell, Architecture, CellState, DynamicalMap, StepInput};
    use nalgebra::DVector;

    #[test]
    fn cell_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for arch in [
            Architecture::VanillaRnn,
            Architecture::Lstm,
            Architecture::Gru,
            Architecture::Rank1Rnn,
            Architecture::Asrnn,
        ] {
            let spec = CellSpec::new(arch, 5, 3, 0.8, 99).unwrap();
            let cell = init_cell(&spec).unwrap();
            let base = dir.path().join(format!("{arch}"));
            save_cell(&base, &cell).unwrap();
            let back = load_cell(&base).unwrap();
            assert_eq!(back.spec(), cell.spec());
            assert_eq!(back.named_tensors(), cell.named_tensors());

            let state = CellState(DVector::from_fn(cell.state_dim(), |i, _| 0.1 * i as f64));
            let input = StepInput(DVector::from_fn(3, |i, _| 0.2 * i as f64 - 0.1));
            assert_eq!(
                back.step(&state, &input).unwrap(),
                cell.step(&state, &input).unwrap()
            );
        }
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CellSpec::new(Architecture::VanillaRnn, 4, 2, 0.5, 7).unwrap();
        let cell = init_cell(&spec).unwrap();
        let base = dir.path().join("trunc");
        save_cell(&base, &cell).unwrap();
        let bin = bin_path(&base);
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 9]).unwrap();
        match load_cell(&base).unwrap_err() {
            CoreError::Format { message, .. } => {
                assert!(message.contains("expected"), "message: {message}");
                assert!(
                    message.contains(&format!("{}", bytes.len())),
                    "message: {message}"
                );
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_is_rejected_on_save() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("bad");
        let bad = vec![("w".to_string(), vec![2, 2], vec![1.0, 2.0, 3.0])];
        assert!(save_tensors(&base, serde_json::Value::Null, &bad).is_err());
    }

    #[test]
    fn generic_blob_preserves_meta() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("blob");
        let meta = serde_json::json!({"kind": "test", "layers": [4, 2]});
        let tensors = vec![
            ("a".to_string(), vec![2, 2], vec![1.0, -2.0, 0.5, 0.25]),
            ("b".to_string(), vec![3], vec![0.1, 0.2, 0.3]),
        ];
        save_tensors(&base, meta.clone(), &tensors).unwrap();
        let (meta_back, tensors_back) = load_tensors(&base).unwrap();
        assert_eq!(meta_back, meta);
        assert_eq!(tensors_back, tensors);
    }
}
