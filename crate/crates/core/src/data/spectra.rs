//! JSON-lines persistence for spectrum records.
//!
//! One record per line. `serde_json` prints floats with the shortest decimal
//! form that round-trips, so 64-bit values survive write/read bit-exactly.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::lyapunov::SpectrumRecord;

/// Write `records` to `path`, replacing any existing file.
pub fn write_spectra(path: &Path, records: &[SpectrumRecord]) -> Result<()> {
    for record in records {
        record.validate()?;
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CoreError::io(parent.display().to_string(), e))?;
    }
    let file = File::create(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut out = BufWriter::new(file);
    write_into(&mut out, records, path)
}

/// Append `records` to `path`, creating the file if needed.
pub fn append_spectra(path: &Path, records: &[SpectrumRecord]) -> Result<()> {
    for record in records {
        record.validate()?;
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut out = BufWriter::new(file);
    write_into(&mut out, records, path)
}

fn write_into(out: &mut impl Write, records: &[SpectrumRecord], path: &Path) -> Result<()> {
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| CoreError::contract(format!("unserializable record: {e}")))?;
        writeln!(out, "{line}").map_err(|e| CoreError::io(path.display().to_string(), e))?;
    }
    out.flush()
        .map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Read all records from `path`. Parse or invariant failures are reported
/// with their 1-based line number.
pub fn read_spectra(path: &Path) -> Result<Vec<SpectrumRecord>> {
    let file = File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SpectrumRecord =
            serde_json::from_str(&line).map_err(|e| CoreError::Record {
                line: idx + 1,
                message: e.to_string(),
            })?;
        record.validate().map_err(|e| CoreError::Record {
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::Architecture;
    use crate::Task;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(id: &str, spectrum: Vec<f64>) -> SpectrumRecord {
        SpectrumRecord {
            variant_id: id.to_string(),
            task: Task::TargetLearning,
            architecture: Architecture::Rank1Rnn,
            hidden_size: spectrum.len(),
            init_param: 1.4,
            training_fraction: 1.0,
            target_loss: 0.42,
            degenerate_flag: false,
            spectrum,
        }
    }

    #[test]
    fn roundtrip_is_field_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spectra.jsonl");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let records: Vec<SpectrumRecord> = (0..100)
            .map(|i| {
                let mut spectrum: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
                spectrum.sort_by(|a, b| b.total_cmp(a));
                record(&format!("v-{i}"), spectrum)
            })
            .collect();
        write_spectra(&path, &records).unwrap();
        let back = read_spectra(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn floats_survive_bit_exactly() {
        // 0.1 + 0.2 style values have no short decimal representation; the
        // oracle checks bit patterns over a large random draw.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bits.jsonl");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut values: Vec<f64> = (0..10_000)
            .map(|_| rng.random_range(-1.0e3..1.0e3) + 0.1 + 0.2)
            .collect();
        values.sort_by(|a, b| b.total_cmp(a));
        let records = vec![record("bits", values.clone())];
        write_spectra(&path, &records).unwrap();
        let back = read_spectra(&path).unwrap();
        for (a, b) in back[0].spectrum.iter().zip(&values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn missing_field_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.jsonl");
        let good = serde_json::to_string(&record("ok", vec![0.5, -0.5])).unwrap();
        // Drop target_loss from the second line.
        let broken = good.replace("\"target_loss\":0.42,", "");
        assert_ne!(good, broken);
        std::fs::write(&path, format!("{good}\n{broken}\n")).unwrap();
        match read_spectra(&path).unwrap_err() {
            CoreError::Record { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("target_loss"), "message: {message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn append_accumulates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("acc.jsonl");
        append_spectra(&path, &[record("a", vec![0.0, -1.0])]).unwrap();
        append_spectra(&path, &[record("b", vec![0.5, -0.5])]).unwrap();
        let back = read_spectra(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].variant_id, "b");
    }

    #[test]
    fn invalid_record_refuses_to_serialize() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let bad = record("bad", vec![-1.0, 0.0]); // ascending
        assert!(write_spectra(&path, &[bad]).is_err());
    }
}
