//! CSV ingestion and export — the canonical interchange format.
//!
//! One file per subject, header `ch1,...,chN,stimulus,repetition`, one
//! sample per row, UTF-8, `.` decimal point. Floats are written in
//! Rust's shortest round-trip form, so `write → load` reproduces the
//! recording value-exactly and reruns produce byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::EmgRecording;
use crate::error::{PipelineError, Result};

/// Column mapping plus the recording metadata a bare CSV cannot carry
/// (subject id, sample rate).
///
/// With `channel_columns = None`, every header named `ch<integer>` is
/// taken as a channel, in header order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub channel_columns: Option<Vec<String>>,
    pub stimulus_column: String,
    pub repetition_column: String,
    pub subject_id: i32,
    pub sample_rate_hz: f64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            channel_columns: None,
            stimulus_column: "stimulus".into(),
            repetition_column: "repetition".into(),
            subject_id: 0,
            sample_rate_hz: 2000.0,
        }
    }
}

fn parse_cell_f64(cell: &str, row: usize, column: usize) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| PipelineError::Parse {
        row,
        column,
        message: format!("expected a number, got {cell:?}"),
    })
}

/// Parses a label cell that may be written as an integer or an
/// integer-valued float (MATLAB exports often write `3.0`).
fn parse_cell_label(cell: &str, row: usize, column: usize) -> Result<u8> {
    let v = parse_cell_f64(cell, row, column)?;
    let rounded = v.round();
    if (v - rounded).abs() > 1e-9 || !(0.0..=255.0).contains(&rounded) {
        return Err(PipelineError::Parse {
            row,
            column,
            message: format!("expected a small non-negative integer, got {cell:?}"),
        });
    }
    Ok(rounded as u8)
}

/// Loads a recording from CSV per the schema. Row order is preserved;
/// the result passes full [`EmgRecording`] validation.
pub fn load_csv_recording(path: &Path, schema: &CsvSchema) -> Result<EmgRecording> {
    let file = File::open(path).map_err(|e| {
        PipelineError::lookup(format!("cannot open {}: {e}", path.display()))
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| PipelineError::schema(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();

    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            PipelineError::schema(format!(
                "column {name:?} not found in header [{}]",
                headers.join(", ")
            ))
        })
    };

    let channel_idx: Vec<usize> = match &schema.channel_columns {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => {
            let auto: Vec<usize> = headers
                .iter()
                .enumerate()
                .filter(|(_, h)| {
                    h.strip_prefix("ch")
                        .map(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
                        .unwrap_or(false)
                })
                .map(|(i, _)| i)
                .collect();
            if auto.is_empty() {
                return Err(PipelineError::schema(
                    "no channel columns: none named ch<number> and no explicit list given",
                ));
            }
            auto
        }
    };
    let stim_idx = find(&schema.stimulus_column)?;
    let rep_idx = find(&schema.repetition_column)?;

    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); channel_idx.len()];
    let mut stimulus = Vec::new();
    let mut repetition = Vec::new();

    for (i, record) in reader.records().enumerate() {
        // 1-based data coordinates; the header occupies row 1.
        let row = i + 2;
        let record = record.map_err(|e| PipelineError::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        let cell = |idx: usize| -> Result<&str> {
            record.get(idx).ok_or(PipelineError::Parse {
                row,
                column: idx + 1,
                message: "row has fewer columns than the header".into(),
            })
        };
        for (c, &idx) in channel_idx.iter().enumerate() {
            channels[c].push(parse_cell_f64(cell(idx)?, row, idx + 1)?);
        }
        stimulus.push(parse_cell_label(cell(stim_idx)?, row, stim_idx + 1)?);
        repetition.push(parse_cell_label(cell(rep_idx)?, row, rep_idx + 1)?);
    }

    EmgRecording::new(
        schema.subject_id,
        schema.sample_rate_hz,
        channels,
        stimulus,
        repetition,
    )
}

/// Writes a recording in the canonical layout
/// (`ch1,...,chN,stimulus,repetition`). Output is deterministic: same
/// recording, same bytes.
pub fn write_csv_recording(rec: &EmgRecording, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut header: Vec<String> = (1..=rec.n_channels()).map(|c| format!("ch{c}")).collect();
    header.push("stimulus".into());
    header.push("repetition".into());
    writeln!(w, "{}", header.join(","))?;
    for t in 0..rec.n_samples() {
        for c in 0..rec.n_channels() {
            write!(w, "{},", rec.channel(c)[t])?;
        }
        writeln!(w, "{},{}", rec.stimulus()[t], rec.repetition()[t])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::extract_trials;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_a_small_file() {
        let f = write_temp(
            "ch1,ch2,stimulus,repetition\n0.5,-0.25,0,0\n1.0,2.0,1,1\n1.5,-2.0,1,1\n0.0,0.0,0,0\n",
        );
        let rec = load_csv_recording(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(rec.n_samples(), 4);
        assert_eq!(rec.n_channels(), 2);
        assert_eq!(rec.stimulus(), &[0, 1, 1, 0]);
        assert_eq!(rec.repetition(), &[0, 1, 1, 0]);
        assert_eq!(rec.channel(1)[0], -0.25);
        assert_eq!(extract_trials(&rec).len(), 1);
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let f = write_temp("ch1,stimulus\n0.5,0\n");
        let err = load_csv_recording(f.path(), &CsvSchema::default()).unwrap_err();
        assert!(err.to_string().contains("repetition"));
        assert!(matches!(err, PipelineError::Schema(_)));
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let f = write_temp("ch1,stimulus,repetition\n0.5,0,0\nabc,0,0\n");
        let err = load_csv_recording(f.path(), &CsvSchema::default()).unwrap_err();
        match err {
            PipelineError::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, 1);
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn out_of_range_stimulus_is_a_validation_error() {
        let f = write_temp("ch1,stimulus,repetition\n0.5,53,0\n");
        let err = load_csv_recording(f.path(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, PipelineError::Validation(_)));
        assert!(err.to_string().contains("53"));
    }

    #[test]
    fn integer_valued_float_labels_are_accepted() {
        let f = write_temp("ch1,stimulus,repetition\n0.5,3.0,1.0\n");
        let rec = load_csv_recording(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(rec.stimulus(), &[3]);
    }

    #[test]
    fn explicit_channel_mapping_overrides_autodetection() {
        let f = write_temp("emg_a,emg_b,stim,rep\n0.5,1.5,0,0\n");
        let schema = CsvSchema {
            channel_columns: Some(vec!["emg_b".into(), "emg_a".into()]),
            stimulus_column: "stim".into(),
            repetition_column: "rep".into(),
            ..CsvSchema::default()
        };
        let rec = load_csv_recording(f.path(), &schema).unwrap();
        assert_eq!(rec.channel(0)[0], 1.5);
        assert_eq!(rec.channel(1)[0], 0.5);
    }

    #[test]
    fn round_trip_is_value_exact() {
        // Awkward values: subnormal-ish, negative zero, long fractions.
        let channels = vec![
            vec![0.1, -0.0, 1.0 / 3.0, 2.5e-300],
            vec![-1e16, 0.30000000000000004, 7.0, -2.2250738585072014e-308],
        ];
        let rec = EmgRecording::new(
            3,
            2000.0,
            channels,
            vec![0, 1, 1, 0],
            vec![0, 2, 2, 0],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("subject_3.csv");
        write_csv_recording(&rec, &path).unwrap();
        let schema = CsvSchema {
            subject_id: 3,
            ..CsvSchema::default()
        };
        let back = load_csv_recording(&path, &schema).unwrap();
        assert_eq!(rec, back);

        // Re-writing yields byte-identical files.
        let path2 = dir.path().join("again.csv");
        write_csv_recording(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
