//! The extracted feature table and its on-disk form.
//!
//! A table is persisted as two files: a CSV holding the four metadata
//! columns (`subject,gesture,repetition,window_index`) followed by the
//! feature columns, and a sidecar JSON manifest
//! (`<stem>.manifest.json`) carrying provenance — registry version,
//! window length, the preprocess config hash when known — plus the
//! sparse per-row quality flags. Floats are written in Rust's shortest
//! round-trip form, so `save → load → save` is byte-identical.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Identity of one table row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowMeta {
    pub subject: i32,
    pub gesture: u8,
    pub repetition: u8,
    pub window_index: usize,
}

/// Quality flags raised while computing a row. They ride in the
/// manifest, not the CSV, so the column layout stays purely numeric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowFlags {
    /// CoV hit the near-zero-mean policy on some channel and reported 0.
    #[serde(default)]
    pub cov_degenerate: bool,
    /// A zero-power spectrum forced MNF to 0 on some channel.
    #[serde(default)]
    pub spectral_zero_power: bool,
}

impl RowFlags {
    pub fn any(&self) -> bool {
        self.cov_degenerate || self.spectral_zero_power
    }
}

/// How the table was produced; enough to reproduce the schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableProvenance {
    pub registry_version: String,
    pub window_ms: f64,
    /// Hash of the preprocessing configuration the source envelopes
    /// were produced with, when the caller knows it.
    pub preprocess_hash: Option<String>,
}

/// One row per window, one column per feature, with row identity and
/// flags alongside. Construction validates shape, name uniqueness, and
/// finiteness, so a `FeatureTable` in hand is always well-formed.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    feature_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    meta: Vec<RowMeta>,
    flags: Vec<RowFlags>,
    provenance: TableProvenance,
}

const METADATA_COLUMNS: [&str; 4] = ["subject", "gesture", "repetition", "window_index"];
const MANIFEST_SCHEMA: &str = "emgpipe.feature-table";

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    schema: String,
    version: u32,
    n_rows: usize,
    n_features: usize,
    provenance: TableProvenance,
    /// Row index → flags, only for rows where any flag is set.
    flagged_rows: BTreeMap<usize, RowFlags>,
}

/// Path of the sidecar manifest for a table stored at `path`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

impl FeatureTable {
    pub fn new(
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        meta: Vec<RowMeta>,
        flags: Vec<RowFlags>,
        provenance: TableProvenance,
    ) -> Result<Self> {
        if feature_names.is_empty() {
            return Err(PipelineError::validation("feature table has no columns"));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &feature_names {
            if METADATA_COLUMNS.contains(&name.as_str()) {
                return Err(PipelineError::validation(format!(
                    "feature name {name:?} collides with a metadata column"
                )));
            }
            if !seen.insert(name) {
                return Err(PipelineError::validation(format!(
                    "duplicate feature name {name:?}"
                )));
            }
        }
        if rows.len() != meta.len() || rows.len() != flags.len() {
            return Err(PipelineError::validation(format!(
                "row bookkeeping out of step: {} rows, {} meta, {} flags",
                rows.len(),
                meta.len(),
                flags.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != feature_names.len() {
                return Err(PipelineError::validation(format!(
                    "row {i} has {} values for {} columns",
                    row.len(),
                    feature_names.len()
                )));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(PipelineError::validation(format!(
                    "row {i} column {:?} is not finite",
                    feature_names[j]
                )));
            }
        }
        Ok(FeatureTable {
            feature_names,
            rows,
            meta,
            flags,
            provenance,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn meta(&self) -> &[RowMeta] {
        &self.meta
    }

    pub fn flags(&self) -> &[RowFlags] {
        &self.flags
    }

    pub fn provenance(&self) -> &TableProvenance {
        &self.provenance
    }

    pub fn set_preprocess_hash(&mut self, hash: Option<String>) {
        self.provenance.preprocess_hash = hash;
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// The named feature column, top to bottom.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self.column_index(name).ok_or_else(|| {
            PipelineError::lookup(format!("no feature column named {name:?}"))
        })?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// A new table keeping only the named columns, in the given order.
    /// Metadata, flags, and provenance carry over unchanged.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureTable> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column_index(n).ok_or_else(|| {
                    PipelineError::lookup(format!("no feature column named {n:?}"))
                })
            })
            .collect::<Result<_>>()?;
        let rows = self
            .rows
            .iter()
            .map(|r| idx.iter().map(|&i| r[i]).collect())
            .collect();
        FeatureTable::new(
            names.to_vec(),
            rows,
            self.meta.clone(),
            self.flags.clone(),
            self.provenance.clone(),
        )
    }

    /// Writes the CSV and its sidecar manifest. Reruns over the same
    /// table produce byte-identical files.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        write!(w, "{}", METADATA_COLUMNS.join(","))?;
        for name in &self.feature_names {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for (row, meta) in self.rows.iter().zip(&self.meta) {
            write!(
                w,
                "{},{},{},{}",
                meta.subject, meta.gesture, meta.repetition, meta.window_index
            )?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;

        let manifest = ManifestFile {
            schema: MANIFEST_SCHEMA.into(),
            version: 1,
            n_rows: self.n_rows(),
            n_features: self.n_features(),
            provenance: self.provenance.clone(),
            flagged_rows: self
                .flags
                .iter()
                .enumerate()
                .filter(|(_, f)| f.any())
                .map(|(i, f)| (i, *f))
                .collect(),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| PipelineError::format(format!("cannot encode manifest: {e}")))?;
        std::fs::write(manifest_path(path), json + "\n")?;
        Ok(())
    }

    /// Loads a table saved by [`FeatureTable::save`]. The manifest is
    /// required — without it the table would lose its provenance and
    /// flags — and its row/column counts must agree with the CSV.
    pub fn load(path: &Path) -> Result<FeatureTable> {
        let mpath = manifest_path(path);
        let mfile = File::open(&mpath).map_err(|e| {
            PipelineError::dependency(format!(
                "feature table manifest {} is missing: {e}",
                mpath.display()
            ))
        })?;
        let manifest: ManifestFile = serde_json::from_reader(BufReader::new(mfile))
            .map_err(|e| PipelineError::format(format!("bad manifest {}: {e}", mpath.display())))?;
        if manifest.schema != MANIFEST_SCHEMA {
            return Err(PipelineError::format(format!(
                "manifest schema is {:?}, expected {MANIFEST_SCHEMA:?}",
                manifest.schema
            )));
        }
        if manifest.version != 1 {
            return Err(PipelineError::version(format!(
                "feature table manifest version {} is newer than this build",
                manifest.version
            )));
        }

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
        if headers.len() < METADATA_COLUMNS.len() + 1 {
            return Err(PipelineError::schema(format!(
                "header has {} columns; need the 4 metadata columns plus features",
                headers.len()
            )));
        }
        for (i, want) in METADATA_COLUMNS.iter().enumerate() {
            if headers[i] != *want {
                return Err(PipelineError::schema(format!(
                    "column {} is {:?}, expected {want:?}",
                    i + 1,
                    headers[i]
                )));
            }
        }
        let feature_names: Vec<String> = headers[METADATA_COLUMNS.len()..].to_vec();

        let mut rows = Vec::new();
        let mut meta = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record =
                record.map_err(|e| PipelineError::format(format!("row {}: {e}", i + 2)))?;
            if record.len() != headers.len() {
                return Err(PipelineError::Parse {
                    row: i + 2,
                    column: 1,
                    message: format!(
                        "row has {} fields, header has {}",
                        record.len(),
                        headers.len()
                    ),
                });
            }
            let cell = |j: usize| record.get(j).unwrap_or("").trim();
            let int = |j: usize| -> Result<i64> {
                cell(j).parse::<i64>().map_err(|_| PipelineError::Parse {
                    row: i + 2,
                    column: j + 1,
                    message: format!("expected an integer, got {:?}", cell(j)),
                })
            };
            meta.push(RowMeta {
                subject: int(0)? as i32,
                gesture: int(1)? as u8,
                repetition: int(2)? as u8,
                window_index: int(3)? as usize,
            });
            let mut row = Vec::with_capacity(feature_names.len());
            for j in METADATA_COLUMNS.len()..headers.len() {
                let v = cell(j).parse::<f64>().map_err(|_| PipelineError::Parse {
                    row: i + 2,
                    column: j + 1,
                    message: format!("expected a number, got {:?}", cell(j)),
                })?;
                row.push(v);
            }
            rows.push(row);
        }

        if rows.len() != manifest.n_rows {
            return Err(PipelineError::corrupt(format!(
                "CSV has {} rows but the manifest recorded {}",
                rows.len(),
                manifest.n_rows
            )));
        }
        if feature_names.len() != manifest.n_features {
            return Err(PipelineError::corrupt(format!(
                "CSV has {} feature columns but the manifest recorded {}",
                feature_names.len(),
                manifest.n_features
            )));
        }
        let mut flags = vec![RowFlags::default(); rows.len()];
        for (i, f) in manifest.flagged_rows {
            if i >= flags.len() {
                return Err(PipelineError::corrupt(format!(
                    "manifest flags row {i}, beyond the {} CSV rows",
                    flags.len()
                )));
            }
            flags[i] = f;
        }
        FeatureTable::new(feature_names, rows, meta, flags, manifest.provenance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_table() -> FeatureTable {
        FeatureTable::new(
            vec!["rms_ch1".into(), "rms_ch2".into(), "rms_std".into()],
            vec![
                vec![0.5, 0.25, 0.125],
                vec![1.5, 2.5, 0.5],
                vec![0.1000000000000001, 3.0, 1e-17],
            ],
            vec![
                RowMeta {
                    subject: 1,
                    gesture: 0,
                    repetition: 1,
                    window_index: 0,
                },
                RowMeta {
                    subject: 1,
                    gesture: 4,
                    repetition: 1,
                    window_index: 1,
                },
                RowMeta {
                    subject: 2,
                    gesture: 52,
                    repetition: 6,
                    window_index: 0,
                },
            ],
            vec![
                RowFlags::default(),
                RowFlags {
                    cov_degenerate: true,
                    spectral_zero_power: false,
                },
                RowFlags::default(),
            ],
            TableProvenance {
                registry_version: "scalar-v1".into(),
                window_ms: 200.0,
                preprocess_hash: Some("abc123".into()),
            },
        )
        .unwrap()
    }

    #[test]
    fn save_load_round_trip_is_value_exact_and_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        let table = sample_table();
        table.save(&path).unwrap();
        let loaded = FeatureTable::load(&path).unwrap();
        assert_eq!(table, loaded);

        let first_csv = std::fs::read(&path).unwrap();
        let first_manifest = std::fs::read(manifest_path(&path)).unwrap();
        loaded.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first_csv);
        assert_eq!(std::fs::read(manifest_path(&path)).unwrap(), first_manifest);
    }

    #[test]
    fn metadata_columns_lead_the_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        sample_table().save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "subject,gesture,repetition,window_index,rms_ch1,rms_ch2,rms_std"
        );
        assert!(text.lines().nth(1).unwrap().starts_with("1,0,1,0,"));
    }

    #[test]
    fn flags_survive_the_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let table = sample_table();
        table.save(&path).unwrap();
        let loaded = FeatureTable::load(&path).unwrap();
        assert!(!loaded.flags()[0].any());
        assert!(loaded.flags()[1].cov_degenerate);
        assert!(!loaded.flags()[1].spectral_zero_power);
        let manifest_text = std::fs::read_to_string(manifest_path(&path)).unwrap();
        assert!(manifest_text.contains("\"registry_version\": \"scalar-v1\""));
        assert!(manifest_text.contains("\"preprocess_hash\": \"abc123\""));
    }

    #[test]
    fn a_missing_manifest_is_a_dependency_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        sample_table().save(&path).unwrap();
        std::fs::remove_file(manifest_path(&path)).unwrap();
        let err = FeatureTable::load(&path).unwrap_err();
        assert!(matches!(err, PipelineError::Dependency(_)), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn a_reordered_header_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        sample_table().save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let swapped = text.replacen(
            "subject,gesture,repetition,window_index",
            "gesture,subject,repetition,window_index",
            1,
        );
        std::fs::write(&path, swapped).unwrap();
        let err = FeatureTable::load(&path).unwrap_err();
        assert!(matches!(err, PipelineError::Schema(_)), "{err}");
    }

    #[test]
    fn manifest_row_count_disagreement_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        sample_table().save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let truncated: Vec<&str> = text.lines().take(3).collect();
        std::fs::write(&path, truncated.join("\n") + "\n").unwrap();
        let err = FeatureTable::load(&path).unwrap_err();
        assert!(matches!(err, PipelineError::Corrupt(_)), "{err}");
    }

    #[test]
    fn construction_rejects_malformed_tables() {
        let prov = TableProvenance {
            registry_version: "scalar-v1".into(),
            window_ms: 200.0,
            preprocess_hash: None,
        };
        let meta = RowMeta {
            subject: 1,
            gesture: 1,
            repetition: 1,
            window_index: 0,
        };
        // NaN cell.
        let err = FeatureTable::new(
            vec!["a".into()],
            vec![vec![f64::NAN]],
            vec![meta],
            vec![RowFlags::default()],
            prov.clone(),
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::Validation(_)), "{err}");
        // Duplicate column.
        assert!(FeatureTable::new(
            vec!["a".into(), "a".into()],
            vec![vec![1.0, 2.0]],
            vec![meta],
            vec![RowFlags::default()],
            prov.clone(),
        )
        .is_err());
        // Name colliding with metadata.
        assert!(FeatureTable::new(
            vec!["subject".into()],
            vec![vec![1.0]],
            vec![meta],
            vec![RowFlags::default()],
            prov.clone(),
        )
        .is_err());
        // Ragged row.
        assert!(FeatureTable::new(
            vec!["a".into(), "b".into()],
            vec![vec![1.0]],
            vec![meta],
            vec![RowFlags::default()],
            prov,
        )
        .is_err());
    }

    #[test]
    fn column_selection_keeps_order_and_metadata() {
        let table = sample_table();
        let sub = table
            .select_columns(&["rms_std".into(), "rms_ch1".into()])
            .unwrap();
        assert_eq!(sub.feature_names(), ["rms_std", "rms_ch1"]);
        assert_eq!(sub.row(0), [0.125, 0.5]);
        assert_eq!(sub.meta(), table.meta());
        assert!(table.select_columns(&["nope".into()]).is_err());
        assert!(matches!(
            table.column("nope").unwrap_err(),
            PipelineError::Lookup(_)
        ));
    }
}
