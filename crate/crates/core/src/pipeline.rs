//! Stage runner: executes pipeline stages into a run directory.
//!
//! Each stage writes its artifacts under `<root>/<stage-dir>/` together
//! with a `manifest.json` recording the hash of the configuration
//! sections it consumed, the hash of every input file, and its output
//! list. Re-running a stage whose configuration, inputs, and outputs
//! are all unchanged is detected and skipped (override with `force`);
//! any change reruns the stage. Downstream stages locate their inputs
//! through upstream manifests, so a missing prerequisite surfaces as a
//! dependency error naming the stage to run.
//!
//! Every artifact is byte-deterministic: reruns with the same config
//! and seed reproduce each file exactly (no timestamps anywhere), which
//! is what makes the manifests' input hashes meaningful.
//!
//! The expanded configuration is written to
//! `<root>/effective-config.toml` on every invocation, so a run
//! directory always carries the exact settings that produced it.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clustering::cluster_gestures;
use crate::config::{DatasetSource, PipelineConfig, UseSelection};
use crate::dataset::csv_io::{load_csv_recording, write_csv_recording, CsvSchema};
use crate::dataset::mat::{load_mat_recording, MatVariableNames};
use crate::dataset::synth::generate_synthetic_recordings;
use crate::dataset::EmgRecording;
use crate::error::{PipelineError, Result};
use crate::evaluation::{
    compare_models, cross_validate, make_folds, window_comparison, EvaluationReport,
};
use crate::features::{extract_feature_table, manifest_path, FeatureTable, WindowSpec};
use crate::featsel::{hybrid_select, SelectionReport};
use crate::hash::fnv1a64;
use crate::models::{feature_schema_hash, load_model, save_model, train_model, ModelKind};
use crate::preprocess::preprocess_recording;

/// One pipeline stage, in canonical execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Synth,
    Preprocess,
    Features,
    Cluster,
    Select,
    Train,
    Evaluate,
    Compare,
    Windows,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Ingest,
        Stage::Synth,
        Stage::Preprocess,
        Stage::Features,
        Stage::Cluster,
        Stage::Select,
        Stage::Train,
        Stage::Evaluate,
        Stage::Compare,
        Stage::Windows,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Synth => "synth",
            Stage::Preprocess => "preprocess",
            Stage::Features => "features",
            Stage::Cluster => "cluster",
            Stage::Select => "select",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Compare => "compare",
            Stage::Windows => "windows",
            Stage::Report => "report",
        }
    }

    /// Directory under the run root holding this stage's artifacts.
    /// `ingest` and `synth` share `dataset/` — they are alternative
    /// producers of the same thing.
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Ingest | Stage::Synth => "dataset",
            other => other.name(),
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                PipelineError::argument(format!(
                    "unknown stage {s:?}; expected one of {}",
                    Stage::ALL.map(Stage::name).join(", ")
                ))
            })
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a stage records about its run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    /// Producing stage name.
    pub stage: String,
    /// Hash of the configuration sections this stage consumes.
    pub config_hash: String,
    /// Input file → content hash, as consumed.
    pub inputs: BTreeMap<String, String>,
    /// Root-relative output paths, in creation order.
    pub outputs: Vec<String>,
    /// Stage-specific metadata (recording lists, headline metrics, …).
    #[serde(default)]
    pub details: serde_json::Value,
}

/// Result of [`Pipeline::run`].
#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub stage: Stage,
    /// True when the stage was up to date and nothing was recomputed.
    pub skipped: bool,
    /// Absolute artifact paths.
    pub artifacts: Vec<PathBuf>,
    /// One-line human summary for freshly computed stages.
    pub summary: Option<String>,
}

/// Recording metadata a bare CSV cannot carry, kept in stage manifests
/// so downstream stages can reload files losslessly.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct RecordingEntry {
    file: String,
    subject_id: i32,
    sample_rate_hz: f64,
}

fn hash_bytes(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| {
        PipelineError::lookup(format!("cannot read {}: {e}", path.display()))
    })?;
    Ok(hash_bytes(&bytes))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| {
        PipelineError::format(format!("cannot serialize {}: {e}", path.display()))
    })?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Drives stages against one run directory.
pub struct Pipeline {
    cfg: PipelineConfig,
    root: PathBuf,
    force: bool,
}

impl Pipeline {
    /// Validates the config up front; `force` disables skip detection.
    pub fn new(cfg: PipelineConfig, root: impl Into<PathBuf>, force: bool) -> Result<Self> {
        cfg.validate()?;
        Ok(Pipeline {
            cfg,
            root: root.into(),
            force,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Runs (or skips) one stage, writing the effective config first.
    pub fn run(&self, stage: Stage) -> Result<StageOutcome> {
        fs::create_dir_all(&self.root)?;
        self.cfg.save(&self.root.join("effective-config.toml"))?;
        match stage {
            Stage::Synth => self.run_synth(),
            Stage::Ingest => self.run_ingest(),
            Stage::Preprocess => self.run_preprocess(),
            Stage::Features => self.run_features(),
            Stage::Cluster => self.run_cluster(),
            Stage::Select => self.run_select(),
            Stage::Train => self.run_train(),
            Stage::Evaluate => self.run_evaluate(),
            Stage::Compare => self.run_compare(),
            Stage::Windows => self.run_windows(),
            Stage::Report => self.run_report(),
        }
    }

    // ---- shared machinery -------------------------------------------------

    fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.dir_name())
    }

    fn manifest_file(&self, stage: Stage) -> PathBuf {
        self.stage_dir(stage).join("manifest.json")
    }

    /// Which stage produces the dataset under this configuration.
    fn dataset_stage(&self) -> Stage {
        match self.cfg.dataset.source {
            DatasetSource::Synthetic => Stage::Synth,
            DatasetSource::Csv | DatasetSource::Mat => Stage::Ingest,
        }
    }

    fn load_manifest(&self, stage: Stage) -> Result<Option<StageManifest>> {
        let path = self.manifest_file(stage);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).map(Some).map_err(|e| {
            PipelineError::corrupt(format!("manifest {} is unreadable: {e}", path.display()))
        })
    }

    /// Loads the manifest `consumer` depends on, or the dependency
    /// error naming the stage to run.
    fn upstream_manifest(&self, consumer: Stage, producer: Stage) -> Result<StageManifest> {
        let manifest = self.load_manifest(producer)?.ok_or_else(|| {
            PipelineError::dependency(format!(
                "the {consumer} stage needs artifacts from the {producer} stage; \
                 run `emgpipe {producer}` first"
            ))
        })?;
        if manifest.stage != producer.name() {
            return Err(PipelineError::dependency(format!(
                "{} holds {} output, but dataset.source selects {producer}; \
                 run `emgpipe {producer}` (or change the config)",
                self.stage_dir(producer).display(),
                manifest.stage,
            )));
        }
        for rel in &manifest.outputs {
            if !self.root.join(rel).exists() {
                return Err(PipelineError::dependency(format!(
                    "artifact {rel} recorded by the {producer} stage is missing; \
                     run `emgpipe {producer}` again"
                )));
            }
        }
        Ok(manifest)
    }

    /// Current content hashes of every upstream output.
    fn input_map(&self, upstreams: &[&StageManifest]) -> Result<BTreeMap<String, String>> {
        let mut map = BTreeMap::new();
        for manifest in upstreams {
            for rel in &manifest.outputs {
                map.insert(rel.clone(), hash_file(&self.root.join(rel))?);
            }
        }
        Ok(map)
    }

    /// Hash of the configuration this stage consumes. Stages rerun
    /// when their relevant sections change but stay skippable when an
    /// unrelated knob moves.
    fn config_hash(&self, stage: Stage) -> Result<String> {
        let cfg = &self.cfg;
        let value = match stage {
            Stage::Synth => json!({"seed": cfg.seed, "spec": cfg.synthetic_spec()}),
            Stage::Ingest => json!({"dataset": cfg.dataset}),
            Stage::Preprocess => json!({"preprocess": cfg.preprocess}),
            Stage::Features => json!({"features": cfg.features}),
            Stage::Cluster => json!({"clustering": cfg.clustering}),
            Stage::Select => json!({"selection": cfg.selection}),
            Stage::Train => json!({
                "seed": cfg.seed,
                "models": cfg.models,
                "kinds": cfg.evaluation.models,
                "selection": self.selection_state()?,
            }),
            Stage::Evaluate | Stage::Compare => json!({
                "seed": cfg.seed,
                "models": cfg.models,
                "evaluation": cfg.evaluation,
                "selection": self.selection_state()?,
            }),
            Stage::Windows => json!({
                "seed": cfg.seed,
                "models": cfg.models,
                "preprocess": cfg.preprocess,
                "features": cfg.features,
                "evaluation": cfg.evaluation,
            }),
            Stage::Report => json!({"config": cfg.content_hash()?}),
        };
        let text = serde_json::to_string(&value)
            .map_err(|e| PipelineError::format(format!("cannot hash config: {e}")))?;
        Ok(hash_bytes(text.as_bytes()))
    }

    /// Whether a selection restriction applies right now. Part of the
    /// train/evaluate config hash, so a selection appearing (or
    /// disappearing) under `auto` invalidates those stages.
    fn selection_state(&self) -> Result<&'static str> {
        Ok(match self.cfg.evaluation.use_selection {
            UseSelection::Never => "none",
            UseSelection::Require => "used",
            UseSelection::Auto => {
                if self.load_manifest(Stage::Select)?.is_some() {
                    "used"
                } else {
                    "none"
                }
            }
        })
    }

    fn maybe_skip(
        &self,
        stage: Stage,
        config_hash: &str,
        inputs: &BTreeMap<String, String>,
    ) -> Result<Option<StageOutcome>> {
        if self.force {
            return Ok(None);
        }
        let Some(manifest) = self.load_manifest(stage)? else {
            return Ok(None);
        };
        let fresh = manifest.stage == stage.name()
            && manifest.config_hash == config_hash
            && manifest.inputs == *inputs
            && manifest
                .outputs
                .iter()
                .all(|rel| self.root.join(rel).exists());
        if !fresh {
            return Ok(None);
        }
        Ok(Some(StageOutcome {
            stage,
            skipped: true,
            artifacts: manifest.outputs.iter().map(|r| self.root.join(r)).collect(),
            summary: None,
        }))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        stage: Stage,
        config_hash: String,
        inputs: BTreeMap<String, String>,
        outputs: Vec<String>,
        details: serde_json::Value,
        summary: Option<String>,
    ) -> Result<StageOutcome> {
        let artifacts = outputs.iter().map(|r| self.root.join(r)).collect();
        let manifest = StageManifest {
            stage: stage.name().into(),
            config_hash,
            inputs,
            outputs,
            details,
        };
        write_json(&self.manifest_file(stage), &manifest)?;
        Ok(StageOutcome {
            stage,
            skipped: false,
            artifacts,
            summary,
        })
    }

    fn create_stage_dir(&self, stage: Stage) -> Result<PathBuf> {
        let dir = self.stage_dir(stage);
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    /// Reloads the recordings a dataset-shaped stage wrote, using the
    /// metadata in its manifest.
    fn load_recordings(&self, manifest: &StageManifest) -> Result<Vec<EmgRecording>> {
        let entries: Vec<RecordingEntry> =
            serde_json::from_value(manifest.details["recordings"].clone()).map_err(|e| {
                PipelineError::corrupt(format!(
                    "manifest of the {} stage lacks recording metadata: {e}",
                    manifest.stage
                ))
            })?;
        entries
            .iter()
            .map(|e| {
                let schema = CsvSchema {
                    subject_id: e.subject_id,
                    sample_rate_hz: e.sample_rate_hz,
                    ..CsvSchema::default()
                };
                load_csv_recording(&self.root.join(&e.file), &schema)
            })
            .collect()
    }

    /// Writes recordings into a stage dir in the canonical layout and
    /// returns (root-relative outputs, manifest entries).
    fn write_recordings(
        &self,
        stage: Stage,
        recordings: &[EmgRecording],
    ) -> Result<(Vec<String>, Vec<RecordingEntry>)> {
        let dir = self.create_stage_dir(stage)?;
        let mut outputs = Vec::new();
        let mut entries = Vec::new();
        for rec in recordings {
            let file = format!("recording-s{}.csv", rec.subject_id());
            write_csv_recording(rec, &dir.join(&file))?;
            let rel = format!("{}/{file}", stage.dir_name());
            outputs.push(rel.clone());
            entries.push(RecordingEntry {
                file: rel,
                subject_id: rec.subject_id(),
                sample_rate_hz: rec.sample_rate_hz(),
            });
        }
        Ok((outputs, entries))
    }

    fn features_csv_rel(&self) -> String {
        format!("{}/features.csv", Stage::Features.dir_name())
    }

    fn load_features_table(&self) -> Result<FeatureTable> {
        FeatureTable::load(&self.root.join(self.features_csv_rel()))
    }

    /// Applies `evaluation.use_selection`, returning the select-stage
    /// manifest and the restricted table when a selection is in force.
    fn resolve_selection(
        &self,
        consumer: Stage,
        table: FeatureTable,
    ) -> Result<(Option<StageManifest>, FeatureTable)> {
        match self.cfg.evaluation.use_selection {
            UseSelection::Never => Ok((None, table)),
            mode => {
                if self.load_manifest(Stage::Select)?.is_none() {
                    return if mode == UseSelection::Require {
                        Err(PipelineError::dependency(format!(
                            "the {consumer} stage requires the feature selection \
                             (evaluation.use_selection = \"require\"); run `emgpipe select` first"
                        )))
                    } else {
                        Ok((None, table))
                    };
                }
                let manifest = self.upstream_manifest(consumer, Stage::Select)?;
                let report = SelectionReport::load_json(
                    &self.stage_dir(Stage::Select).join("selection_report.json"),
                )?;
                let names: Vec<String> =
                    report.final_set.iter().map(|c| c.name.clone()).collect();
                let restricted = table.select_columns(&names)?;
                Ok((Some(manifest), restricted))
            }
        }
    }

    fn model_file_rel(kind: ModelKind) -> String {
        format!("{}/model-{kind}.emgm", Stage::Train.dir_name())
    }

    // ---- dataset stages ---------------------------------------------------

    fn run_synth(&self) -> Result<StageOutcome> {
        let stage = Stage::Synth;
        if self.cfg.dataset.source != DatasetSource::Synthetic {
            return Err(PipelineError::config(format!(
                "dataset.source is \"{}\"; use `emgpipe ingest` for file sources",
                self.cfg.dataset.source.as_str()
            )));
        }
        let config_hash = self.config_hash(stage)?;
        let inputs = BTreeMap::new();
        if let Some(outcome) = self.maybe_skip(stage, &config_hash, &inputs)? {
            return Ok(outcome);
        }
        let spec = self.cfg.synthetic_spec();
        let recordings = generate_synthetic_recordings(&spec)?;
        let (mut outputs, entries) = self.write_recordings(stage, &recordings)?;
        // The spec in its documented key-value schema, next to the data.
        let spec_text = toml::to_string_pretty(&spec).map_err(|e| {
            PipelineError::format(format!("cannot serialize synthetic spec: {e}"))
        })?;
        fs::write(self.stage_dir(stage).join("synthetic-spec.toml"), spec_text)?;
        outputs.push(format!("{}/synthetic-spec.toml", stage.dir_name()));
        let summary = format!(
            "{} recording(s): {} gestures × {} repetitions × {} channels",
            recordings.len(),
            spec.gesture_labels.len(),
            spec.reps_per_gesture,
            spec.n_channels,
        );
        self.finish(
            stage,
            config_hash,
            inputs,
            outputs,
            json!({ "recordings": entries }),
            Some(summary),
        )
    }

    fn run_ingest(&self) -> Result<StageOutcome> {
        let stage = Stage::Ingest;
        let dataset = &self.cfg.dataset;
        if dataset.source == DatasetSource::Synthetic {
            return Err(PipelineError::config(
                "dataset.source is \"synthetic\"; use `emgpipe synth` to generate data",
            ));
        }
        let config_hash = self.config_hash(stage)?;
        // Inputs are the user's files, keyed by the configured path.
        let mut inputs = BTreeMap::new();
        for path in &dataset.paths {
            inputs.insert(path.display().to_string(), hash_file(path)?);
        }
        if let Some(outcome) = self.maybe_skip(stage, &config_hash, &inputs)? {
            return Ok(outcome);
        }
        let base_subject = if dataset.csv.subject_id == 0 {
            1
        } else {
            dataset.csv.subject_id
        };
        let recordings: Vec<EmgRecording> = dataset
            .paths
            .iter()
            .enumerate()
            .map(|(i, path)| match dataset.source {
                DatasetSource::Csv => {
                    let schema = CsvSchema {
                        subject_id: base_subject + i as i32,
                        ..dataset.csv.clone()
                    };
                    load_csv_recording(path, &schema)
                }
                DatasetSource::Mat => {
                    let names = MatVariableNames {
                        emg: dataset.mat.emg.clone(),
                        stimulus: dataset.mat.stimulus.clone(),
                        repetition: dataset.mat.repetition.clone(),
                    };
                    load_mat_recording(
                        path,
                        &names,
                        base_subject + i as i32,
                        dataset.mat.sample_rate_hz,
                    )
                }
                DatasetSource::Synthetic => unreachable!("checked above"),
            })
            .map(|r| r.map_err(|e| e.with_context("ingest")))
            .collect::<Result<_>>()?;
        let (outputs, entries) = self.write_recordings(stage, &recordings)?;
        let summary = format!(
            "{} file(s) ingested as subjects {}..={}",
            recordings.len(),
            base_subject,
            base_subject + recordings.len() as i32 - 1,
        );
        self.finish(
            stage,
            config_hash,
            inputs,
            outputs,
            json!({ "recordings": entries }),
            Some(summary),
        )
    }

    // ---- signal stages ----------------------------------------------------

    fn run_preprocess(&self) -> Result<StageOutcome> {
        let stage = Stage::Preprocess;
        let upstream = self.upstream_manifest(stage, self.dataset_stage())?;
        let config_hash = self.config_hash(stage)?;
        let inputs = self.input_map(&[&upstream])?;
        if let Some(outcome) = self.maybe_skip(stage, &config_hash, &inputs)? {
            return Ok(outcome);
        }
        let recordings = self.load_recordings(&upstream)?;
        let mut processed = Vec::with_capacity(recordings.len());
        let mut scale_rows = String::from("subject,channel,offset,scale\n");
        for rec in &recordings {
            let (out, scales) = preprocess_recording(rec, &self.cfg.preprocess)?;
            for s in &scales {
                scale_rows.push_str(&format!(
                    "{},{},{},{}\n",
                    rec.subject_id(),
                    s.channel + 1,
                    s.offset,
                    s.scale
                ));
            }
            processed.push(out);
        }
        let (mut outputs, entries) = self.write_recordings(stage, &processed)?;
        fs::write(self.stage_dir(stage).join("scales.csv"), scale_rows)?;
        outputs.push(format!("{}/scales.csv", stage.dir_name()));
        let summary = format!(
            "{} recording(s) conditioned ({:?} order, {} normalization)",
            processed.len(),
            self.cfg.preprocess.stage_order,
            match self.cfg.preprocess.normalization {
                crate::preprocess::Normalization::MaxAbs => "max-abs",
                crate::preprocess::Normalization::ZScore => "z-score",
                crate::preprocess::Normalization::None => "no",
            },
        );
        self.finish(
            stage,
            config_hash,
            inputs,
            outputs,
            json!({ "recordings": entries }),
            Some(summary),
        )
    }

    fn run_features(&self) -> Result<StageOutcome> {
        let stage = Stage::Features;
        let upstream = self.upstream_manifest(stage, Stage::Preprocess)?;
        let config_hash = self.config_hash(stage)?;
        let inputs = self.input_map(&[&upstream])?;
        if let Some(outcome) = self.maybe_skip(stage, &config_hash, &inputs)? {
            return Ok(outcome);
        }
        let recordings = self.load_recordings(&upstream)?;
        let spec = WindowSpec::new(self.cfg.features.window_ms)?;
        let mut table = extract_feature_table(
            &recordings,
            &self.cfg.features.registry.registry(),
            &spec,
            &self.cfg.features.extract_options(),
        )?;
        table.set_preprocess_hash(Some(upstream.config_hash.clone()));
        let dir = self.create_stage_dir(stage)?;
        let csv_path = dir.join("features.csv");
        table.save(&csv_path)?;
        let sidecar = manifest_path(&csv_path);
        let outputs = vec![
            self.features_csv_rel(),
            format!(
                "{}/{}",
                stage.dir_name(),
                sidecar.file_name().unwrap().to_string_lossy()
            ),
        ];
        let summary = format!(
            "{} windows × {} features at {} ms",
            table.n_rows(),
            table.n_features(),
            self.cfg.features.window_ms,
        );
        let details = json!({
            "rows": table.n_rows(),
            "columns": table.n_features(),
            "schema_hash": feature_schema_hash(table.feature_names()),
        });
        self.finish(stage, config_hash, inputs, outputs, details, Some(summary))
    }

    // ---- analysis stages --------------------------------------------------

    fn run_cluster(&self) -> Result<StageOutcome> {
        let stage = Stage::Cluster;
        let upstream = self.upstream_manifest(stage, Stage::Features)?;
        let config_hash = self.config_hash(stage)?;
        let inputs = self.input_map(&[&upstream])?;
        if let Some(outcome) = self.maybe_skip(stage, &config_hash, &inputs)? {
            return Ok(outcome);
        }
        let table = self.load_features_table()?;
        let outcome = cluster_gestures(&table, self.cfg.clustering.k)?;
        let dir = self.create_stage_dir(stage)?;
        write_json(&dir.join("linkage.json"), &outcome.tree)?;
        fs::write(dir.join("dendrogram.dot"), outcome.tree.to_dot())?;
        let mut assignment = String::from("gesture,cluster\n");
        for (gesture, cluster) in outcome.assignment.pairs() {
            assignment.push_str(&format!("{gesture},{cluster}\n"));
        }
        fs::write(dir.join("assignment.csv"), assignment)?;
        // One representative per cluster; the resting state rides along
        // as the final row.
        let mut reps = String::from("slot,gesture\n");
        for (i, gesture) in outcome.representatives.iter().enumerate() {
            if i < outcome.assignment.k() {
                reps.push_str(&format!("cluster{i},{gesture}\n"));
            } else {
                reps.push_str(&format!("rest,{gesture}\n"));
            }
        }
        fs::write(dir.join("representatives.csv"), reps)?;
        let outputs = ["linkage.json", "dendrogram.dot", "assignment.csv", "representatives.csv"]
            .iter()
            .map(|f| format!("{}/{f}", stage.dir_name()))
            .collect();
        let summary = format!(
            "k={} clusters; representatives {:?} (+ rest)",
            outcome.assignment.k(),
            &outcome.representatives[..outcome.assignment.k()],
        );
        let details = json!({
            "k": outcome.assignment.k(),
            "representatives": outcome.representatives,
            "shrinkage_lambda": outcome.shrinkage_lambda,
        });
        self.finish(stage, config_hash, inputs, outputs, details, Some(summary))
    }

    fn run_select(&self) -> Result<StageOutcome> {
        let stage = Stage::Select;
        let upstream = self.upstream_manifest(stage, Stage::Features)?;
        let config_hash = self.config_hash(stage)?;
        let inputs = self.input_map(&[&upstream])?;
        if let Some(outcome) = self.maybe_skip(stage, &config_hash, &inputs)? {
            return Ok(outcome);
        }
        let table = self.load_features_table()?;
        let labels: Vec<u8> = table.meta().iter().map(|m| m.gesture).collect();
        let report = hybrid_select(&table, &labels, &self.cfg.selection)?;
        let dir = self.create_stage_dir(stage)?;
        report.save_json(&dir.join("selection_report.json"))?;
        fs::write(dir.join("final_set.csv"), report.final_set_csv())?;
        let outputs = vec![
            format!("{}/selection_report.json", stage.dir_name()),
            format!("{}/final_set.csv", stage.dir_name()),
        ];
        let summary = format!(
            "kept {} of {} columns; dropped channels {:?}",
            report.final_set.len(),
            table.n_features(),
            report.dropped_channels,
        );
        let details = json!({
            "kept": report.final_set.len(),
            "total": table.n_features(),
            "dropped_channels": report.dropped_channels,
            "effective_mi_min": report.effective_mi_min,
        });
        self.finish(stage, config_hash, inputs, outputs, details, Some(summary))
    }

    // ---- modeling stages --------------------------------------------------

    fn run_train(&self) -> Result<StageOutcome> {
        let stage = Stage::Train;
        let upstream = self.upstream_manifest(stage, Stage::Features)?;
        let config_hash = self.config_hash(stage)?;
        let table = self.load_features_table()?;
        let (selection, table) = self.resolve_selection(stage, table)?;
        let mut upstreams = vec![&upstream];
        if let Some(m) = &selection {
            upstreams.push(m);
        }
        let inputs = self.input_map(&upstreams)?;
        if let Some(outcome) = self.maybe_skip(stage, &config_hash, &inputs)? {
            return Ok(outcome);
        }
        self.create_stage_dir(stage)?;
        let schema_hash = feature_schema_hash(table.feature_names());
        let labels: Vec<u8> = table.meta().iter().map(|m| m.gesture).collect();
        let train_cfg = self.cfg.train_config();
        let mut outputs = Vec::new();
        for &kind in &self.cfg.evaluation.models {
            let artifact =
                train_model(kind, table.rows(), &labels, &train_cfg, &schema_hash, None)?;
            let rel = Self::model_file_rel(kind);
            save_model(&artifact, &self.root.join(&rel))?;
            outputs.push(rel);
        }
        let kinds: Vec<String> = self
            .cfg
            .evaluation
            .models
            .iter()
            .map(|k| k.to_string())
            .collect();
        let summary = format!(
            "trained {} on {} rows × {} features{}",
            kinds.join(", "),
            table.n_rows(),
            table.n_features(),
            if selection.is_some() {
                " (selected set)"
            } else {
                ""
            },
        );
        let details = json!({
            "schema_hash": schema_hash,
            "selection_used": selection.is_some(),
            "kinds": kinds,
        });
        self.finish(stage, config_hash, inputs, outputs, details, Some(summary))
    }

    fn run_evaluate(&self) -> Result<StageOutcome> {
        let stage = Stage::Evaluate;
        let features = self.upstream_manifest(stage, Stage::Features)?;
        let train = self.upstream_manifest(stage, Stage::Train)?;
        let config_hash = self.config_hash(stage)?;
        let table = self.load_features_table()?;
        let (selection, table) = self.resolve_selection(stage, table)?;
        let mut upstreams = vec![&features, &train];
        if let Some(m) = &selection {
            upstreams.push(m);
        }
        let inputs = self.input_map(&upstreams)?;
        if let Some(outcome) = self.maybe_skip(stage, &config_hash, &inputs)? {
            return Ok(outcome);
        }
        let dir = self.create_stage_dir(stage)?;
        let schema_hash = feature_schema_hash(table.feature_names());
        let eval = &self.cfg.evaluation;
        let folds = make_folds(&table, eval.folds, eval.split_mode, self.cfg.seed)?;
        let train_cfg = self.cfg.train_config();
        let mut outputs = Vec::new();
        let mut summaries = Vec::new();
        let mut metrics = serde_json::Map::new();
        for &kind in &eval.models {
            // The trained artifact is this stage's contract with train:
            // its schema must match the table being evaluated.
            let model_rel = Self::model_file_rel(kind);
            let model_path = self.root.join(&model_rel);
            if !model_path.exists() {
                return Err(PipelineError::dependency(format!(
                    "model artifact {model_rel} not found; run `emgpipe train` first"
                )));
            }
            let artifact = load_model(&model_path)?;
            if artifact.schema_hash != schema_hash {
                return Err(PipelineError::schema(format!(
                    "model {kind} was trained on feature schema {} but the current table \
                     hashes to {schema_hash}; run `emgpipe train` again",
                    artifact.schema_hash,
                )));
            }
            let report = cross_validate(kind, &train_cfg, &table, &folds)?;
            let report_rel = format!("{}/report-{kind}.json", stage.dir_name());
            report.save_json(&self.root.join(&report_rel))?;
            let confusion_rel = format!("{}/confusion-{kind}.csv", stage.dir_name());
            fs::write(dir.join(format!("confusion-{kind}.csv")), report.confusion.to_csv())?;
            outputs.push(report_rel);
            outputs.push(confusion_rel);
            summaries.push(format!(
                "{kind} {:.4} (κ {:.4})",
                report.aggregate.accuracy.mean, report.pooled.kappa
            ));
            metrics.insert(
                kind.to_string(),
                json!({
                    "accuracy": report.aggregate.accuracy.mean,
                    "kappa": report.pooled.kappa,
                    "f1_macro": report.pooled.f1_macro,
                }),
            );
        }
        let summary = format!("cross-validated accuracy: {}", summaries.join(", "));
        let details = json!({
            "folds": eval.folds,
            "split_mode": eval.split_mode,
            "selection_used": selection.is_some(),
            "metrics": metrics,
        });
        self.finish(stage, config_hash, inputs, outputs, details, Some(summary))
    }

    fn run_compare(&self) -> Result<StageOutcome> {
        let stage = Stage::Compare;
        let features = self.upstream_manifest(stage, Stage::Features)?;
        let config_hash = self.config_hash(stage)?;
        let table = self.load_features_table()?;
        let (selection, table) = self.resolve_selection(stage, table)?;
        let mut upstreams = vec![&features];
        if let Some(m) = &selection {
            upstreams.push(m);
        }
        let inputs = self.input_map(&upstreams)?;
        if let Some(outcome) = self.maybe_skip(stage, &config_hash, &inputs)? {
            return Ok(outcome);
        }
        let dir = self.create_stage_dir(stage)?;
        let eval = &self.cfg.evaluation;
        let folds = make_folds(&table, eval.folds, eval.split_mode, self.cfg.seed)?;
        let comparison =
            compare_models(&eval.models, &self.cfg.train_config(), &table, &folds)?;
        fs::write(dir.join("comparison.csv"), comparison.to_csv())?;
        comparison.save_json(&dir.join("comparison.json"))?;
        let outputs = vec![
            format!("{}/comparison.csv", stage.dir_name()),
            format!("{}/comparison.json", stage.dir_name()),
        ];
        let best = &comparison.rows[0];
        let summary = format!(
            "best model: {} (accuracy {:.4})",
            best.model, best.accuracy
        );
        let ranking: Vec<String> = comparison.rows.iter().map(|r| r.model.to_string()).collect();
        self.finish(
            stage,
            config_hash,
            inputs,
            outputs,
            json!({ "ranking": ranking }),
            Some(summary),
        )
    }

    fn run_windows(&self) -> Result<StageOutcome> {
        let stage = Stage::Windows;
        let upstream = self.upstream_manifest(stage, self.dataset_stage())?;
        let config_hash = self.config_hash(stage)?;
        let inputs = self.input_map(&[&upstream])?;
        if let Some(outcome) = self.maybe_skip(stage, &config_hash, &inputs)? {
            return Ok(outcome);
        }
        let recordings = self.load_recordings(&upstream)?;
        let eval = &self.cfg.evaluation;
        let comparison = window_comparison(
            &recordings,
            &eval.window_sizes_ms,
            eval.models[0],
            &self.cfg.train_config(),
            &self.cfg.preprocess,
            &self.cfg.features.registry.registry(),
            &self.cfg.features.extract_options(),
            eval.folds,
            eval.split_mode,
        )?;
        let dir = self.create_stage_dir(stage)?;
        fs::write(dir.join("windows.csv"), comparison.to_csv())?;
        write_json(&dir.join("windows.json"), &comparison)?;
        let outputs = vec![
            format!("{}/windows.csv", stage.dir_name()),
            format!("{}/windows.json", stage.dir_name()),
        ];
        let summary = comparison
            .rows
            .iter()
            .map(|r| format!("{} ms → {:.4}", r.window_ms, r.accuracy))
            .collect::<Vec<_>>()
            .join(", ");
        self.finish(
            stage,
            config_hash,
            inputs,
            outputs,
            json!({"model": eval.models[0]}),
            Some(format!("accuracy by window: {summary}")),
        )
    }

    // ---- report -----------------------------------------------------------

    fn run_report(&self) -> Result<StageOutcome> {
        let stage = Stage::Report;
        // Everything present in the run directory is input.
        let mut stage_manifests: Vec<StageManifest> = Vec::new();
        for other in Stage::ALL {
            if other == Stage::Report || other == Stage::Ingest {
                // `dataset/` is read once below via Synth (shared dir).
                continue;
            }
            if other == Stage::Synth {
                if let Some(m) = self.load_manifest(Stage::Synth)? {
                    stage_manifests.push(m);
                }
                continue;
            }
            if let Some(m) = self.load_manifest(other)? {
                stage_manifests.push(m);
            }
        }
        if stage_manifests.is_empty() {
            return Err(PipelineError::dependency(format!(
                "nothing to report in {}; run `emgpipe synth` (or another stage) first",
                self.root.display()
            )));
        }
        let config_hash = self.config_hash(stage)?;
        let refs: Vec<&StageManifest> = stage_manifests.iter().collect();
        let inputs = self.input_map(&refs)?;
        if let Some(outcome) = self.maybe_skip(stage, &config_hash, &inputs)? {
            return Ok(outcome);
        }
        let dir = self.create_stage_dir(stage)?;

        let mut stages_json = serde_json::Map::new();
        for manifest in &stage_manifests {
            let mut artifact_map = BTreeMap::new();
            for rel in &manifest.outputs {
                artifact_map.insert(rel.clone(), hash_file(&self.root.join(rel))?);
            }
            stages_json.insert(
                manifest.stage.clone(),
                json!({
                    "artifacts": artifact_map,
                    "details": manifest.details,
                }),
            );
        }
        let report_json = json!({
            "config_hash": self.cfg.content_hash()?,
            "seed": self.cfg.seed,
            "stages": stages_json,
        });
        write_json(&dir.join("report.json"), &report_json)?;

        let markdown = self.render_report_md(&stage_manifests)?;
        fs::write(dir.join("report.md"), markdown)?;

        let outputs = vec![
            format!("{}/report.json", stage.dir_name()),
            format!("{}/report.md", stage.dir_name()),
        ];
        let summary = format!("bundled {} stage(s)", stage_manifests.len());
        self.finish(
            stage,
            config_hash,
            inputs,
            outputs,
            json!({"stages": stage_manifests.iter().map(|m| m.stage.clone()).collect::<Vec<_>>()}),
            Some(summary),
        )
    }

    fn render_report_md(&self, manifests: &[StageManifest]) -> Result<String> {
        use std::fmt::Write as _;
        let cfg = &self.cfg;
        let mut md = String::new();
        let _ = writeln!(md, "# Run report\n");
        let _ = writeln!(
            md,
            "- seed: {}\n- config hash: `{}`\n- window: {} ms ({} registry, rest {})\n- evaluation: {} folds, {:?} split\n",
            cfg.seed,
            cfg.content_hash()?,
            cfg.features.window_ms,
            match cfg.features.registry {
                crate::config::RegistryMode::Full => "full",
                crate::config::RegistryMode::ScalarOnly => "scalar-only",
            },
            if cfg.features.include_rest { "included" } else { "excluded" },
            cfg.evaluation.folds,
            cfg.evaluation.split_mode,
        );

        // Headline metrics, when evaluation ran.
        let eval_dir = self.stage_dir(Stage::Evaluate);
        let mut rows = Vec::new();
        for &kind in &cfg.evaluation.models {
            let path = eval_dir.join(format!("report-{kind}.json"));
            if path.exists() {
                let report = EvaluationReport::load_json(&path)?;
                rows.push((kind, report));
            }
        }
        if !rows.is_empty() {
            let _ = writeln!(md, "## Cross-validated results\n");
            let _ = writeln!(md, "| Model | Accuracy | Recall | F1 | Prec. | Kappa |");
            let _ = writeln!(md, "|---|---|---|---|---|---|");
            for (kind, report) in &rows {
                let p = &report.pooled;
                let _ = writeln!(
                    md,
                    "| {kind} | {:.4} ± {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
                    report.aggregate.accuracy.mean,
                    report.aggregate.accuracy.std,
                    p.recall_macro,
                    p.f1_macro,
                    p.precision_macro,
                    p.kappa,
                );
            }
            let _ = writeln!(md);
        }

        // Window sweep, when it ran.
        let windows_csv = self.stage_dir(Stage::Windows).join("windows.csv");
        if windows_csv.exists() {
            let _ = writeln!(md, "## Window comparison\n");
            let _ = writeln!(md, "```csv");
            md.push_str(fs::read_to_string(&windows_csv)?.trim_end());
            let _ = writeln!(md, "\n```\n");
        }

        let _ = writeln!(md, "## Artifacts\n");
        for manifest in manifests {
            let _ = writeln!(md, "- **{}**", manifest.stage);
            for rel in &manifest.outputs {
                let _ = writeln!(md, "  - `{rel}`");
            }
        }
        Ok(md)
    }
}
