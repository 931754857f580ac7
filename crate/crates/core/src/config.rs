//! Run configuration: one human-editable TOML file drives every stage.
//!
//! [`PipelineConfig`] gathers the knobs of all pipeline stages under a
//! single master `seed`. Any section or field may be omitted — defaults
//! fill the gaps — and unknown keys are rejected so typos surface as
//! config errors rather than silently-ignored settings. The expanded
//! ("effective") form is what the pipeline writes next to its outputs,
//! so a run directory always documents exactly what produced it.
//!
//! ## Seed discipline
//!
//! The file carries exactly one seed. Synthetic data generation uses it
//! directly (so `seed = 42` reproduces the stock six-gesture corpus),
//! and model training receives it as [`TrainConfig::seed`]; every
//! consumer below that derives labelled substreams, so no two stages
//! ever share a raw RNG stream.
//!
//! ## Stage order note
//!
//! [`PipelineConfig::default`] sets the preprocessing stage order to
//! `envelope_then_filter`, overriding the protocol-literal
//! [`PreprocessConfig::default`] (`filter_then_envelope`). Low-passing
//! raw EMG at 0.6 Hz before rectification removes nearly all
//! myoelectric content and drives every classifier to chance; the
//! envelope-first order is what makes end-to-end runs meaningful.
//! Either order remains selectable in the file or via
//! `emgpipe preprocess --stage-order`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::csv_io::CsvSchema;
use crate::dataset::synth::SyntheticSpec;
use crate::error::{PipelineError, Result};
use crate::features::{ExtractOptions, FeatureRegistry, WindowSpec};
use crate::featsel::{CartParams, SelectionThresholds};
use crate::hash::fnv1a64;
use crate::models::{EtParams, KnnParams, MlpParams, ModelKind, TrainConfig};
use crate::preprocess::{PreprocessConfig, StageOrder};
use crate::evaluation::SplitMode;

/// Default output directory, relative to the working directory.
pub const DEFAULT_OUTPUT_DIR: &str = "emgpipe-out";

/// Environment variable overriding the output root (itself overridden
/// by an explicit `--out` flag).
pub const OUTPUT_ENV_VAR: &str = "EMGPIPE_OUT";

/// Where recordings come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generate recordings from [`DatasetConfig::synthetic`] (or the
    /// stock six-gesture spec when that is omitted).
    Synthetic,
    /// Load the CSV files listed in [`DatasetConfig::paths`].
    Csv,
    /// Load the MATLAB v5 files listed in [`DatasetConfig::paths`].
    Mat,
}

impl DatasetSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetSource::Synthetic => "synthetic",
            DatasetSource::Csv => "csv",
            DatasetSource::Mat => "mat",
        }
    }
}

/// Variable names and metadata for MAT-file ingestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatConfig {
    /// Name of the samples×channels EMG matrix.
    pub emg: String,
    /// Stimulus vector name; `None` tries `restimulus` then `stimulus`.
    pub stimulus: Option<String>,
    /// Repetition vector name; `None` tries `rerepetition` then
    /// `repetition`.
    pub repetition: Option<String>,
    pub sample_rate_hz: f64,
}

impl Default for MatConfig {
    fn default() -> Self {
        MatConfig {
            emg: "emg".into(),
            stimulus: None,
            repetition: None,
            sample_rate_hz: 2000.0,
        }
    }
}

/// Dataset section. For file sources, each input file becomes one
/// recording; subject ids assign sequentially from the configured base
/// (`csv.subject_id`, or 1 when that is left at the 0 default), in
/// path order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    pub paths: Vec<PathBuf>,
    pub csv: CsvSchema,
    pub mat: MatConfig,
    /// Full synthetic spec; omit to use the stock six-gesture spec
    /// seeded with the master seed.
    pub synthetic: Option<SyntheticSpec>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            source: DatasetSource::Synthetic,
            paths: Vec::new(),
            csv: CsvSchema::default(),
            mat: MatConfig::default(),
            synthetic: None,
        }
    }
}

/// Which feature registry to extract with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistryMode {
    /// All 13 scalar families plus multi-channel extras (`full-v1`).
    Full,
    /// The 13 scalar families only (`scalar-v1`).
    ScalarOnly,
}

impl RegistryMode {
    pub fn registry(&self) -> FeatureRegistry {
        match self {
            RegistryMode::Full => FeatureRegistry::full(),
            RegistryMode::ScalarOnly => FeatureRegistry::scalar_only(),
        }
    }
}

/// Feature-extraction section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub window_ms: f64,
    pub registry: RegistryMode,
    pub include_rest: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window_ms: 200.0,
            registry: RegistryMode::Full,
            include_rest: true,
        }
    }
}

impl FeatureConfig {
    pub fn extract_options(&self) -> ExtractOptions {
        ExtractOptions {
            include_rest: self.include_rest,
        }
    }
}

/// Clustering section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    /// Number of clusters to cut the dendrogram into.
    pub k: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig { k: 6 }
    }
}

/// Per-model hyperparameters (the seed lives at the top level).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub et: EtParams,
    pub mlp: MlpParams,
    pub knn: KnnParams,
    pub cart: CartParams,
}

/// Whether training and evaluation restrict the feature table to the
/// `select` stage's final column set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UseSelection {
    /// Use the selection when its artifacts exist, all columns
    /// otherwise.
    Auto,
    /// Always use all columns.
    Never,
    /// Fail with a dependency error when the selection is missing.
    Require,
}

/// Evaluation section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Cross-validation fold count. The default is 6, the largest
    /// count the grouped split mode supports on six-repetition data;
    /// window-level splitting accepts the protocol's 10.
    pub folds: usize,
    pub split_mode: SplitMode,
    /// Models trained, evaluated, and compared, in report order.
    pub models: Vec<ModelKind>,
    /// Window lengths swept by the `windows` stage.
    pub window_sizes_ms: Vec<f64>,
    pub use_selection: UseSelection,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            folds: 6,
            split_mode: SplitMode::GroupByRepetition,
            models: vec![ModelKind::ExtraTrees, ModelKind::Mlp],
            window_sizes_ms: vec![100.0, 200.0, 300.0],
            use_selection: UseSelection::Auto,
        }
    }
}

/// The complete run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every random decision in the run derives from it.
    pub seed: u64,
    /// Output root; `--out` and [`OUTPUT_ENV_VAR`] take precedence.
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub preprocess: PreprocessConfig,
    pub features: FeatureConfig,
    pub clustering: ClusteringConfig,
    pub selection: SelectionThresholds,
    pub models: ModelSection,
    pub evaluation: EvaluationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            output_dir: PathBuf::from(DEFAULT_OUTPUT_DIR),
            dataset: DatasetConfig::default(),
            // See the module docs: the pipeline default deviates from
            // the protocol-literal PreprocessConfig::default() here.
            preprocess: PreprocessConfig {
                stage_order: StageOrder::EnvelopeThenFilter,
                ..PreprocessConfig::default()
            },
            features: FeatureConfig::default(),
            clustering: ClusteringConfig::default(),
            selection: SelectionThresholds::default(),
            models: ModelSection::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

fn config_err(path: &str, message: impl std::fmt::Display) -> PipelineError {
    PipelineError::config(format!("{path}: {message}"))
}

impl PipelineConfig {
    /// Parses and validates a TOML config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg = Self::from_toml(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses TOML text without touching the filesystem.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text)
            .map_err(|e| PipelineError::config(format!("config parse error: {}", e.message())))
    }

    /// Serializes the expanded configuration; what the pipeline writes
    /// next to its outputs.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| PipelineError::config(format!("cannot serialize config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// FNV-1a hash of the serialized effective config, hex-printed.
    pub fn content_hash(&self) -> Result<String> {
        Ok(format!("{:016x}", fnv1a64(self.to_toml()?.as_bytes())))
    }

    /// The synthetic spec this run would generate from: the configured
    /// one, or the stock six-gesture spec under the master seed.
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        self.dataset
            .synthetic
            .clone()
            .unwrap_or_else(|| SyntheticSpec::default_six_gesture(self.seed))
    }

    /// Training configuration with the master seed installed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            et: self.models.et.clone(),
            mlp: self.models.mlp.clone(),
            knn: self.models.knn.clone(),
            cart: self.models.cart.clone(),
        }
    }

    /// Sample rate the configured source will deliver.
    pub fn sample_rate_hz(&self) -> f64 {
        match self.dataset.source {
            DatasetSource::Synthetic => self.synthetic_spec().sample_rate_hz,
            DatasetSource::Csv => self.dataset.csv.sample_rate_hz,
            DatasetSource::Mat => self.dataset.mat.sample_rate_hz,
        }
    }

    /// Checks every section, reporting the offending field path.
    pub fn validate(&self) -> Result<()> {
        if self.output_dir.as_os_str().is_empty() {
            return Err(config_err("output_dir", "must not be empty"));
        }
        match self.dataset.source {
            DatasetSource::Synthetic => {
                if let Some(spec) = &self.dataset.synthetic {
                    spec.validate()
                        .map_err(|e| config_err("dataset.synthetic", e))?;
                }
            }
            DatasetSource::Csv | DatasetSource::Mat => {
                if self.dataset.paths.is_empty() {
                    return Err(config_err(
                        "dataset.paths",
                        format!(
                            "the {} source needs at least one input file",
                            self.dataset.source.as_str()
                        ),
                    ));
                }
            }
        }
        let rate = self.sample_rate_hz();
        if !(rate > 0.0) {
            return Err(config_err("dataset", "sample rate must be positive"));
        }
        self.preprocess
            .validate(rate)
            .map_err(|e| config_err("preprocess", e))?;
        WindowSpec::new(self.features.window_ms)
            .map_err(|e| config_err("features.window_ms", e))?;
        if self.clustering.k == 0 {
            return Err(config_err("clustering.k", "must be at least 1"));
        }
        self.selection
            .validate()
            .map_err(|e| config_err("selection", e))?;
        self.train_config()
            .validate()
            .map_err(|e| config_err("models", e))?;
        if self.evaluation.folds < 2 {
            return Err(config_err("evaluation.folds", "needs at least 2 folds"));
        }
        if self.evaluation.models.is_empty() {
            return Err(config_err(
                "evaluation.models",
                "list at least one model kind",
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for kind in &self.evaluation.models {
            if !seen.insert(*kind) {
                return Err(config_err(
                    "evaluation.models",
                    format!("{kind} is listed twice"),
                ));
            }
        }
        if self.evaluation.window_sizes_ms.is_empty() {
            return Err(config_err(
                "evaluation.window_sizes_ms",
                "list at least one window size",
            ));
        }
        for &ms in &self.evaluation.window_sizes_ms {
            WindowSpec::new(ms)
                .map_err(|e| config_err("evaluation.window_sizes_ms", e))?;
        }
        Ok(())
    }
}

/// Output-root precedence: explicit flag, then [`OUTPUT_ENV_VAR`],
/// then the config file's `output_dir`.
pub fn resolve_output_dir(
    flag: Option<&Path>,
    env_value: Option<&str>,
    cfg: &PipelineConfig,
) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(v) = env_value {
        if !v.is_empty() {
            return PathBuf::from(v);
        }
    }
    cfg.output_dir.clone()
}
