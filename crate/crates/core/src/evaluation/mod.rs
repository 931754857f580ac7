//! Cross-validated evaluation: stratified fold construction, the
//! metric suite (accuracy, macro precision/recall/F1, Cohen's kappa),
//! confusion matrices, learning curves, the window-size comparison
//! experiment, and a model-comparison harness.
//!
//! ## Split design
//!
//! The cross-validation unit is the window. Two split modes exist:
//!
//! * [`SplitMode::Windows`] — plain stratified k-fold over window rows.
//!   Windows of the same repetition can land in different folds, which
//!   inflates scores through temporal correlation between neighbours.
//! * [`SplitMode::GroupByRepetition`] (the default) — all windows of
//!   one recorded repetition stay in one fold, stratified per gesture
//!   over repetition groups. This is the conservative choice; every
//!   report records which mode produced it.
//!
//! The default fold count is [`DEFAULT_FOLDS`] = 10; grouped splits on
//! six-repetition protocols can use at most 6.
//!
//! Precision/recall/F1 are macro-averaged over the class list, with
//! the convention that a class never predicted gets precision 0 and a
//! class never present gets recall 0 — both cases are flagged on the
//! metric set rather than silently folded in. Scores are reported both
//! pooled over all test windows and averaged per subject.
//!
//! Folds evaluate independently (in parallel under the `parallel`
//! feature) and aggregate by a deterministic reduce, so reports are
//! identical across thread counts.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::EmgRecording;
use crate::error::{PipelineError, Result};
use crate::features::{
    extract_feature_table, ExtractOptions, FeatureRegistry, FeatureTable, WindowSpec,
};
use crate::featsel::SummaryStats;
use crate::models::{
    feature_schema_hash, predict, train_model, ModelArtifact, ModelKind, TrainConfig,
};
use crate::parallel;
use crate::preprocess::{preprocess_recording, PreprocessConfig};
use crate::rng::{derive_seed, derive_seed_indexed, rng_from_seed};

/// Default fold count for cross-validation.
pub const DEFAULT_FOLDS: usize = 10;

/// Fold count behind [`learning_curve`]'s fixed validation split
/// (fold 0 is the validation set, the rest form the training pool).
pub const LEARNING_CURVE_FOLDS: usize = 5;

/// What the cross-validation splitter treats as an indivisible unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum SplitMode {
    /// Every window assigned independently (stratified by gesture).
    Windows,
    /// All windows of one (subject, gesture, repetition) group share a
    /// fold; stratification is by gesture over groups.
    #[default]
    GroupByRepetition,
}


/// A complete fold assignment: `folds[i]` is the fold of row `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub mode: SplitMode,
    pub seed: u64,
    pub folds: Vec<usize>,
}

/// Stratified k-fold over labels: within every class the members are
/// shuffled by a seeded generator and dealt round-robin over folds, so
/// each fold's class proportions sit within one sample of the global
/// proportions.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<usize>> {
    if labels.is_empty() {
        return Err(PipelineError::argument("cannot stratify an empty label set"));
    }
    if k < 2 {
        return Err(PipelineError::argument(format!(
            "stratification needs at least 2 folds, got {k}"
        )));
    }
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    for (&label, members) in &by_class {
        if members.len() < k {
            return Err(PipelineError::argument(format!(
                "cannot stratify into {k} folds: class {label} has only {} sample(s)",
                members.len()
            )));
        }
    }
    let mut rng = rng_from_seed(derive_seed(seed, "stratified-kfold"));
    let mut folds = vec![0usize; labels.len()];
    for members in by_class.values() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for (pos, &row) in shuffled.iter().enumerate() {
            folds[row] = pos % k;
        }
    }
    Ok(folds)
}

/// Grouped stratified k-fold: the units dealt to folds are the
/// distinct (subject, gesture, repetition) groups, stratified by
/// gesture, and every row inherits its group's fold.
fn grouped_stratified_kfold(table: &FeatureTable, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(PipelineError::argument(format!(
            "stratification needs at least 2 folds, got {k}"
        )));
    }
    // group key -> rows, grouped under the gesture for stratification.
    let mut by_class: BTreeMap<u8, BTreeMap<(i32, u8), Vec<usize>>> = BTreeMap::new();
    for (i, m) in table.meta().iter().enumerate() {
        by_class
            .entry(m.gesture)
            .or_default()
            .entry((m.subject, m.repetition))
            .or_default()
            .push(i);
    }
    for (&label, groups) in &by_class {
        if groups.len() < k {
            return Err(PipelineError::argument(format!(
                "cannot stratify into {k} folds: class {label} has only {} repetition group(s)",
                groups.len()
            )));
        }
    }
    let mut rng = rng_from_seed(derive_seed(seed, "grouped-stratified-kfold"));
    let mut folds = vec![0usize; table.n_rows()];
    for groups in by_class.values() {
        let mut keys: Vec<&(i32, u8)> = groups.keys().collect();
        keys.shuffle(&mut rng);
        for (pos, key) in keys.iter().enumerate() {
            for &row in &groups[key] {
                folds[row] = pos % k;
            }
        }
    }
    Ok(folds)
}

/// Builds the fold assignment for a feature table under the requested
/// split mode.
pub fn make_folds(
    table: &FeatureTable,
    k: usize,
    mode: SplitMode,
    seed: u64,
) -> Result<FoldAssignment> {
    let folds = match mode {
        SplitMode::Windows => {
            let labels: Vec<u8> = table.meta().iter().map(|m| m.gesture).collect();
            stratified_kfold(&labels, k, seed)?
        }
        SplitMode::GroupByRepetition => grouped_stratified_kfold(table, k, seed)?,
    };
    Ok(FoldAssignment {
        k,
        mode,
        seed,
        folds,
    })
}

/// Confusion matrix over a fixed class list; `counts[i][j]` is the
/// number of samples of true class `classes[i]` predicted as
/// `classes[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<u8>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: Vec<u8>) -> Result<Self> {
        if classes.is_empty() {
            return Err(PipelineError::argument("confusion matrix needs classes"));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = classes.iter().find(|c| !seen.insert(**c)) {
            return Err(PipelineError::argument(format!(
                "duplicate class {dup} in class list"
            )));
        }
        let c = classes.len();
        Ok(ConfusionMatrix {
            classes,
            counts: vec![vec![0; c]; c],
        })
    }

    pub fn from_labels(y_true: &[u8], y_pred: &[u8], classes: &[u8]) -> Result<Self> {
        if y_true.is_empty() {
            return Err(PipelineError::argument(
                "cannot compute metrics on empty predictions",
            ));
        }
        if y_true.len() != y_pred.len() {
            return Err(PipelineError::argument(format!(
                "label lengths differ: {} true vs {} predicted",
                y_true.len(),
                y_pred.len()
            )));
        }
        let mut m = ConfusionMatrix::zeros(classes.to_vec())?;
        let index: BTreeMap<u8, usize> = classes
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i))
            .collect();
        for (&t, &p) in y_true.iter().zip(y_pred) {
            let ti = *index.get(&t).ok_or_else(|| {
                PipelineError::argument(format!("true label {t} is not in the class list"))
            })?;
            let pi = *index.get(&p).ok_or_else(|| {
                PipelineError::argument(format!("predicted label {p} is not in the class list"))
            })?;
            m.counts[ti][pi] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Per-class true counts (row sums).
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Per-class predicted counts (column sums).
    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.classes.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// Adds another matrix over the same class list (summing folds).
    pub fn accumulate(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(PipelineError::argument(
                "cannot sum confusion matrices over different class lists",
            ));
        }
        for (mine, theirs) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
        Ok(())
    }

    /// CSV with one row per true class and one column per predicted
    /// class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true_class");
        for c in &self.classes {
            out.push_str(&format!(",pred_{c}"));
        }
        out.push('\n');
        for (i, c) in self.classes.iter().enumerate() {
            out.push_str(&c.to_string());
            for v in &self.counts[i] {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// One metric set. `never_present` / `never_predicted` flag the
/// classes whose recall / precision fell back to the zero convention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub kappa: f64,
    pub never_present: Vec<u8>,
    pub never_predicted: Vec<u8>,
}

/// Derives the metric suite from a confusion matrix.
///
/// Kappa uses the integer-marginal form
/// `(n·trace − Σ row·col) / (n² − Σ row·col)`, algebraically equal to
/// `(p_o − p_e)/(1 − p_e)` but exact for integer counts (the hand
/// example [[40,10],[10,40]] yields exactly 0.6).
pub fn metrics_from_confusion(m: &ConfusionMatrix) -> Result<Metrics> {
    let n = m.total();
    if n == 0 {
        return Err(PipelineError::argument(
            "cannot compute metrics on an empty confusion matrix",
        ));
    }
    let rows = m.row_sums();
    let cols = m.col_sums();
    let nf = n as f64;

    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    let mut never_present = Vec::new();
    let mut never_predicted = Vec::new();
    for (i, &class) in m.classes.iter().enumerate() {
        let tp = m.counts[i][i] as f64;
        let precision = if cols[i] > 0 {
            tp / cols[i] as f64
        } else {
            never_predicted.push(class);
            0.0
        };
        let recall = if rows[i] > 0 {
            tp / rows[i] as f64
        } else {
            never_present.push(class);
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        precision_sum += precision;
        recall_sum += recall;
        f1_sum += f1;
    }
    let c = m.classes.len() as f64;

    let chance: u128 = rows
        .iter()
        .zip(&cols)
        .map(|(&r, &col)| r as u128 * col as u128)
        .sum();
    let numer = (n as u128 * m.trace() as u128) as f64 - chance as f64;
    let denom = (n as u128 * n as u128) as f64 - chance as f64;
    // denom = 0 only when one class carries every true and predicted
    // label, which forces perfect agreement.
    let kappa = if denom > 0.0 {
        (numer / denom).clamp(-1.0, 1.0)
    } else {
        1.0
    };

    Ok(Metrics {
        accuracy: m.trace() as f64 / nf,
        precision_macro: precision_sum / c,
        recall_macro: recall_sum / c,
        f1_macro: f1_sum / c,
        kappa,
        never_present,
        never_predicted,
    })
}

/// Builds the confusion matrix for the label pair and derives the
/// metric suite from it.
pub fn compute_metrics(
    y_true: &[u8],
    y_pred: &[u8],
    classes: &[u8],
) -> Result<(Metrics, ConfusionMatrix)> {
    let confusion = ConfusionMatrix::from_labels(y_true, y_pred, classes)?;
    let metrics = metrics_from_confusion(&confusion)?;
    Ok((metrics, confusion))
}

/// Mean ± population standard deviation over folds or repeats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

/// Fold-wise mean ± std of every metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub accuracy: MeanStd,
    pub precision_macro: MeanStd,
    pub recall_macro: MeanStd,
    pub f1_macro: MeanStd,
    pub kappa: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_test: usize,
    pub metrics: Metrics,
}

/// Accuracy of one subject's pooled test windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub subject: i32,
    pub n_windows: usize,
    pub accuracy: f64,
}

/// Everything one cross-validation run produced: per-fold and
/// aggregate metrics, the summed confusion matrix, pooled and
/// per-subject scores, the exact fold assignment, and the training
/// config snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: ModelKind,
    pub folds: FoldAssignment,
    pub config: TrainConfig,
    pub per_fold: Vec<FoldMetrics>,
    pub aggregate: AggregateMetrics,
    /// Metrics of the fold-summed confusion matrix (subject-pooled).
    pub pooled: Metrics,
    pub confusion: ConfusionMatrix,
    pub per_subject: Vec<SubjectScore>,
    pub subject_mean_accuracy: f64,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| PipelineError::format(format!("cannot encode evaluation report: {e}")))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::format(format!("cannot decode evaluation report: {e}")))
    }
}

fn table_labels(table: &FeatureTable) -> Vec<u8> {
    table.meta().iter().map(|m| m.gesture).collect()
}

fn distinct_classes(labels: &[u8]) -> Vec<u8> {
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
}

fn check_folds(table: &FeatureTable, folds: &FoldAssignment) -> Result<()> {
    if folds.folds.len() != table.n_rows() {
        return Err(PipelineError::argument(format!(
            "fold assignment covers {} rows but the table has {}",
            folds.folds.len(),
            table.n_rows()
        )));
    }
    if folds.k < 2 {
        return Err(PipelineError::argument("fold assignment needs k >= 2"));
    }
    if let Some(&bad) = folds.folds.iter().find(|&&f| f >= folds.k) {
        return Err(PipelineError::argument(format!(
            "fold index {bad} out of range for k = {}",
            folds.k
        )));
    }
    Ok(())
}

/// Trains the model for one fold on that fold's training partition
/// only; any fitted preprocessing (the MLP's standardizer) therefore
/// sees fold-local statistics. The training seed is derived from the
/// config seed and the fold index.
pub fn fit_fold(
    kind: ModelKind,
    cfg: &TrainConfig,
    table: &FeatureTable,
    folds: &FoldAssignment,
    fold: usize,
) -> Result<ModelArtifact> {
    check_folds(table, folds)?;
    if fold >= folds.k {
        return Err(PipelineError::argument(format!(
            "fold {fold} out of range for k = {}",
            folds.k
        )));
    }
    let labels = table_labels(table);
    let mut train_x = Vec::new();
    let mut train_y = Vec::new();
    for (i, &f) in folds.folds.iter().enumerate() {
        if f != fold {
            train_x.push(table.row(i).to_vec());
            train_y.push(labels[i]);
        }
    }
    let mut fold_cfg = cfg.clone();
    fold_cfg.seed = derive_seed_indexed(cfg.seed, "cv-fold", fold as u64);
    let schema = feature_schema_hash(table.feature_names());
    train_model(kind, &train_x, &train_y, &fold_cfg, &schema, None)
}

struct FoldOutcome {
    metrics: Metrics,
    confusion: ConfusionMatrix,
    predictions: Vec<(usize, u8)>,
}

fn evaluate_fold(
    kind: ModelKind,
    cfg: &TrainConfig,
    table: &FeatureTable,
    folds: &FoldAssignment,
    fold: usize,
    classes: &[u8],
) -> Result<FoldOutcome> {
    let artifact = fit_fold(kind, cfg, table, folds, fold)?;
    let labels = table_labels(table);
    let mut test_rows = Vec::new();
    let mut test_x = Vec::new();
    for (i, &f) in folds.folds.iter().enumerate() {
        if f == fold {
            test_rows.push(i);
            test_x.push(table.row(i).to_vec());
        }
    }
    if test_rows.is_empty() {
        return Err(PipelineError::argument(format!(
            "fold {fold} has no test rows"
        )));
    }
    let schema = feature_schema_hash(table.feature_names());
    let pred = predict(&artifact, &test_x, &schema)?;
    let y_true: Vec<u8> = test_rows.iter().map(|&i| labels[i]).collect();
    let (metrics, confusion) = compute_metrics(&y_true, &pred.labels, classes)?;
    Ok(FoldOutcome {
        metrics,
        confusion,
        predictions: test_rows.into_iter().zip(pred.labels).collect(),
    })
}

/// Runs k-fold cross-validation of one model kind over a feature
/// table. Each fold fits scaler and model on its training partition
/// only, evaluates on its test partition, and the fold results are
/// aggregated (metric mean ± std, confusion matrices summed).
pub fn cross_validate(
    kind: ModelKind,
    cfg: &TrainConfig,
    table: &FeatureTable,
    folds: &FoldAssignment,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    check_folds(table, folds)?;
    let labels = table_labels(table);
    let classes = distinct_classes(&labels);

    let outcomes = parallel::try_map_range(folds.k, |fold| {
        evaluate_fold(kind, cfg, table, folds, fold, &classes)
    })?;

    let mut confusion = ConfusionMatrix::zeros(classes.clone())?;
    let mut per_fold = Vec::with_capacity(folds.k);
    let mut subject_tallies: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    for (fold, outcome) in outcomes.iter().enumerate() {
        confusion.accumulate(&outcome.confusion)?;
        per_fold.push(FoldMetrics {
            fold,
            n_test: outcome.predictions.len(),
            metrics: outcome.metrics.clone(),
        });
        for &(row, pred_label) in &outcome.predictions {
            let meta = &table.meta()[row];
            let tally = subject_tallies.entry(meta.subject).or_insert((0, 0));
            tally.0 += 1;
            if pred_label == labels[row] {
                tally.1 += 1;
            }
        }
    }
    let collect = |f: fn(&Metrics) -> f64| -> Vec<f64> {
        per_fold.iter().map(|p| f(&p.metrics)).collect()
    };
    let aggregate = AggregateMetrics {
        accuracy: mean_std(&collect(|m| m.accuracy)),
        precision_macro: mean_std(&collect(|m| m.precision_macro)),
        recall_macro: mean_std(&collect(|m| m.recall_macro)),
        f1_macro: mean_std(&collect(|m| m.f1_macro)),
        kappa: mean_std(&collect(|m| m.kappa)),
    };
    let pooled = metrics_from_confusion(&confusion)?;
    let per_subject: Vec<SubjectScore> = subject_tallies
        .into_iter()
        .map(|(subject, (n, correct))| SubjectScore {
            subject,
            n_windows: n,
            accuracy: correct as f64 / n as f64,
        })
        .collect();
    let subject_mean_accuracy =
        per_subject.iter().map(|s| s.accuracy).sum::<f64>() / per_subject.len() as f64;

    Ok(EvaluationReport {
        model: kind,
        folds: folds.clone(),
        config: cfg.clone(),
        per_fold,
        aggregate,
        pooled,
        confusion,
        per_subject,
        subject_mean_accuracy,
    })
}

/// Learning curve over training-set fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub model: ModelKind,
    pub train_fractions: Vec<f64>,
    pub train_score: Vec<MeanStd>,
    pub val_score: Vec<MeanStd>,
    pub repeats: usize,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,train_mean,train_std,val_mean,val_std\n");
        for (i, &f) in self.train_fractions.iter().enumerate() {
            out.push_str(&format!(
                "{f},{},{},{},{}\n",
                self.train_score[i].mean,
                self.train_score[i].std,
                self.val_score[i].mean,
                self.val_score[i].std
            ));
        }
        out
    }
}

fn accuracy_on(artifact: &ModelArtifact, schema: &str, x: &[Vec<f64>], y: &[u8]) -> Result<f64> {
    let pred = predict(artifact, x, schema)?;
    let correct = pred
        .labels
        .iter()
        .zip(y)
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / y.len() as f64)
}

/// Trains on stratified subsamples of a fixed training pool and scores
/// on a fixed validation split (fold 0 of a
/// [`LEARNING_CURVE_FOLDS`]-fold stratified split seeded by `seed`).
///
/// The model seed is the cross-validation fold-0 seed, so at fraction
/// 1.0 the validation score reproduces [`cross_validate`]'s fold-0
/// score for the same fold seed exactly; subsamples are re-drawn per
/// (fraction, repeat) and kept in ascending row order.
pub fn learning_curve(
    kind: ModelKind,
    cfg: &TrainConfig,
    table: &FeatureTable,
    fractions: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<LearningCurve> {
    cfg.validate()?;
    if fractions.is_empty() {
        return Err(PipelineError::argument("learning curve needs fractions"));
    }
    for pair in fractions.windows(2) {
        if pair[1] <= pair[0] {
            return Err(PipelineError::argument(format!(
                "fractions must increase strictly, got {} after {}",
                pair[1], pair[0]
            )));
        }
    }
    if !(fractions[0] > 0.0) || *fractions.last().expect("nonempty") > 1.0 {
        return Err(PipelineError::argument(
            "fractions must lie in (0, 1]",
        ));
    }
    if repeats == 0 {
        return Err(PipelineError::argument("repeats must be at least 1"));
    }

    let labels = table_labels(table);
    let assignment = stratified_kfold(&labels, LEARNING_CURVE_FOLDS, seed)?;
    let mut val_idx = Vec::new();
    let mut pool: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &fold) in assignment.iter().enumerate() {
        if fold == 0 {
            val_idx.push(i);
        } else {
            pool.entry(labels[i]).or_default().push(i);
        }
    }
    let val_x: Vec<Vec<f64>> = val_idx.iter().map(|&i| table.row(i).to_vec()).collect();
    let val_y: Vec<u8> = val_idx.iter().map(|&i| labels[i]).collect();
    let schema = feature_schema_hash(table.feature_names());

    let mut fold_cfg = cfg.clone();
    fold_cfg.seed = derive_seed_indexed(cfg.seed, "cv-fold", 0);

    let mut train_score = Vec::with_capacity(fractions.len());
    let mut val_score = Vec::with_capacity(fractions.len());
    for (fi, &fraction) in fractions.iter().enumerate() {
        let mut train_accs = Vec::with_capacity(repeats);
        let mut val_accs = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut train_idx = Vec::new();
            if fraction >= 1.0 {
                for members in pool.values() {
                    train_idx.extend_from_slice(members);
                }
            } else {
                let draw = derive_seed_indexed(
                    seed,
                    "learning-curve-subsample",
                    (fi * repeats + r) as u64,
                );
                let mut rng = rng_from_seed(draw);
                for (&label, members) in &pool {
                    let amount = (fraction * members.len() as f64).round() as usize;
                    if amount == 0 {
                        return Err(PipelineError::argument(format!(
                            "fraction {fraction} leaves class {label} with no training samples \
                             ({} in the pool)",
                            members.len()
                        )));
                    }
                    let picks = rand::seq::index::sample(&mut rng, members.len(), amount);
                    train_idx.extend(picks.iter().map(|p| members[p]));
                }
            }
            train_idx.sort_unstable();
            let train_x: Vec<Vec<f64>> =
                train_idx.iter().map(|&i| table.row(i).to_vec()).collect();
            let train_y: Vec<u8> = train_idx.iter().map(|&i| labels[i]).collect();
            let artifact = train_model(kind, &train_x, &train_y, &fold_cfg, &schema, None)?;
            train_accs.push(accuracy_on(&artifact, &schema, &train_x, &train_y)?);
            val_accs.push(accuracy_on(&artifact, &schema, &val_x, &val_y)?);
        }
        train_score.push(mean_std(&train_accs));
        val_score.push(mean_std(&val_accs));
    }
    Ok(LearningCurve {
        model: kind,
        train_fractions: fractions.to_vec(),
        train_score,
        val_score,
        repeats,
    })
}

/// One line of the model-comparison table (aggregate means).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub rank: usize,
    pub model: ModelKind,
    pub accuracy: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision: f64,
    pub kappa: f64,
}

/// Ranked comparison of several model kinds under identical folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub rows: Vec<ComparisonRow>,
    pub reports: Vec<EvaluationReport>,
}

impl ModelComparison {
    /// CSV shaped like the per-model comparison table:
    /// `Model,Accuracy,Recall,F1,Prec.,Kappa`, rows in rank order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("Model,Accuracy,Recall,F1,Prec.,Kappa\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
                row.model, row.accuracy, row.recall, row.f1, row.precision, row.kappa
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| PipelineError::format(format!("cannot encode comparison: {e}")))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

fn rank_rows(mut rows: Vec<ComparisonRow>) -> Vec<ComparisonRow> {
    rows.sort_by(|a, b| {
        b.accuracy
            .partial_cmp(&a.accuracy)
            .expect("finite accuracy")
            .then(b.kappa.partial_cmp(&a.kappa).expect("finite kappa"))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    rows
}

/// Cross-validates every kind under the same fold assignment and
/// ranks the results by accuracy, breaking ties by kappa. The shared
/// folds are recorded in every report and asserted equal.
pub fn compare_models(
    kinds: &[ModelKind],
    cfg: &TrainConfig,
    table: &FeatureTable,
    folds: &FoldAssignment,
) -> Result<ModelComparison> {
    if kinds.is_empty() {
        return Err(PipelineError::argument("compare_models needs at least one kind"));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = kinds.iter().find(|k| !seen.insert(**k)) {
        return Err(PipelineError::argument(format!(
            "model kind {dup} listed twice"
        )));
    }
    let reports: Vec<EvaluationReport> = kinds
        .iter()
        .map(|&kind| cross_validate(kind, cfg, table, folds))
        .collect::<Result<_>>()?;
    for report in &reports {
        if report.folds != *folds {
            return Err(PipelineError::design(
                "comparison reports disagree on fold assignments",
            ));
        }
    }
    let rows = rank_rows(
        reports
            .iter()
            .map(|r| ComparisonRow {
                rank: 0,
                model: r.model,
                accuracy: r.aggregate.accuracy.mean,
                recall: r.aggregate.recall_macro.mean,
                f1: r.aggregate.f1_macro.mean,
                precision: r.aggregate.precision_macro.mean,
                kappa: r.aggregate.kappa.mean,
            })
            .collect(),
    );
    Ok(ModelComparison { rows, reports })
}

/// One window size's outcome in the window-comparison experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window_ms: f64,
    pub n_windows: usize,
    pub accuracy: f64,
    /// Median across features of IQR / |median| (vanishing medians
    /// are skipped).
    pub dispersion_index: f64,
    /// Fraction of (window, feature) cells outside the per-feature
    /// Tukey fences.
    pub outlier_rate: f64,
}

/// Per-window-size comparison over the same recordings and model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowComparison {
    pub model: ModelKind,
    pub rows: Vec<WindowReport>,
}

impl WindowComparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window_ms,n_windows,accuracy,dispersion_index,outlier_rate\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.window_ms, row.n_windows, row.accuracy, row.dispersion_index, row.outlier_rate
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| PipelineError::format(format!("cannot encode window comparison: {e}")))
    }
}

/// Feature-table stability statistics: dispersion index (median across
/// features of IQR/|median|) and Tukey outlier-cell rate.
pub fn table_dispersion(table: &FeatureTable) -> Result<(f64, f64)> {
    let per_feature = parallel::try_map_range(table.n_features(), |j| {
        let col: Vec<f64> = table.rows().iter().map(|r| r[j]).collect();
        let s = SummaryStats::from_values(&col)?;
        let iqr = s.q3 - s.q1;
        let ratio = if s.median.abs() > 1e-12 {
            Some(iqr / s.median.abs())
        } else {
            None
        };
        let lo = s.q1 - 1.5 * iqr;
        let hi = s.q3 + 1.5 * iqr;
        let outliers = col.iter().filter(|&&v| v < lo || v > hi).count();
        Ok((ratio, outliers, col.len()))
    })?;
    let ratios: Vec<f64> = per_feature.iter().filter_map(|(r, _, _)| *r).collect();
    if ratios.is_empty() {
        return Err(PipelineError::degenerate(
            "every feature median vanishes; dispersion index is undefined",
        ));
    }
    let dispersion = SummaryStats::from_values(&ratios)?.median;
    let outliers: usize = per_feature.iter().map(|(_, o, _)| o).sum();
    let cells: usize = per_feature.iter().map(|(_, _, n)| n).sum();
    Ok((dispersion, outliers as f64 / cells as f64))
}

/// Runs the full pipeline (preprocess → features → cross-validation)
/// once per window size and reports accuracy, the feature dispersion
/// index, and the Tukey outlier rate for each size.
#[allow(clippy::too_many_arguments)]
pub fn window_comparison(
    recordings: &[EmgRecording],
    window_sizes_ms: &[f64],
    kind: ModelKind,
    cfg: &TrainConfig,
    pre: &PreprocessConfig,
    registry: &FeatureRegistry,
    options: &ExtractOptions,
    k: usize,
    mode: SplitMode,
) -> Result<WindowComparison> {
    if window_sizes_ms.is_empty() {
        return Err(PipelineError::argument(
            "window comparison needs at least one window size",
        ));
    }
    cfg.validate()?;
    let processed: Vec<EmgRecording> = parallel::try_map_slice(recordings, |rec| {
        Ok(preprocess_recording(rec, pre)?.0)
    })?;
    let mut rows = Vec::with_capacity(window_sizes_ms.len());
    for &window_ms in window_sizes_ms {
        let spec = WindowSpec::new(window_ms)?;
        let table = extract_feature_table(&processed, registry, &spec, options)?;
        let folds = make_folds(
            &table,
            k,
            mode,
            derive_seed(cfg.seed, "window-comparison-folds"),
        )?;
        let report = cross_validate(kind, cfg, &table, &folds)?;
        let (dispersion_index, outlier_rate) = table_dispersion(&table)?;
        rows.push(WindowReport {
            window_ms,
            n_windows: table.n_rows(),
            accuracy: report.aggregate.accuracy.mean,
            dispersion_index,
            outlier_rate,
        });
    }
    Ok(WindowComparison { model: kind, rows })
}
