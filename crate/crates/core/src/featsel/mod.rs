//! Hybrid feature selection: a mutual-information filter, a PCA
//! variance report, CART importances, and a channel-level drop rule.
//!
//! The funnel runs in five steps over a [`FeatureTable`]:
//!
//! 1. drop zero-variance columns and columns of families whose quality
//!    flags fired anywhere in the table (a degenerate CoV or a
//!    zero-power spectrum taints the whole family for selection);
//! 2. keep columns whose normalized mutual information with the labels
//!    clears `mi_min` — or, in replication mode, keep every column of
//!    the top-scoring feature families;
//! 3. run PCA on the survivors; its components and explained-variance
//!    ratios go in the report for inspection but eliminate nothing;
//! 4. fit a CART tree on the survivors and keep columns whose
//!    normalized Gini importance clears `importance_min`;
//! 5. aggregate per-channel: a channel whose columns have the worst
//!    mean rank (averaged over the MI and importance rankings) is
//!    dropped entirely, bottom `channel_drop_fraction` of channels.
//!
//! Every stage is deterministic, so the same table and thresholds
//! always produce byte-identical reports. Instead of boxplots the
//! report carries per-class five-number summaries for each column, so
//! a headless run exports everything a plot would show.

mod cart;
mod pca;

pub use cart::{cart_train, CartModel, CartNode, CartParams};
pub use pca::{pca, PcaResult};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::features::FeatureTable;
use crate::parallel;

/// Knobs of the hybrid funnel. `Default` matches the CLI defaults:
/// `mi_min` 0.1, `importance_min` 0.01, `retain_ratio` 0.85, 10
/// equal-frequency bins, and a bottom-2-of-12 channel drop expressed
/// as the fraction 1/6 so smaller channel counts scale down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionThresholds {
    pub mi_min: f64,
    pub importance_min: f64,
    pub retain_ratio: f64,
    pub n_bins: usize,
    pub channel_drop_fraction: f64,
    /// `Some(k)`: replication mode. Ignore `mi_min` and instead retain
    /// every column of the `k` feature families with the highest
    /// family score (max column MI), recording the induced threshold.
    pub replication_families: Option<usize>,
}

impl Default for SelectionThresholds {
    fn default() -> Self {
        Self {
            mi_min: 0.1,
            importance_min: 0.01,
            retain_ratio: 0.85,
            n_bins: 10,
            channel_drop_fraction: 2.0 / 12.0,
            replication_families: None,
        }
    }
}

impl SelectionThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.mi_min >= 0.0 && self.mi_min.is_finite()) {
            return Err(PipelineError::argument(format!(
                "mi_min must be finite and nonnegative, got {}",
                self.mi_min
            )));
        }
        if !(self.importance_min >= 0.0 && self.importance_min.is_finite()) {
            return Err(PipelineError::argument(format!(
                "importance_min must be finite and nonnegative, got {}",
                self.importance_min
            )));
        }
        if !(self.retain_ratio > 0.0 && self.retain_ratio <= 1.0) {
            return Err(PipelineError::argument(format!(
                "retain_ratio must be in (0, 1], got {}",
                self.retain_ratio
            )));
        }
        if self.n_bins < 2 {
            return Err(PipelineError::argument(format!(
                "n_bins must be at least 2, got {}",
                self.n_bins
            )));
        }
        if !(self.channel_drop_fraction >= 0.0 && self.channel_drop_fraction < 1.0) {
            return Err(PipelineError::argument(format!(
                "channel_drop_fraction must be in [0, 1), got {}",
                self.channel_drop_fraction
            )));
        }
        if self.replication_families == Some(0) {
            return Err(PipelineError::argument(
                "replication_families must be at least 1 when set",
            ));
        }
        Ok(())
    }
}

/// Five-number summary of one column restricted to one class, plus the
/// Tukey whiskers (most extreme values within 1.5 IQR of the
/// quartiles). Quartiles interpolate linearly between order statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

impl SummaryStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(PipelineError::argument(
                "summary statistics need at least one value",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PipelineError::validation(
                "summary statistics need finite values",
            ));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        let q1 = quantile(&sorted, 0.25);
        let median = quantile(&sorted, 0.5);
        let q3 = quantile(&sorted, 0.75);
        let iqr = q3 - q1;
        let lo_fence = q1 - 1.5 * iqr;
        let hi_fence = q3 + 1.5 * iqr;
        let whisker_low = *sorted
            .iter()
            .find(|&&v| v >= lo_fence)
            .expect("q1 is within the fence");
        let whisker_high = *sorted
            .iter()
            .rev()
            .find(|&&v| v <= hi_fence)
            .expect("q3 is within the fence");
        Ok(Self {
            min: sorted[0],
            q1,
            median,
            q3,
            max: *sorted.last().expect("nonempty"),
            whisker_low,
            whisker_high,
        })
    }
}

/// Linear-interpolation quantile of an ascending slice (the same
/// convention as `numpy.quantile`'s default).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Summary of one column for one class label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub label: u8,
    pub stats: SummaryStats,
}

/// Scores of one feature column, kept for every column of the input
/// table regardless of survival, so the report explains each decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub name: String,
    pub family: String,
    pub channel: Option<usize>,
    pub mi_normalized: f64,
    /// Normalized Gini importance from the CART stage; columns that
    /// never reached that stage carry 0.
    pub gini_importance: f64,
    /// Whether the column made it into `final_set`.
    pub kept: bool,
    pub class_summaries: Vec<ClassSummary>,
}

/// PCA stage output: the retained components over the MI-surviving
/// columns, plus the full explained-variance spectrum (which sums
/// to 1 across all components, not just the retained ones).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaReport {
    /// Column names the components are expressed over.
    pub columns: Vec<String>,
    /// The first `n_retained` components, each aligned with `columns`.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    pub n_retained: usize,
}

/// One selected column in the final feature set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedColumn {
    pub name: String,
    pub family: String,
    /// `None` for cross-channel columns such as the `_std` spreads.
    pub channel: Option<usize>,
}

/// Everything the selection run decided and why.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub per_feature: Vec<FeatureScore>,
    pub pca: PcaReport,
    pub final_set: Vec<SelectedColumn>,
    pub dropped_channels: Vec<usize>,
    /// The MI threshold actually applied; equals `thresholds.mi_min`
    /// unless replication mode derived one from the family ranking.
    pub effective_mi_min: f64,
    pub thresholds: SelectionThresholds,
}

impl SelectionReport {
    pub fn to_json(&self) -> Result<String> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| PipelineError::format(format!("cannot encode selection report: {e}")))?;
        Ok(json + "\n")
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::format(format!("cannot decode selection report: {e}")))
    }

    /// The final set as CSV with header `name,family,channel`; the
    /// channel cell is empty for cross-channel columns.
    pub fn final_set_csv(&self) -> String {
        let mut out = String::from("name,family,channel\n");
        for col in &self.final_set {
            out.push_str(&col.name);
            out.push(',');
            out.push_str(&col.family);
            out.push(',');
            if let Some(ch) = col.channel {
                out.push_str(&ch.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Splits a column name into its feature family and channel:
/// `rms_ch3` → (`rms`, Some(3)), `mdwt_l2_ch10` → (`mdwt_l2`,
/// Some(10)), `rms_std` → (`rms`, None). Names without either suffix
/// are their own family with no channel.
pub fn parse_column_name(name: &str) -> (String, Option<usize>) {
    if let Some((head, tail)) = name.rsplit_once("_ch") {
        if !head.is_empty() && !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(ch) = tail.parse::<usize>() {
                return (head.to_string(), Some(ch));
            }
        }
    }
    if let Some(head) = name.strip_suffix("_std") {
        if !head.is_empty() {
            return (head.to_string(), None);
        }
    }
    (name.to_string(), None)
}

/// Normalized mutual information between a numeric feature and class
/// labels.
///
/// The feature is discretized by equal-frequency binning: values are
/// rank-ordered (stable, so exact ties keep input order) and rank `r`
/// of `n` lands in bin `⌊r·n_bins/n⌋`. Because only ranks matter, the
/// estimate is exactly invariant under strictly monotone transforms of
/// the feature. The plug-in estimate `I(F;L) = Σ p(f,l)·ln(p/(p_f
/// p_l))` is normalized by the label entropy `H(L)`, giving a value in
/// `[0, 1]`. A constant feature carries no information and returns 0.
pub fn mutual_information(feature: &[f64], labels: &[u8], n_bins: usize) -> Result<f64> {
    let n = feature.len();
    if n == 0 || labels.len() != n {
        return Err(PipelineError::argument(
            "mutual information needs matching nonempty feature and label slices",
        ));
    }
    if n_bins < 2 {
        return Err(PipelineError::argument(format!(
            "n_bins must be at least 2, got {n_bins}"
        )));
    }
    if feature.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::validation(
            "mutual information needs finite feature values",
        ));
    }
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(PipelineError::argument(
            "mutual information needs at least 2 distinct labels",
        ));
    }
    let constant = feature.iter().all(|&v| v == feature[0]);
    if constant {
        return Ok(0.0);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| feature[a].partial_cmp(&feature[b]).expect("finite values"));
    let mut joint = vec![vec![0usize; classes.len()]; n_bins];
    for (rank, &i) in order.iter().enumerate() {
        let bin = rank * n_bins / n;
        let class = classes.binary_search(&labels[i]).expect("label in class list");
        joint[bin][class] += 1;
    }

    let info = mi_from_joint(&joint);
    let label_entropy = {
        let mut h = 0.0;
        for c in 0..classes.len() {
            let count: usize = joint.iter().map(|row| row[c]).sum();
            if count > 0 {
                let p = count as f64 / n as f64;
                h -= p * p.ln();
            }
        }
        h
    };
    Ok((info / label_entropy).clamp(0.0, 1.0))
}

/// Plug-in mutual information (nats) of a joint count table. Symmetric
/// in its two axes by construction.
fn mi_from_joint(joint: &[Vec<usize>]) -> f64 {
    let n: usize = joint.iter().map(|row| row.iter().sum::<usize>()).sum();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let cols = joint.first().map_or(0, |r| r.len());
    let row_sums: Vec<f64> = joint
        .iter()
        .map(|row| row.iter().sum::<usize>() as f64 / nf)
        .collect();
    let col_sums: Vec<f64> = (0..cols)
        .map(|c| joint.iter().map(|row| row[c]).sum::<usize>() as f64 / nf)
        .collect();
    let mut info = 0.0;
    for (row, &pr) in joint.iter().zip(&row_sums) {
        for (&count, &pc) in row.iter().zip(&col_sums) {
            if count > 0 {
                let p = count as f64 / nf;
                info += p * (p / (pr * pc)).ln();
            }
        }
    }
    info.max(0.0)
}

/// Per-column intermediate state gathered before the funnel stages.
struct ColumnInfo {
    zero_variance: bool,
    mi: f64,
    class_summaries: Vec<ClassSummary>,
}

fn score_table_note(names: &[String], scores: &[f64], what: &str) -> String {
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let listed: Vec<String> = order
        .iter()
        .take(12)
        .map(|&i| format!("{} {what}={:.4}", names[i], scores[i]))
        .collect();
    format!("top scores: {}", listed.join(", "))
}

/// Runs the five-step hybrid funnel described in the module docs.
/// `labels` is the class label of each table row (for gesture tables,
/// the gesture column including rest as class 0).
pub fn hybrid_select(
    table: &FeatureTable,
    labels: &[u8],
    thresholds: &SelectionThresholds,
) -> Result<SelectionReport> {
    thresholds.validate()?;
    let n = table.n_rows();
    if n == 0 {
        return Err(PipelineError::argument("feature table has no rows"));
    }
    if labels.len() != n {
        return Err(PipelineError::argument(format!(
            "label count {} does not match table rows {n}",
            labels.len()
        )));
    }
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(PipelineError::argument(
            "feature selection needs at least 2 distinct labels",
        ));
    }

    let names = table.feature_names();
    let d = names.len();
    let parsed: Vec<(String, Option<usize>)> =
        names.iter().map(|n| parse_column_name(n)).collect();

    // Step 1 inputs: zero variance per column and table-wide flags.
    let mut flagged_families: BTreeSet<&str> = BTreeSet::new();
    for flags in table.flags() {
        if flags.cov_degenerate {
            flagged_families.insert("cov");
        }
        if flags.spectral_zero_power {
            flagged_families.insert("mnf");
        }
    }

    let rows = table.rows();
    let columns: Vec<ColumnInfo> = parallel::try_map_range(d, |j| {
        let values: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let zero_variance = values.iter().all(|&v| v == values[0]);
        let mi = mutual_information(&values, labels, thresholds.n_bins)
            .map_err(|e| e.with_context(format!("column {}", names[j])))?;
        let class_summaries = classes
            .iter()
            .map(|&label| {
                let subset: Vec<f64> = values
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == label)
                    .map(|(&v, _)| v)
                    .collect();
                Ok(ClassSummary {
                    label,
                    stats: SummaryStats::from_values(&subset)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ColumnInfo {
            zero_variance,
            mi,
            class_summaries,
        })
    })?;

    let step1: Vec<bool> = (0..d)
        .map(|j| {
            !columns[j].zero_variance && !flagged_families.contains(parsed[j].0.as_str())
        })
        .collect();
    let mi_scores: Vec<f64> = columns.iter().map(|c| c.mi).collect();

    // Step 2: the MI filter, column-wise or family-wise.
    let (effective_mi_min, mi_mask): (f64, Vec<bool>) = match thresholds.replication_families {
        Some(k) => {
            let mut family_best: BTreeMap<&str, f64> = BTreeMap::new();
            for j in 0..d {
                if step1[j] {
                    let entry = family_best.entry(parsed[j].0.as_str()).or_insert(0.0);
                    *entry = entry.max(columns[j].mi);
                }
            }
            let mut ranked: Vec<(&str, f64)> =
                family_best.iter().map(|(&f, &s)| (f, s)).collect();
            ranked.sort_by(|a, b| {
                b.1.partial_cmp(&a.1).expect("finite scores").then(a.0.cmp(b.0))
            });
            if ranked.is_empty() {
                return Err(PipelineError::degenerate(
                    "no feature column survived the variance and flag screen",
                ));
            }
            let keep = k.min(ranked.len());
            let kept: BTreeSet<&str> = ranked[..keep].iter().map(|&(f, _)| f).collect();
            let threshold = ranked[keep - 1].1;
            let mask = (0..d)
                .map(|j| step1[j] && kept.contains(parsed[j].0.as_str()))
                .collect();
            (threshold, mask)
        }
        None => {
            let mask = (0..d)
                .map(|j| step1[j] && columns[j].mi >= thresholds.mi_min)
                .collect();
            (thresholds.mi_min, mask)
        }
    };
    let mi_survivors: Vec<usize> = (0..d).filter(|&j| mi_mask[j]).collect();
    if mi_survivors.is_empty() {
        return Err(PipelineError::argument(format!(
            "mutual-information threshold {effective_mi_min} eliminated every feature column; {}",
            score_table_note(names, &mi_scores, "mi")
        )));
    }

    let survivor_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| mi_survivors.iter().map(|&j| r[j]).collect())
        .collect();

    // Step 3: PCA variance report on the survivors.
    let pca_result = pca(&survivor_rows, thresholds.retain_ratio)
        .map_err(|e| e.with_context("PCA over mutual-information survivors"))?;
    let pca_report = PcaReport {
        columns: mi_survivors.iter().map(|&j| names[j].clone()).collect(),
        components: pca_result.components[..pca_result.n_retained].to_vec(),
        explained_variance_ratio: pca_result.explained_variance_ratio.clone(),
        n_retained: pca_result.n_retained,
    };

    // Step 4: CART importances on the same survivor matrix.
    let cart = cart_train(&survivor_rows, labels, &CartParams::default())?;
    let mut importance = vec![0.0f64; d];
    for (pos, &j) in mi_survivors.iter().enumerate() {
        importance[j] = cart.gini_importances[pos];
    }
    let step4: Vec<bool> = (0..d)
        .map(|j| mi_mask[j] && importance[j] >= thresholds.importance_min)
        .collect();
    if !step4.iter().any(|&k| k) {
        return Err(PipelineError::argument(format!(
            "importance threshold {} eliminated every feature column; {}",
            thresholds.importance_min,
            score_table_note(names, &importance, "importance")
        )));
    }

    // Step 5: channel aggregation over the MI survivors. Rank columns
    // by MI and by importance (1 = best), average the two ranks, then
    // average per channel; the worst channels are dropped.
    let rank_by = |score_of: &dyn Fn(usize) -> f64| -> BTreeMap<usize, f64> {
        let mut order: Vec<usize> = mi_survivors.clone();
        order.sort_by(|&a, &b| {
            score_of(b)
                .partial_cmp(&score_of(a))
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        order
            .iter()
            .enumerate()
            .map(|(pos, &j)| (j, (pos + 1) as f64))
            .collect()
    };
    let mi_rank = rank_by(&|j| columns[j].mi);
    let imp_rank = rank_by(&|j| importance[j]);

    let table_channels: BTreeSet<usize> =
        parsed.iter().filter_map(|(_, ch)| *ch).collect();
    let n_drop_target =
        (table_channels.len() as f64 * thresholds.channel_drop_fraction).floor() as usize;

    let mut channel_rank: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for &j in &mi_survivors {
        if let Some(ch) = parsed[j].1 {
            let combined = (mi_rank[&j] + imp_rank[&j]) / 2.0;
            let entry = channel_rank.entry(ch).or_insert((0.0, 0));
            entry.0 += combined;
            entry.1 += 1;
        }
    }
    // A channel that lost every column in the earlier stages has all
    // its columns in the bottom by definition; rank it past the worst
    // real mean rank so it is dropped before any surviving channel.
    let sentinel = (mi_survivors.len() + 1) as f64;
    let mut ranked_channels: Vec<(usize, f64)> = table_channels
        .iter()
        .map(|&ch| {
            let score = channel_rank
                .get(&ch)
                .map_or(sentinel, |&(sum, count)| sum / count as f64);
            (ch, score)
        })
        .collect();
    // Worst mean rank first; ties drop the higher channel number.
    ranked_channels.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).expect("finite ranks").then(b.0.cmp(&a.0))
    });
    let n_drop = n_drop_target.min(ranked_channels.len().saturating_sub(1));
    let mut dropped_channels: Vec<usize> =
        ranked_channels[..n_drop].iter().map(|&(ch, _)| ch).collect();
    dropped_channels.sort_unstable();

    let final_mask: Vec<bool> = (0..d)
        .map(|j| {
            step4[j]
                && parsed[j]
                    .1
                    .is_none_or(|ch| !dropped_channels.contains(&ch))
        })
        .collect();
    if !final_mask.iter().any(|&k| k) {
        return Err(PipelineError::argument(format!(
            "channel drop eliminated every remaining column; {}",
            score_table_note(names, &importance, "importance")
        )));
    }

    let final_set: Vec<SelectedColumn> = (0..d)
        .filter(|&j| final_mask[j])
        .map(|j| SelectedColumn {
            name: names[j].clone(),
            family: parsed[j].0.clone(),
            channel: parsed[j].1,
        })
        .collect();

    let per_feature: Vec<FeatureScore> = (0..d)
        .map(|j| FeatureScore {
            name: names[j].clone(),
            family: parsed[j].0.clone(),
            channel: parsed[j].1,
            mi_normalized: columns[j].mi,
            gini_importance: importance[j],
            kept: final_mask[j],
            class_summaries: columns[j].class_summaries.clone(),
        })
        .collect();

    Ok(SelectionReport {
        per_feature,
        pca: pca_report,
        final_set,
        dropped_channels,
        effective_mi_min,
        thresholds: thresholds.clone(),
    })
}
