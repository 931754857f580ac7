//! Fixed-window feature extraction.
//!
//! Envelopes are cut into non-overlapping windows aligned to the start
//! of each label run, and every window yields a bank of per-channel
//! features — time-domain scalars (RMS, MAV, IAV, WL, MAVS, ZC, SSC,
//! VAR, CoV, KURT), autoregressive coefficients (AR, Burg), spectral
//! moments (MNP, MNF), and marginal wavelet coefficients (mDWT) — plus
//! one cross-channel standard deviation per base metric (the `_std`
//! companions). Rows land in a [`FeatureTable`] keyed by subject,
//! gesture, repetition, and window index.
//!
//! The bank deliberately ships in two registry flavours:
//! [`FeatureRegistry::scalar_only`] collapses AR (dropped) and mDWT
//! (summed over levels) so that exactly 13 per-channel families and 13
//! `_std` companions remain — the classic 26-attribute layout — while
//! [`FeatureRegistry::full`] expands AR and mDWT into per-output
//! columns for downstream selection to prune.

mod burg;
mod mdwt;
mod spectral;
mod table;

pub use burg::{compute_ar_coefficients, compute_ar_coefficients_with_error};
pub use mdwt::compute_mdwt;
pub use spectral::{compute_spectral_features, SpectralFeatures};
pub use table::{manifest_path, FeatureTable, RowFlags, RowMeta, TableProvenance};

use crate::dataset::{label_runs, EmgRecording, GestureTrial};
use crate::error::{PipelineError, Result};
use crate::parallel;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Non-overlapping rectangular windowing, aligned to the start of each
/// label run. Overlap is fixed at zero and trailing partial windows are
/// dropped, so a run of `len` samples yields `⌊len / window_samples⌋`
/// windows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    /// Window length in milliseconds. The usual menu is 100, 200, or
    /// 300 ms; other values are accepted as long as they map to a whole
    /// number of samples at the recording's rate.
    pub window_ms: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { window_ms: 200.0 }
    }
}

impl WindowSpec {
    pub fn new(window_ms: f64) -> Result<Self> {
        if !window_ms.is_finite() || window_ms <= 0.0 {
            return Err(PipelineError::argument(format!(
                "window_ms must be positive and finite, got {window_ms}"
            )));
        }
        Ok(WindowSpec { window_ms })
    }

    /// Window length in samples at `sample_rate_hz`. The product must
    /// come out to a whole number of samples (e.g. 200 ms at 2 kHz →
    /// 400); fractional-sample windows are a configuration mistake.
    pub fn window_samples(&self, sample_rate_hz: f64) -> Result<usize> {
        if !sample_rate_hz.is_finite() || sample_rate_hz <= 0.0 {
            return Err(PipelineError::argument(format!(
                "sample rate must be positive and finite, got {sample_rate_hz}"
            )));
        }
        let exact = self.window_ms * sample_rate_hz / 1000.0;
        let rounded = exact.round();
        if (exact - rounded).abs() > 1e-9 * exact.max(1.0) || rounded < 1.0 {
            return Err(PipelineError::argument(format!(
                "window of {} ms at {} Hz is {} samples; windows must be a whole, positive \
                 number of samples",
                self.window_ms, sample_rate_hz, exact
            )));
        }
        Ok(rounded as usize)
    }
}

/// One window cut from a trial: channel-major samples plus the window's
/// position within its trial.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// 0-based index of this window within its trial.
    pub index: usize,
    /// Offset in samples from the trial start.
    pub start: usize,
    pub channels: Vec<Vec<f64>>,
}

/// Cuts a trial into non-overlapping windows from its start, dropping
/// the trailing remainder. A trial shorter than one window yields an
/// empty list rather than an error, so callers can sum window counts
/// over heterogeneous trials without special cases.
pub fn segment_windows(
    trial: &GestureTrial,
    spec: &WindowSpec,
    sample_rate_hz: f64,
) -> Result<Vec<Window>> {
    let ws = spec.window_samples(sample_rate_hz)?;
    let n = trial.n_samples();
    let n_windows = n / ws;
    let mut out = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let start = w * ws;
        let channels = trial
            .segment
            .iter()
            .map(|ch| ch[start..start + ws].to_vec())
            .collect();
        out.push(Window {
            index: w,
            start,
            channels,
        });
    }
    Ok(out)
}

/// Tunables for the scalar features that have any.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureParams {
    /// Dead-band threshold for ZC and SSC. Defaults to 0: on
    /// normalized envelopes the counts are near zero anyway, and the
    /// threshold only matters in raw-signal mode.
    pub epsilon: f64,
    /// Number of equal sub-segments for MAVS.
    pub mavs_segments: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            epsilon: 0.0,
            mavs_segments: 3,
        }
    }
}

fn validate_window_input(x: &[f64]) -> Result<()> {
    if x.len() < 2 {
        return Err(PipelineError::argument(format!(
            "window has {} samples; scalar features need at least 2",
            x.len()
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(PipelineError::argument(format!(
            "sample {i} is not finite"
        )));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn feature_mav(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64
}

fn feature_iav(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum::<f64>()
}

fn feature_rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn feature_wl(x: &[f64]) -> f64 {
    x.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>()
}

fn feature_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Coefficient of variation `std / |mean|`, with the near-zero-mean
/// case mapped to 0 plus a flag instead of blowing up the table.
fn feature_cov(x: &[f64]) -> (f64, bool) {
    let m = mean(x);
    if m.abs() < 1e-12 {
        (0.0, true)
    } else {
        (feature_var(x).sqrt() / m.abs(), false)
    }
}

/// Sample excess kurtosis `m4 / m2² − 3`. A constant window has no
/// shape to describe; it reports 0 rather than 0/0.
fn feature_kurt(x: &[f64]) -> f64 {
    let m = mean(x);
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    if m2 > 0.0 {
        m4 / (m2 * m2) - 3.0
    } else {
        0.0
    }
}

fn feature_zc(x: &[f64], epsilon: f64) -> f64 {
    x.windows(2)
        .filter(|p| p[0] * p[1] < 0.0 && (p[0] - p[1]).abs() >= epsilon)
        .count() as f64
}

fn feature_ssc(x: &[f64], epsilon: f64) -> Result<f64> {
    if x.len() < 3 {
        return Err(PipelineError::argument(format!(
            "SSC needs at least 3 samples, got {}",
            x.len()
        )));
    }
    let mut count = 0usize;
    for i in 1..x.len() - 1 {
        let d_prev = x[i] - x[i - 1];
        let d_next = x[i] - x[i + 1];
        if d_prev * d_next > 0.0 && d_prev.abs().max(d_next.abs()) >= epsilon {
            count += 1;
        }
    }
    Ok(count as f64)
}

/// Mean of successive MAV differences over `segments` equal
/// sub-segments cut from the window start (any remainder is dropped,
/// mirroring the windowing convention).
fn feature_mavs(x: &[f64], segments: usize) -> Result<f64> {
    if segments < 2 {
        return Err(PipelineError::argument(format!(
            "MAVS needs at least 2 sub-segments, got {segments}"
        )));
    }
    let seg_len = x.len() / segments;
    if seg_len == 0 {
        return Err(PipelineError::argument(format!(
            "window of {} samples cannot hold {segments} sub-segments",
            x.len()
        )));
    }
    let mavs: Vec<f64> = (0..segments)
        .map(|j| feature_mav(&x[j * seg_len..(j + 1) * seg_len]))
        .collect();
    Ok(mavs.windows(2).map(|p| p[1] - p[0]).sum::<f64>() / (segments - 1) as f64)
}

/// Computes one time-domain scalar feature by name (case-insensitive):
/// MAV, IAV, RMS, WL, VAR, CoV, KURT, ZC, SSC, or MAVS. AR, MNP, MNF,
/// and mDWT are multi-step procedures with their own entry points
/// ([`compute_ar_coefficients`], [`compute_spectral_features`],
/// [`compute_mdwt`]) and are rejected here.
pub fn compute_scalar_feature(name: &str, x: &[f64], params: &FeatureParams) -> Result<f64> {
    validate_window_input(x)?;
    match name.to_ascii_lowercase().as_str() {
        "mav" => Ok(feature_mav(x)),
        "iav" => Ok(feature_iav(x)),
        "rms" => Ok(feature_rms(x)),
        "wl" => Ok(feature_wl(x)),
        "var" => Ok(feature_var(x)),
        "cov" => Ok(feature_cov(x).0),
        "kurt" => Ok(feature_kurt(x)),
        "zc" => Ok(feature_zc(x, params.epsilon)),
        "ssc" => feature_ssc(x, params.epsilon),
        "mavs" => feature_mavs(x, params.mavs_segments),
        "ar" | "mnp" | "mnf" | "mdwt" => Err(PipelineError::unsupported(format!(
            "{name} is not a plain scalar feature; call its dedicated operation"
        ))),
        _ => Err(PipelineError::unsupported(format!(
            "unknown feature name {name:?}"
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureDomain {
    Time,
    Frequency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureArity {
    /// One value per channel.
    Scalar,
    /// A fixed number of values per channel (AR coefficients, mDWT
    /// level marginals), each expanded into its own column family.
    MultiOutput(usize),
}

/// One feature in the registry: its canonical name, domain, output
/// arity, and numeric parameters (AR order, wavelet index, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub domain: FeatureDomain,
    pub arity: FeatureArity,
    pub parameters: BTreeMap<String, f64>,
}

impl FeatureDef {
    pub fn n_outputs(&self) -> usize {
        match self.arity {
            FeatureArity::Scalar => 1,
            FeatureArity::MultiOutput(m) => m,
        }
    }

    fn param(&self, key: &str, default: f64) -> f64 {
        self.parameters.get(key).copied().unwrap_or(default)
    }

    /// Lowercase column-name stems, one per output: `rms` for scalars,
    /// `ar1..ar4` for AR, `mdwt_l1..mdwt_l3` (coarsest level first) for
    /// mDWT.
    pub fn output_stems(&self) -> Vec<String> {
        let lower = self.name.to_ascii_lowercase();
        match self.arity {
            FeatureArity::Scalar => vec![lower],
            FeatureArity::MultiOutput(m) => (1..=m)
                .map(|j| {
                    if self.name == "mDWT" {
                        format!("{lower}_l{j}")
                    } else {
                        format!("{lower}{j}")
                    }
                })
                .collect(),
        }
    }
}

/// The ordered feature bank. Registry order fixes column order in the
/// [`FeatureTable`]; versions name the two shipped layouts so tables
/// carry their schema in provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRegistry {
    version: String,
    defs: Vec<FeatureDef>,
}

fn make_def(
    name: &str,
    domain: FeatureDomain,
    arity: FeatureArity,
    parameters: &[(&str, f64)],
) -> FeatureDef {
    FeatureDef {
        name: name.to_string(),
        domain,
        arity,
        parameters: parameters
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
    }
}

impl FeatureRegistry {
    /// The full bank: 12 scalar families, AR expanded to 4
    /// coefficients, and mDWT expanded to 3 level marginals, so each
    /// channel contributes 19 values, plus the 13 `_std` companions.
    pub fn full() -> Self {
        use FeatureArity::{MultiOutput, Scalar};
        use FeatureDomain::{Frequency, Time};
        FeatureRegistry {
            version: "full-v1".into(),
            defs: vec![
                make_def("RMS", Time, Scalar, &[]),
                make_def("MAV", Time, Scalar, &[]),
                make_def("IAV", Time, Scalar, &[]),
                make_def("WL", Time, Scalar, &[]),
                make_def("MAVS", Time, Scalar, &[("segments", 3.0)]),
                make_def("ZC", Time, Scalar, &[("epsilon", 0.0)]),
                make_def("SSC", Time, Scalar, &[("epsilon", 0.0)]),
                make_def("VAR", Time, Scalar, &[]),
                make_def("CoV", Time, Scalar, &[]),
                make_def("AR", Time, MultiOutput(4), &[("order", 4.0)]),
                make_def("KURT", Time, Scalar, &[]),
                make_def("MNP", Frequency, Scalar, &[]),
                make_def("MNF", Frequency, Scalar, &[]),
                make_def(
                    "mDWT",
                    Frequency,
                    MultiOutput(3),
                    &[("wavelet", 7.0), ("levels", 3.0)],
                ),
            ],
        }
    }

    /// The 26-attribute layout: every family is a single per-channel
    /// scalar. AR is dropped and mDWT collapses to the sum of its level
    /// marginals, leaving 13 base metrics whose 13 `_std` companions
    /// complete the 26.
    pub fn scalar_only() -> Self {
        let mut reg = FeatureRegistry::full();
        reg.version = "scalar-v1".into();
        reg.defs.retain(|d| d.name != "AR");
        for d in &mut reg.defs {
            if d.name == "mDWT" {
                d.arity = FeatureArity::Scalar;
            }
        }
        reg
    }

    /// Reconstructs a shipped registry from the version string stored
    /// in table provenance.
    pub fn by_version(version: &str) -> Result<Self> {
        match version {
            "full-v1" => Ok(FeatureRegistry::full()),
            "scalar-v1" => Ok(FeatureRegistry::scalar_only()),
            other => Err(PipelineError::version(format!(
                "unknown feature registry version {other:?}"
            ))),
        }
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn defs(&self) -> &[FeatureDef] {
        &self.defs
    }

    /// Lowercase names of the base metrics that get `_std` companions:
    /// every family except AR, in registry order.
    pub fn base_metric_names(&self) -> Vec<String> {
        self.defs
            .iter()
            .filter(|d| d.name != "AR")
            .map(|d| d.name.to_ascii_lowercase())
            .collect()
    }

    /// Full column layout for `n_channels` channels: for each family in
    /// registry order, each output stem fanned out as `<stem>_ch<k>`
    /// (k is 1-based), followed by the `_std` companions in base-metric
    /// order. Metadata columns are not included; [`FeatureTable`] owns
    /// those.
    pub fn column_names(&self, n_channels: usize) -> Vec<String> {
        let mut names = Vec::new();
        for def in &self.defs {
            for stem in def.output_stems() {
                for ch in 1..=n_channels {
                    names.push(format!("{stem}_ch{ch}"));
                }
            }
        }
        for base in self.base_metric_names() {
            names.push(format!("{base}_std"));
        }
        names
    }
}

/// Options for [`extract_feature_table`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractOptions {
    /// Whether rest runs (gesture 0) contribute windows. Defaults to
    /// true so the resting state is available as a class downstream;
    /// rest windows inherit the repetition of the preceding trial (the
    /// leading rest takes the following trial's).
    pub include_rest: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions { include_rest: true }
    }
}

/// Repetition tag for every run: trials keep their own, rest runs
/// borrow from the nearest preceding trial (or the following one when
/// the recording opens with rest).
fn tag_repetitions(runs: &[crate::dataset::LabelRun]) -> Vec<u8> {
    let mut tags = vec![0u8; runs.len()];
    let mut last = None;
    for (i, run) in runs.iter().enumerate() {
        if run.gesture != 0 {
            last = Some(run.repetition);
        }
        tags[i] = last.unwrap_or(0);
    }
    let mut next = None;
    for (i, run) in runs.iter().enumerate().rev() {
        if run.gesture != 0 {
            next = Some(run.repetition);
        } else if tags[i] == 0 {
            tags[i] = next.unwrap_or(0);
        }
    }
    tags
}

fn params_from_def(def: &FeatureDef) -> FeatureParams {
    FeatureParams {
        epsilon: def.param("epsilon", 0.0),
        mavs_segments: def.param("segments", 3.0).round() as usize,
    }
}

/// All feature values for one window, in registry column order, plus
/// the window's quality flags.
fn compute_window_row(
    registry: &FeatureRegistry,
    window: &[&[f64]],
    sample_rate_hz: f64,
) -> Result<(Vec<f64>, RowFlags)> {
    let n_channels = window.len();
    let defs = registry.defs();
    // values[def][output][channel], filled channel-by-channel.
    let mut values: Vec<Vec<Vec<f64>>> = defs
        .iter()
        .map(|d| vec![Vec::with_capacity(n_channels); d.n_outputs()])
        .collect();
    // Per-channel value of each base (non-AR) metric, for the `_std`
    // companions; mDWT contributes its total marginal.
    let mut base: Vec<Vec<f64>> = defs
        .iter()
        .filter(|d| d.name != "AR")
        .map(|_| Vec::with_capacity(n_channels))
        .collect();
    let mut flags = RowFlags::default();

    for (ci, w) in window.iter().enumerate() {
        let mut spectral: Option<SpectralFeatures> = None;
        let mut base_idx = 0usize;
        for (di, def) in defs.iter().enumerate() {
            let located =
                |e: PipelineError| e.with_context(format!("channel {} feature {}", ci + 1, def.name));
            match def.name.as_str() {
                "AR" => {
                    let order = def.param("order", 4.0).round() as usize;
                    let coeffs = compute_ar_coefficients(w, order).map_err(located)?;
                    for (j, &c) in coeffs.iter().enumerate() {
                        values[di][j].push(c);
                    }
                    continue; // AR has no `_std` companion.
                }
                "MNP" | "MNF" => {
                    if spectral.is_none() {
                        let sp = compute_spectral_features(w, sample_rate_hz).map_err(located)?;
                        flags.spectral_zero_power |= sp.zero_power;
                        spectral = Some(sp);
                    }
                    let sp = spectral.as_ref().unwrap();
                    let v = if def.name == "MNP" { sp.mnp } else { sp.mnf };
                    values[di][0].push(v);
                    base[base_idx].push(v);
                }
                "mDWT" => {
                    let wavelet = def.param("wavelet", 7.0).round() as usize;
                    let levels = def.param("levels", 3.0).round() as usize;
                    let marginals = compute_mdwt(w, wavelet, levels).map_err(located)?;
                    let total: f64 = marginals.iter().sum();
                    match def.arity {
                        FeatureArity::Scalar => values[di][0].push(total),
                        FeatureArity::MultiOutput(_) => {
                            for (j, &m) in marginals.iter().enumerate() {
                                values[di][j].push(m);
                            }
                        }
                    }
                    base[base_idx].push(total);
                }
                "CoV" => {
                    validate_window_input(w).map_err(located)?;
                    let (v, degenerate) = feature_cov(w);
                    flags.cov_degenerate |= degenerate;
                    values[di][0].push(v);
                    base[base_idx].push(v);
                }
                name => {
                    let v = compute_scalar_feature(name, w, &params_from_def(def))
                        .map_err(located)?;
                    values[di][0].push(v);
                    base[base_idx].push(v);
                }
            }
            base_idx += 1;
        }
    }

    let n_columns: usize =
        defs.iter().map(|d| d.n_outputs() * n_channels).sum::<usize>() + base.len();
    let mut row = Vec::with_capacity(n_columns);
    for per_output in &values {
        for per_channel in per_output {
            row.extend_from_slice(per_channel);
        }
    }
    for per_channel in &base {
        let m = mean(per_channel);
        let var = per_channel.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
            / per_channel.len() as f64;
        row.push(var.sqrt());
    }
    Ok((row, flags))
}

type RecordingRows = (Vec<Vec<f64>>, Vec<RowMeta>, Vec<RowFlags>);

fn extract_recording(
    rec: &EmgRecording,
    registry: &FeatureRegistry,
    spec: &WindowSpec,
    options: &ExtractOptions,
) -> Result<RecordingRows> {
    let ws = spec.window_samples(rec.sample_rate_hz())?;
    let runs = label_runs(rec);
    let reps = tag_repetitions(&runs);
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    let mut flags = Vec::new();
    // Window index is a running counter over the rows this recording
    // emits, so rows stay unique even though many rest runs share a
    // (gesture 0, repetition) pair.
    let mut window_index = 0usize;
    for (run, &rep) in runs.iter().zip(&reps) {
        if run.gesture == 0 && !options.include_rest {
            continue;
        }
        for w in 0..run.len / ws {
            let start = run.start + w * ws;
            let slices: Vec<&[f64]> = (0..rec.n_channels())
                .map(|c| &rec.channel(c)[start..start + ws])
                .collect();
            let (row, row_flags) = compute_window_row(registry, &slices, rec.sample_rate_hz())
                .map_err(|e| {
                    e.with_context(format!(
                        "subject {} gesture {} rep {} window {}",
                        rec.subject_id(),
                        run.gesture,
                        rep,
                        window_index
                    ))
                })?;
            rows.push(row);
            meta.push(RowMeta {
                subject: rec.subject_id(),
                gesture: run.gesture,
                repetition: rep,
                window_index,
            });
            flags.push(row_flags);
            window_index += 1;
        }
    }
    Ok((rows, meta, flags))
}

/// Extracts the feature table for a set of recordings: every window of
/// every included run yields one row with the registry's full column
/// layout. Recordings are processed in parallel and merged in input
/// order, so the result is deterministic. Any feature failure aborts
/// extraction with a diagnostic naming the subject, gesture,
/// repetition, window, channel, and feature.
pub fn extract_feature_table(
    recordings: &[EmgRecording],
    registry: &FeatureRegistry,
    spec: &WindowSpec,
    options: &ExtractOptions,
) -> Result<FeatureTable> {
    if recordings.is_empty() {
        return Err(PipelineError::argument(
            "feature extraction needs at least one recording",
        ));
    }
    let n_channels = recordings[0].n_channels();
    for rec in recordings {
        if rec.n_channels() != n_channels {
            return Err(PipelineError::validation(format!(
                "recordings disagree on channel count: subject {} has {}, subject {} has {}",
                recordings[0].subject_id(),
                n_channels,
                rec.subject_id(),
                rec.n_channels()
            )));
        }
    }
    let per_recording =
        parallel::try_map_slice(recordings, |rec| extract_recording(rec, registry, spec, options))?;
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    let mut flags = Vec::new();
    for (r, m, f) in per_recording {
        rows.extend(r);
        meta.extend(m);
        flags.extend(f);
    }
    FeatureTable::new(
        registry.column_names(n_channels),
        rows,
        meta,
        flags,
        TableProvenance {
            registry_version: registry.version().to_string(),
            window_ms: spec.window_ms,
            preprocess_hash: None,
        },
    )
}
