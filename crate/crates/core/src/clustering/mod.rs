//! Gesture-level hierarchical clustering.
//!
//! Gestures are summarized by their per-feature mean vectors, compared
//! under the Mahalanobis distance induced by the pooled within-gesture
//! covariance, and agglomerated with complete linkage. Cutting the
//! dendrogram at `k` yields k gesture groups; each group nominates the
//! gesture with the highest mean RMS energy as its representative, and
//! the resting state (label 0) is always appended to the final list.
//!
//! Everything here is deterministic: linkage ties break
//! lexicographically on cluster ids, clusters are numbered by their
//! smallest member, and representative ties go to the smallest gesture
//! label.

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::features::FeatureTable;
use crate::linalg;
use crate::parallel;

/// Condition-number ceiling above which the pooled covariance gets a
/// ridge, escalated ×10 from `RIDGE_LAMBDA_START` until the matrix is
/// numerically SPD and well-conditioned.
const CONDITION_LIMIT: f64 = 1e8;
const RIDGE_LAMBDA_START: f64 = 1e-6;

/// Per-gesture feature summary: the mean over every window of that
/// gesture (pooled across subjects).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GestureSummary {
    pub gesture: u8,
    pub mean_vector: Vec<f64>,
    pub n_windows: usize,
}

/// Pooled within-gesture covariance, regularized until SPD, with its
/// Cholesky factor and inverse cached for distance evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledCovariance {
    matrix: Vec<f64>,
    d: usize,
    shrinkage_lambda: f64,
    chol: Vec<f64>,
    inverse: Vec<f64>,
}

impl PooledCovariance {
    /// Validates, regularizes, and factors a candidate covariance. The
    /// ridge unit is `trace/d` (mean variance), falling back to 1 when
    /// the matrix is all-zero — the degenerate identical-windows case,
    /// where only the ridge itself provides a scale.
    pub fn from_matrix(matrix: Vec<f64>, d: usize) -> Result<Self> {
        if matrix.len() != d * d || d == 0 {
            return Err(PipelineError::argument(format!(
                "covariance must be a nonempty d×d matrix, got length {} for d = {d}",
                matrix.len()
            )));
        }
        if let Some(bad) = matrix.iter().find(|v| !v.is_finite()) {
            return Err(PipelineError::validation(format!(
                "covariance contains a non-finite entry {bad}"
            )));
        }
        let scale = matrix.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        for i in 0..d {
            for j in (i + 1)..d {
                if (matrix[i * d + j] - matrix[j * d + i]).abs() > 1e-10 * scale {
                    return Err(PipelineError::validation(format!(
                        "covariance is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let trace: f64 = (0..d).map(|i| matrix[i * d + i]).sum();
        let unit = if trace > 0.0 { trace / d as f64 } else { 1.0 };

        let mut lambda = 0.0;
        for _ in 0..40 {
            let mut reg = matrix.clone();
            for i in 0..d {
                reg[i * d + i] += lambda * unit;
            }
            if linalg::sym_condition_number(&reg, d) < CONDITION_LIMIT {
                if let Some(chol) = linalg::cholesky(&reg, d) {
                    let inverse = linalg::spd_inverse_from_cholesky(&chol, d);
                    return Ok(PooledCovariance {
                        matrix: reg,
                        d,
                        shrinkage_lambda: lambda,
                        chol,
                        inverse,
                    });
                }
            }
            lambda = if lambda == 0.0 {
                RIDGE_LAMBDA_START
            } else {
                lambda * 10.0
            };
        }
        Err(PipelineError::numerical(
            "covariance could not be regularized to SPD within the ridge budget",
        ))
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// The regularized matrix actually used for distances.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn shrinkage_lambda(&self) -> f64 {
        self.shrinkage_lambda
    }

    pub fn inverse(&self) -> &[f64] {
        &self.inverse
    }
}

/// Gesture means and the pooled within-gesture covariance
/// `Σ_g Σ_w (x − x̄_g)(x − x̄_g)ᵀ / (N − G)` over the table's non-rest
/// rows. Rest (gesture 0) is excluded: clustering groups the gestures,
/// and the resting state rejoins at representative selection.
pub fn summarize_gestures(
    table: &FeatureTable,
) -> Result<(Vec<GestureSummary>, PooledCovariance)> {
    let d = table.n_features();
    let mut gestures: Vec<u8> = table
        .meta()
        .iter()
        .filter(|m| m.gesture != 0)
        .map(|m| m.gesture)
        .collect();
    gestures.sort_unstable();
    gestures.dedup();
    if gestures.is_empty() {
        return Err(PipelineError::argument(
            "table has no non-rest rows to summarize",
        ));
    }
    let groups: Vec<(u8, Vec<usize>)> = gestures
        .iter()
        .map(|&g| {
            let rows: Vec<usize> = (0..table.n_rows())
                .filter(|&i| table.meta()[i].gesture == g)
                .collect();
            (g, rows)
        })
        .collect();
    for (g, rows) in &groups {
        if rows.len() < 2 {
            return Err(PipelineError::degenerate(format!(
                "gesture {g} has {} window(s); covariance pooling needs at least 2",
                rows.len()
            )));
        }
    }

    // Per-gesture mean and scatter contribution, in parallel, then a
    // deterministic in-order reduction.
    let partials: Vec<(GestureSummary, Vec<f64>)> = parallel::map_slice(&groups, |(g, rows)| {
        let mut mean = vec![0.0; d];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(table.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= rows.len() as f64;
        }
        let mut scatter = vec![0.0; d * d];
        let mut diff = vec![0.0; d];
        for &r in rows {
            for (dst, (v, m)) in diff.iter_mut().zip(table.row(r).iter().zip(&mean)) {
                *dst = v - m;
            }
            for i in 0..d {
                let di = diff[i];
                for j in i..d {
                    scatter[i * d + j] += di * diff[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                scatter[i * d + j] = scatter[j * d + i];
            }
        }
        (
            GestureSummary {
                gesture: *g,
                mean_vector: mean,
                n_windows: rows.len(),
            },
            scatter,
        )
    });

    let n_total: usize = partials.iter().map(|(s, _)| s.n_windows).sum();
    let denom = (n_total - partials.len()) as f64;
    let mut pooled = vec![0.0; d * d];
    let mut summaries = Vec::with_capacity(partials.len());
    for (summary, scatter) in partials {
        for (p, s) in pooled.iter_mut().zip(&scatter) {
            *p += s;
        }
        summaries.push(summary);
    }
    for p in &mut pooled {
        *p /= denom;
    }
    let cov = PooledCovariance::from_matrix(pooled, d)?;
    Ok((summaries, cov))
}

/// `√((u−v)ᵀ Σ⁻¹ (u−v))` via the cached Cholesky factor.
pub fn mahalanobis_distance(u: &[f64], v: &[f64], cov: &PooledCovariance) -> Result<f64> {
    if u.len() != cov.d() || v.len() != cov.d() {
        return Err(PipelineError::argument(format!(
            "dimension mismatch: vectors of {} and {} against a {}-dim covariance",
            u.len(),
            v.len(),
            cov.d()
        )));
    }
    let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    let solved = linalg::cholesky_solve(&cov.chol, cov.d, &diff);
    let sq: f64 = diff.iter().zip(&solved).map(|(a, b)| a * b).sum();
    // Roundoff can push an exact zero a hair negative.
    Ok(sq.max(0.0).sqrt())
}

/// Pairwise Mahalanobis distances between gesture summaries, in
/// summary order. Rows are computed in parallel.
pub fn gesture_distance_matrix(
    summaries: &[GestureSummary],
    cov: &PooledCovariance,
) -> Result<Vec<Vec<f64>>> {
    let n = summaries.len();
    parallel::try_map_range(n, |i| {
        let mut row = vec![0.0; n];
        for j in 0..n {
            if j != i {
                row[j] =
                    mahalanobis_distance(&summaries[i].mean_vector, &summaries[j].mean_vector, cov)?;
            }
        }
        Ok(row)
    })
}

/// One agglomeration step: clusters `left_id` and `right_id`
/// (left < right) merge into `new_id` at the given complete-linkage
/// height.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub left_id: i64,
    pub right_id: i64,
    pub height: f64,
    pub new_id: i64,
}

/// The full agglomeration history. Leaf ids are the supplied labels
/// (gesture labels in the pipeline); internal ids continue upward from
/// the largest leaf id, one per merge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkageTree {
    pub leaves: Vec<i64>,
    pub steps: Vec<MergeStep>,
}

impl LinkageTree {
    /// GraphViz rendering of the dendrogram: leaves as boxes, internal
    /// nodes labeled with their merge height.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph dendrogram {\n  node [shape=box];\n");
        for leaf in &self.leaves {
            out.push_str(&format!("  g{leaf} [label=\"gesture {leaf}\"];\n"));
        }
        let node_name = |id: i64| {
            if self.leaves.contains(&id) {
                format!("g{id}")
            } else {
                format!("n{id}")
            }
        };
        for step in &self.steps {
            out.push_str(&format!(
                "  n{} [label=\"h={:.6}\", shape=ellipse];\n",
                step.new_id, step.height
            ));
            out.push_str(&format!(
                "  n{} -- {};\n  n{} -- {};\n",
                step.new_id,
                node_name(step.left_id),
                step.new_id,
                node_name(step.right_id)
            ));
        }
        out.push_str("}\n");
        out
    }
}

/// Complete-linkage agglomeration of a labeled distance matrix. At
/// each step the two active clusters with the smallest maximum
/// pairwise distance merge; ties break on the lexicographically
/// smallest `(left_id, right_id)`. Heights are nondecreasing (complete
/// linkage is monotone).
pub fn complete_linkage(dist: &[Vec<f64>], labels: &[i64]) -> Result<LinkageTree> {
    let n = dist.len();
    if n == 0 {
        return Err(PipelineError::argument("empty distance matrix"));
    }
    if labels.len() != n {
        return Err(PipelineError::argument(format!(
            "{} labels for a {n}×{n} distance matrix",
            labels.len()
        )));
    }
    {
        let mut sorted = labels.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != n {
            return Err(PipelineError::argument("leaf labels repeat"));
        }
    }
    for (i, row) in dist.iter().enumerate() {
        if row.len() != n {
            return Err(PipelineError::argument(format!(
                "distance matrix row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        if row[i] != 0.0 {
            return Err(PipelineError::argument(format!(
                "distance matrix diagonal at {i} is {}, expected 0",
                row[i]
            )));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(PipelineError::argument(format!(
                    "distance ({i},{j}) = {v} is not a finite non-negative number"
                )));
            }
            if (v - dist[j][i]).abs() > 1e-12 * v.abs().max(1.0) {
                return Err(PipelineError::argument(format!(
                    "distance matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }

    // Active clusters: id plus current complete-linkage distance to
    // every other active cluster (Lance–Williams max update).
    let mut ids: Vec<i64> = labels.to_vec();
    let mut d: Vec<Vec<f64>> = dist.to_vec();
    let mut active: Vec<bool> = vec![true; n];
    let mut next_id = labels.iter().copied().max().unwrap() + 1;
    let mut steps = Vec::with_capacity(n - 1);

    for _ in 1..n {
        // Find the minimal-distance active pair, tie-broken on ids.
        let mut best: Option<(f64, i64, i64, usize, usize)> = None;
        for i in 0..d.len() {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..d.len() {
                if !active[j] {
                    continue;
                }
                let (lo, hi, li, hi_idx) = if ids[i] <= ids[j] {
                    (ids[i], ids[j], i, j)
                } else {
                    (ids[j], ids[i], j, i)
                };
                let cand = (d[i][j], lo, hi, li, hi_idx);
                let better = match &best {
                    None => true,
                    Some((bd, bl, bh, _, _)) => {
                        (cand.0, cand.1, cand.2) < (*bd, *bl, *bh)
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (height, left_id, right_id, a, b) = best.expect("at least two active clusters");
        // Merge b into a's slot, keeping the maximum distance to every
        // other active cluster.
        for k in 0..d.len() {
            if active[k] && k != a && k != b {
                let m = d[a][k].max(d[b][k]);
                d[a][k] = m;
                d[k][a] = m;
            }
        }
        active[b] = false;
        ids[a] = next_id;
        steps.push(MergeStep {
            left_id,
            right_id,
            height,
            new_id: next_id,
        });
        next_id += 1;
    }

    Ok(LinkageTree {
        leaves: labels.to_vec(),
        steps,
    })
}

/// A k-cluster partition of the tree's leaves. Clusters are numbered
/// `1..=k` in order of their smallest member label; members are sorted
/// ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub clusters: Vec<Vec<i64>>,
}

impl ClusterAssignment {
    /// 1-based cluster label of a leaf, if present.
    pub fn cluster_of(&self, leaf: i64) -> Option<usize> {
        self.clusters
            .iter()
            .position(|c| c.contains(&leaf))
            .map(|i| i + 1)
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    /// `(leaf, cluster)` pairs sorted by leaf, ready for CSV export.
    pub fn pairs(&self) -> Vec<(i64, usize)> {
        let mut out: Vec<(i64, usize)> = self
            .clusters
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.iter().map(move |&leaf| (leaf, i + 1)))
            .collect();
        out.sort_unstable();
        out
    }
}

/// Cuts the dendrogram into `k` clusters by undoing the last `k−1`
/// merges.
pub fn cut_tree(tree: &LinkageTree, k: usize) -> Result<ClusterAssignment> {
    let n = tree.leaves.len();
    if k < 1 || k > n {
        return Err(PipelineError::argument(format!(
            "cannot cut a {n}-leaf tree into {k} clusters"
        )));
    }
    // Union-find over the first n−k merges.
    let mut parent: std::collections::HashMap<i64, i64> = std::collections::HashMap::new();
    for &leaf in &tree.leaves {
        parent.insert(leaf, leaf);
    }
    fn find(parent: &mut std::collections::HashMap<i64, i64>, x: i64) -> i64 {
        let p = parent[&x];
        if p == x {
            x
        } else {
            let root = find(parent, p);
            parent.insert(x, root);
            root
        }
    }
    for step in &tree.steps[..n - k] {
        let ra = find(&mut parent, step.left_id);
        let rb = find(&mut parent, step.right_id);
        parent.insert(ra, step.new_id);
        parent.insert(rb, step.new_id);
        parent.insert(step.new_id, step.new_id);
    }
    let mut groups: std::collections::HashMap<i64, Vec<i64>> = std::collections::HashMap::new();
    for &leaf in &tree.leaves {
        let root = find(&mut parent, leaf);
        groups.entry(root).or_default().push(leaf);
    }
    let mut clusters: Vec<Vec<i64>> = groups.into_values().collect();
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    debug_assert_eq!(clusters.len(), k);
    Ok(ClusterAssignment { clusters })
}

/// Per cluster, the member gesture with the highest RMS energy (mean
/// of every `rms_ch*` column over the gesture's windows); ties go to
/// the smaller label. Rest (label 0) is appended exactly once, so the
/// result has `k + 1` entries.
pub fn select_representatives(
    assignment: &ClusterAssignment,
    table: &FeatureTable,
) -> Result<Vec<u8>> {
    let rms_cols: Vec<usize> = table
        .feature_names()
        .iter()
        .enumerate()
        .filter(|(_, n)| {
            n.strip_prefix("rms_ch")
                .map(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
                .unwrap_or(false)
        })
        .map(|(i, _)| i)
        .collect();
    if rms_cols.is_empty() {
        return Err(PipelineError::lookup(
            "table has no rms_ch<k> columns; representative selection needs RMS energy",
        ));
    }
    let mut out = Vec::with_capacity(assignment.k() + 1);
    for (ci, cluster) in assignment.clusters.iter().enumerate() {
        if cluster.is_empty() {
            return Err(PipelineError::validation(format!(
                "cluster {} is empty — internal invariant broken",
                ci + 1
            )));
        }
        let mut best: Option<(f64, u8)> = None;
        for &leaf in cluster {
            let gesture = u8::try_from(leaf).map_err(|_| {
                PipelineError::argument(format!("cluster member {leaf} is not a gesture label"))
            })?;
            let mut sum = 0.0;
            let mut count = 0usize;
            for (i, m) in table.meta().iter().enumerate() {
                if m.gesture == gesture {
                    let row = table.row(i);
                    for &c in &rms_cols {
                        sum += row[c];
                    }
                    count += rms_cols.len();
                }
            }
            if count == 0 {
                return Err(PipelineError::lookup(format!(
                    "cluster member gesture {gesture} has no rows in the table"
                )));
            }
            let energy = sum / count as f64;
            let better = match best {
                None => true,
                Some((be, bg)) => energy > be || (energy == be && gesture < bg),
            };
            if better {
                best = Some((energy, gesture));
            }
        }
        out.push(best.expect("cluster verified non-empty").1);
    }
    if !out.contains(&0) {
        out.push(0);
    }
    Ok(out)
}

/// Everything one clustering run produces.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringOutcome {
    pub summaries: Vec<GestureSummary>,
    pub tree: LinkageTree,
    pub assignment: ClusterAssignment,
    pub representatives: Vec<u8>,
    pub shrinkage_lambda: f64,
}

/// The full §summary → distance → linkage → cut → representatives
/// pipeline over one feature table.
pub fn cluster_gestures(table: &FeatureTable, k: usize) -> Result<ClusteringOutcome> {
    let (summaries, cov) = summarize_gestures(table)?;
    let dist = gesture_distance_matrix(&summaries, &cov)?;
    let labels: Vec<i64> = summaries.iter().map(|s| s.gesture as i64).collect();
    let tree = complete_linkage(&dist, &labels)?;
    let assignment = cut_tree(&tree, k.min(labels.len()))?;
    let representatives = select_representatives(&assignment, table)?;
    Ok(ClusteringOutcome {
        summaries,
        tree,
        assignment,
        representatives,
        shrinkage_lambda: cov.shrinkage_lambda(),
    })
}
