//! Single CART decision tree with Gini impurity and impurity-based
//! feature importances.
//!
//! The split search is exhaustive: every feature is scanned and every
//! midpoint between consecutive sorted unique values is a candidate
//! threshold. Ties on impurity decrease resolve to the lowest feature
//! index, then the lowest threshold, so training is deterministic. An
//! impure node splits even when the best decrease is exactly zero (the
//! canonical XOR arrangement needs one such split at the root before
//! the second level can separate the classes); the zero-gain split
//! simply contributes nothing to the importance of its feature.

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::parallel;

/// Tree-shape hyperparameters. `max_depth: None` grows until purity or
/// the leaf-size floor stops the recursion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

impl Default for CartParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_leaf: 1,
        }
    }
}

/// One node of the fitted tree, index-linked inside `CartModel::nodes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CartNode {
    Leaf {
        class: u8,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A fitted tree plus normalized Gini importances (one entry per input
/// feature; they sum to 1 when any split achieved a positive decrease,
/// and are all zero otherwise).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartModel {
    nodes: Vec<CartNode>,
    pub gini_importances: Vec<f64>,
    pub classes: Vec<u8>,
    n_features: usize,
}

impl CartModel {
    pub fn predict(&self, row: &[f64]) -> Result<u8> {
        if row.len() != self.n_features {
            return Err(PipelineError::argument(format!(
                "expected {} features, got {}",
                self.n_features,
                row.len()
            )));
        }
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                CartNode::Leaf { class } => return Ok(*class),
                CartNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn nodes(&self) -> &[CartNode] {
        &self.nodes
    }

    /// Depth of the deepest leaf; a lone root leaf has depth 0.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[CartNode], idx: usize) -> usize {
            match &nodes[idx] {
                CartNode::Leaf { .. } => 0,
                CartNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn accuracy(&self, rows: &[Vec<f64>], labels: &[u8]) -> Result<f64> {
        if rows.len() != labels.len() || rows.is_empty() {
            return Err(PipelineError::argument(
                "accuracy needs matching nonempty rows and labels",
            ));
        }
        let mut hits = 0usize;
        for (row, &label) in rows.iter().zip(labels) {
            if self.predict(row)? == label {
                hits += 1;
            }
        }
        Ok(hits as f64 / rows.len() as f64)
    }
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p
        })
        .sum::<f64>()
}

fn majority(counts: &[usize], classes: &[u8]) -> u8 {
    let mut best = 0usize;
    for (i, &c) in counts.iter().enumerate() {
        // Strict comparison keeps the smallest label on ties.
        if c > counts[best] {
            best = i;
        }
    }
    classes[best]
}

/// Best split of one feature over the node's samples: returns
/// `(impurity_decrease, threshold)` or `None` when the feature is
/// constant on the node or every candidate violates `min_leaf`.
fn best_split_for_feature(
    x: &[Vec<f64>],
    y_idx: &[usize],
    node: &[usize],
    feature: usize,
    n_classes: usize,
    parent_gini: f64,
    min_leaf: usize,
) -> Option<(f64, f64)> {
    let mut vals: Vec<(f64, usize)> = node
        .iter()
        .map(|&i| (x[i][feature], y_idx[i]))
        .collect();
    vals.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite feature values"));
    let n = vals.len();

    let mut left = vec![0usize; n_classes];
    let mut right = vec![0usize; n_classes];
    for &(_, c) in &vals {
        right[c] += 1;
    }

    let mut best: Option<(f64, f64)> = None;
    let mut moved = 0usize;
    let mut i = 0usize;
    while i < n {
        // Move the whole run of equal values to the left side so the
        // candidate threshold sits strictly between distinct values.
        let v = vals[i].0;
        while i < n && vals[i].0 == v {
            left[vals[i].1] += 1;
            right[vals[i].1] -= 1;
            moved += 1;
            i += 1;
        }
        if i == n {
            break; // no value remains on the right: not a split
        }
        let nl = moved;
        let nr = n - moved;
        if nl < min_leaf || nr < min_leaf {
            continue;
        }
        let threshold = (v + vals[i].0) / 2.0;
        let decrease = parent_gini
            - (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
        let better = match best {
            None => true,
            // Strict improvement only: ties keep the lowest threshold,
            // which is the earliest candidate in this ascending scan.
            Some((bd, _)) => decrease > bd,
        };
        if better {
            best = Some((decrease, threshold));
        }
    }
    best
}

/// Fits a CART classifier on `x` (row-major samples) with labels `y`.
pub fn cart_train(x: &[Vec<f64>], y: &[u8], params: &CartParams) -> Result<CartModel> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(PipelineError::argument(
            "CART needs matching nonempty samples and labels",
        ));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(PipelineError::argument(
            "CART needs a nonempty rectangular feature matrix",
        ));
    }
    if x.iter().flat_map(|r| r.iter()).any(|v| !v.is_finite()) {
        return Err(PipelineError::validation(
            "CART features must be finite",
        ));
    }
    if params.min_leaf == 0 {
        return Err(PipelineError::argument("min_leaf must be at least 1"));
    }

    let mut classes: Vec<u8> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let n_classes = classes.len();
    let y_idx: Vec<usize> = y
        .iter()
        .map(|l| classes.binary_search(l).expect("label in class list"))
        .collect();

    let mut nodes: Vec<CartNode> = Vec::new();
    let mut raw_importance = vec![0.0f64; d];

    // Explicit work stack of (node slot, member indices, depth).
    nodes.push(CartNode::Leaf { class: classes[0] });
    let mut stack: Vec<(usize, Vec<usize>, usize)> = vec![(0, (0..n).collect(), 0)];

    while let Some((slot, members, depth)) = stack.pop() {
        let mut counts = vec![0usize; n_classes];
        for &i in &members {
            counts[y_idx[i]] += 1;
        }
        let node_gini = gini(&counts, members.len());
        let depth_ok = params.max_depth.is_none_or(|m| depth < m);
        let size_ok = members.len() >= 2 * params.min_leaf;

        let mut split = None;
        if node_gini > 0.0 && depth_ok && size_ok {
            // Search features in parallel; the sequential reduction
            // below applies the (decrease, feature, threshold) tie
            // rule, so the result does not depend on scheduling.
            let per_feature = parallel::map_range(d, |f| {
                best_split_for_feature(
                    x,
                    &y_idx,
                    &members,
                    f,
                    n_classes,
                    node_gini,
                    params.min_leaf,
                )
            });
            for (f, cand) in per_feature.into_iter().enumerate() {
                if let Some((decrease, threshold)) = cand {
                    let better = match split {
                        None => true,
                        Some((bd, bf, bt)) => {
                            decrease > bd
                                || (decrease == bd && (f, threshold) < (bf, bt))
                        }
                    };
                    if better {
                        split = Some((decrease, f, threshold));
                    }
                }
            }
        }

        match split {
            None => {
                nodes[slot] = CartNode::Leaf {
                    class: majority(&counts, &classes),
                };
            }
            Some((decrease, feature, threshold)) => {
                raw_importance[feature] +=
                    members.len() as f64 / n as f64 * decrease;
                let (left_members, right_members): (Vec<usize>, Vec<usize>) = members
                    .iter()
                    .partition(|&&i| x[i][feature] <= threshold);
                let left = nodes.len();
                nodes.push(CartNode::Leaf { class: classes[0] });
                let right = nodes.len();
                nodes.push(CartNode::Leaf { class: classes[0] });
                nodes[slot] = CartNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                stack.push((right, right_members, depth + 1));
                stack.push((left, left_members, depth + 1));
            }
        }
    }

    let total: f64 = raw_importance.iter().sum();
    let gini_importances = if total > 0.0 {
        raw_importance.iter().map(|v| v / total).collect()
    } else {
        raw_importance
    };

    Ok(CartModel {
        nodes,
        gini_importances,
        classes,
        n_features: d,
    })
}
