//! Extremely-randomized trees (Extra Trees) classifier.
//!
//! The classic scheme: every tree sees the full training sample (no
//! bootstrap), each node draws `k_features` random candidate features,
//! each candidate gets ONE uniform random threshold between the
//! feature's min and max over the node's samples, and the best Gini
//! decrease among those candidates wins. Trees grow until purity or
//! the leaf-size floor. Prediction averages the per-tree leaf class
//! distributions.
//!
//! Randomness is fully seeded: tree `i` runs on its own ChaCha stream
//! keyed by `derive_seed_indexed(seed, "et-tree", i)`, so forests are
//! reproducible node-by-node and tree growing can parallelize without
//! affecting the result.

use rand::seq::index::sample as index_sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::parallel;
use crate::rng::{derive_seed_indexed, rng_from_seed};

/// Extra Trees hyperparameters. `k_features: None` resolves to
/// ⌈√d⌉ at training time. `bootstrap` exists because resampling is a
/// named knob of the family, but the extremely-randomized scheme is
/// defined on the full sample, so only `false` is accepted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtParams {
    pub n_trees: usize,
    pub k_features: Option<usize>,
    pub min_leaf: usize,
    pub bootstrap: bool,
}

impl Default for EtParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            k_features: None,
            min_leaf: 1,
            bootstrap: false,
        }
    }
}

impl EtParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(PipelineError::config("n_trees must be at least 1"));
        }
        if self.min_leaf == 0 {
            return Err(PipelineError::config("min_leaf must be at least 1"));
        }
        if self.k_features == Some(0) {
            return Err(PipelineError::config(
                "k_features must be at least 1 when set",
            ));
        }
        if self.bootstrap {
            return Err(PipelineError::config(
                "the extremely-randomized scheme trains every tree on the \
                 full sample; bootstrap resampling is not supported",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EtNode {
    Leaf {
        /// Class distribution of the training samples in this leaf,
        /// aligned with the model's class list; sums to 1.
        dist: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtTree {
    pub nodes: Vec<EtNode>,
}

impl EtTree {
    fn leaf_dist<'a>(&'a self, row: &[f64]) -> &'a [f64] {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                EtNode::Leaf { dist } => return dist,
                EtNode::Split {
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
}

/// A trained forest. `classes` orders the probability outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtraTreesModel {
    pub trees: Vec<EtTree>,
    pub n_features: usize,
    pub classes: Vec<u8>,
    /// The feature-candidate count actually used (⌈√d⌉ when the
    /// config left it unset).
    pub k_features: usize,
    pub min_leaf: usize,
}

impl ExtraTreesModel {
    /// Mean of the per-tree leaf distributions; one row per input,
    /// aligned with `classes`.
    pub fn probabilities(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for row in rows {
            if row.len() != self.n_features {
                return Err(PipelineError::argument(format!(
                    "expected {} features, got {}",
                    self.n_features,
                    row.len()
                )));
            }
        }
        Ok(parallel::map_slice(rows, |row| {
            let mut acc = vec![0.0; self.classes.len()];
            for tree in &self.trees {
                for (a, &p) in acc.iter_mut().zip(tree.leaf_dist(row)) {
                    *a += p;
                }
            }
            let n = self.trees.len() as f64;
            for a in &mut acc {
                *a /= n;
            }
            acc
        }))
    }
}

fn gini_of(counts: &[usize], total: usize) -> f64 {
    let t = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p
        })
        .sum::<f64>()
}

fn build_tree(
    x: &[Vec<f64>],
    y_idx: &[usize],
    n_classes: usize,
    k_features: usize,
    min_leaf: usize,
    seed: u64,
) -> EtTree {
    let d = x[0].len();
    let mut rng = rng_from_seed(seed);
    let mut nodes: Vec<EtNode> = vec![EtNode::Leaf { dist: Vec::new() }];
    let mut stack: Vec<(usize, Vec<usize>)> = vec![(0, (0..x.len()).collect())];

    while let Some((slot, members)) = stack.pop() {
        let mut counts = vec![0usize; n_classes];
        for &i in &members {
            counts[y_idx[i]] += 1;
        }
        let node_gini = gini_of(&counts, members.len());

        let mut split = None;
        if node_gini > 0.0 && members.len() >= 2 * min_leaf {
            // One uniform threshold per sampled candidate feature;
            // the best Gini decrease among the candidates wins, first
            // drawn wins ties.
            let candidates = index_sample(&mut rng, d, k_features.min(d));
            let mut best_decrease = f64::NEG_INFINITY;
            for f in candidates {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &i in &members {
                    lo = lo.min(x[i][f]);
                    hi = hi.max(x[i][f]);
                }
                if !(lo < hi) {
                    continue; // constant on this node: nothing to draw
                }
                let threshold = rng.gen_range(lo..hi);
                let mut left = vec![0usize; n_classes];
                let mut nl = 0usize;
                for &i in &members {
                    if x[i][f] <= threshold {
                        left[y_idx[i]] += 1;
                        nl += 1;
                    }
                }
                let nr = members.len() - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let right: Vec<usize> = counts
                    .iter()
                    .zip(&left)
                    .map(|(&t, &l)| t - l)
                    .collect();
                let decrease = node_gini
                    - (nl as f64 * gini_of(&left, nl) + nr as f64 * gini_of(&right, nr))
                        / members.len() as f64;
                if decrease > best_decrease {
                    best_decrease = decrease;
                    split = Some((f, threshold));
                }
            }
        }

        match split {
            None => {
                // Pure, too small, or every candidate was constant:
                // leaf carrying the node's class distribution.
                let total = members.len() as f64;
                let dist: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
                nodes[slot] = EtNode::Leaf { dist };
            }
            Some((feature, threshold)) => {
                let (left_members, right_members): (Vec<usize>, Vec<usize>) =
                    members.iter().partition(|&&i| x[i][feature] <= threshold);
                let left = nodes.len();
                nodes.push(EtNode::Leaf { dist: Vec::new() });
                let right = nodes.len();
                nodes.push(EtNode::Leaf { dist: Vec::new() });
                nodes[slot] = EtNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                stack.push((right, right_members));
                stack.push((left, left_members));
            }
        }
    }
    EtTree { nodes }
}

/// Trains the forest. Single-class labels are accepted and produce a
/// forest of root leaves that predict that class with probability 1.
pub fn train_forest(
    x: &[Vec<f64>],
    y: &[u8],
    params: &EtParams,
    seed: u64,
) -> Result<ExtraTreesModel> {
    params.validate()?;
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(PipelineError::argument(
            "extra trees needs at least 2 samples with matching labels",
        ));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(PipelineError::argument(
            "extra trees needs a nonempty rectangular feature matrix",
        ));
    }
    if x.iter().flat_map(|r| r.iter()).any(|v| !v.is_finite()) {
        return Err(PipelineError::validation("extra trees features must be finite"));
    }

    let mut classes: Vec<u8> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let y_idx: Vec<usize> = y
        .iter()
        .map(|l| classes.binary_search(l).expect("label in class list"))
        .collect();

    let k_features = params
        .k_features
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d);

    let n_classes = classes.len();
    let min_leaf = params.min_leaf;
    let trees = parallel::map_range(params.n_trees, |i| {
        let tree_seed = derive_seed_indexed(seed, "et-tree", i as u64);
        build_tree(x, &y_idx, n_classes, k_features, min_leaf, tree_seed)
    });

    Ok(ExtraTreesModel {
        trees,
        n_features: d,
        classes,
        k_features,
        min_leaf,
    })
}
