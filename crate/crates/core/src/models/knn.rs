//! k-nearest-neighbors classifier over Euclidean distance.
//!
//! The "model" is the stored training set. Prediction takes the k
//! nearest training points (ties on distance break toward the lower
//! stored index, which makes prediction deterministic), votes by
//! majority, breaks vote ties by the smaller summed distance of the
//! tied classes' neighbors, and finally by the lowest class id.

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::parallel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 5 }
    }
}

impl KnnParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(PipelineError::config("k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub train_x: Vec<Vec<f64>>,
    pub train_y_idx: Vec<usize>,
    pub classes: Vec<u8>,
    pub k: usize,
}

impl KnnModel {
    /// Vote-fraction probabilities per class; each row sums to 1.
    pub fn probabilities(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let d = self.train_x[0].len();
        for row in rows {
            if row.len() != d {
                return Err(PipelineError::argument(format!(
                    "expected {d} features, got {}",
                    row.len()
                )));
            }
        }
        Ok(parallel::map_slice(rows, |row| self.vote(row).0))
    }

    /// Class probabilities plus the winning class index under the
    /// majority → summed-distance → lowest-id tie chain.
    pub(crate) fn vote(&self, row: &[f64]) -> (Vec<f64>, usize) {
        let mut dist: Vec<(f64, usize)> = self
            .train_x
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let d2: f64 = t.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2.sqrt(), i)
            })
            .collect();
        dist.sort_by(|a, b| {
            a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1))
        });
        let neighbors = &dist[..self.k];

        let n_classes = self.classes.len();
        let mut votes = vec![0usize; n_classes];
        let mut dist_sum = vec![0.0f64; n_classes];
        for &(d, i) in neighbors {
            let c = self.train_y_idx[i];
            votes[c] += 1;
            dist_sum[c] += d;
        }
        let mut best = 0usize;
        for c in 1..n_classes {
            let better = votes[c] > votes[best]
                || (votes[c] == votes[best] && votes[c] > 0 && dist_sum[c] < dist_sum[best]);
            // Equal votes and equal summed distance keep the lower
            // class id (the current `best`).
            if better {
                best = c;
            }
        }
        let probs: Vec<f64> = votes
            .iter()
            .map(|&v| v as f64 / self.k as f64)
            .collect();
        (probs, best)
    }
}

pub fn train_neighbors(x: &[Vec<f64>], y: &[u8], params: &KnnParams) -> Result<KnnModel> {
    params.validate()?;
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(PipelineError::argument(
            "KNN needs matching nonempty samples and labels",
        ));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(PipelineError::argument(
            "KNN needs a nonempty rectangular feature matrix",
        ));
    }
    if x.iter().flat_map(|r| r.iter()).any(|v| !v.is_finite()) {
        return Err(PipelineError::validation("KNN features must be finite"));
    }
    if params.k > n {
        return Err(PipelineError::argument(format!(
            "k = {} exceeds the {} training samples",
            params.k, n
        )));
    }
    let mut classes: Vec<u8> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let train_y_idx: Vec<usize> = y
        .iter()
        .map(|l| classes.binary_search(l).expect("label in class list"))
        .collect();
    Ok(KnnModel {
        train_x: x.to_vec(),
        train_y_idx,
        classes,
        k: params.k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_neighbor_memorizes_distinct_points() {
        let x = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ];
        let y = vec![0u8, 1, 2, 3];
        let model = train_neighbors(&x, &y, &KnnParams { k: 1 }).unwrap();
        for (row, &label) in x.iter().zip(&y) {
            let (_, winner) = model.vote(row);
            assert_eq!(model.classes[winner], label);
        }
    }

    #[test]
    fn equidistant_tie_goes_to_the_lowest_class_id() {
        // Two single-point classes at ±1; the origin is equidistant.
        let x = vec![vec![-1.0], vec![1.0]];
        let y = vec![7u8, 3];
        let model = train_neighbors(&x, &y, &KnnParams { k: 2 }).unwrap();
        let (probs, winner) = model.vote(&[0.0]);
        // classes sorted → [3, 7]; equal votes, equal distance sums.
        assert_eq!(model.classes[winner], 3);
        assert_eq!(probs, vec![0.5, 0.5]);
    }

    #[test]
    fn vote_ties_prefer_the_closer_class() {
        // k = 4: two neighbors per class, class 9's pair is closer.
        let x = vec![vec![0.9], vec![1.1], vec![3.0], vec![5.0]];
        let y = vec![9u8, 9, 2, 2];
        let model = train_neighbors(&x, &y, &KnnParams { k: 4 }).unwrap();
        let (_, winner) = model.vote(&[1.0]);
        assert_eq!(model.classes[winner], 9);
    }

    #[test]
    fn k_larger_than_n_is_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = vec![0u8, 1];
        assert!(train_neighbors(&x, &y, &KnnParams { k: 3 }).is_err());
        assert!(train_neighbors(&x, &y, &KnnParams { k: 0 }).is_err());
        assert!(train_neighbors(&[], &[], &KnnParams::default()).is_err());
    }

    #[test]
    fn probabilities_are_vote_fractions() {
        let x = vec![vec![0.0], vec![0.1], vec![0.2], vec![10.0], vec![10.1]];
        let y = vec![1u8, 1, 1, 2, 2];
        let model = train_neighbors(&x, &y, &KnnParams { k: 5 }).unwrap();
        let probs = model.probabilities(&[vec![0.05]]).unwrap();
        assert_eq!(probs[0], vec![0.6, 0.4]);
        let sum: f64 = probs[0].iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
