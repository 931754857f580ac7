//! Single-hidden-layer perceptron: d → hidden (ReLU) → C (softmax),
//! cross-entropy loss, mini-batch adaptive-moment (Adam) updates.
//!
//! Inputs are standardized by per-feature mean/std fitted on the
//! training data and stored in the model, so prediction applies the
//! exact training-time transform. The hidden layer uses He-uniform
//! initialization from the seed; the output layer starts at zero,
//! which makes the initial softmax exactly uniform and the initial
//! loss exactly ln(C) on any data — a useful anchor the tests pin.
//!
//! Parameters live in one flat vector (w1, b1, w2, b2 in that order),
//! which keeps the Adam state and the finite-difference gradient check
//! shape-agnostic.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// MLP hyperparameters; the architecture is fixed at one ReLU hidden
/// layer with a softmax head, per-kind knobs only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden_units: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Early stop after this many epochs without validation-loss
    /// improvement; only active when a validation split is supplied.
    pub early_stop_patience: Option<usize>,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden_units: 64,
            epochs: 200,
            batch_size: 32,
            learning_rate: 0.01,
            early_stop_patience: None,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(PipelineError::config(
                "hidden_units, epochs, and batch_size must all be positive",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PipelineError::config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.early_stop_patience == Some(0) {
            return Err(PipelineError::config(
                "early_stop_patience must be at least 1 when set",
            ));
        }
        Ok(())
    }
}

/// A trained (or freshly initialized) network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub n_features: usize,
    pub hidden_units: usize,
    pub classes: Vec<u8>,
    /// Flat parameter vector: w1 (H×d row-major), b1 (H), w2 (C×H
    /// row-major), b2 (C).
    pub params: Vec<f64>,
    /// Standardization fitted on the training inputs.
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Mean training cross-entropy per completed epoch.
    pub loss_history: Vec<f64>,
}

impl MlpModel {
    /// Fresh network: He-uniform hidden weights from `seed`, zero
    /// hidden biases, zero output layer (uniform initial softmax).
    pub fn initialize(
        n_features: usize,
        hidden_units: usize,
        classes: Vec<u8>,
        means: Vec<f64>,
        stds: Vec<f64>,
        seed: u64,
    ) -> Self {
        let c = classes.len();
        let mut params = vec![0.0; hidden_units * n_features + hidden_units + c * hidden_units + c];
        let limit = (6.0 / n_features as f64).sqrt();
        let mut rng = rng_from_seed(derive_seed(seed, "mlp-init"));
        for w in params.iter_mut().take(hidden_units * n_features) {
            *w = rng.gen_range(-limit..limit);
        }
        Self {
            n_features,
            hidden_units,
            classes,
            params,
            means,
            stds,
            loss_history: Vec::new(),
        }
    }

    fn n_params(&self) -> usize {
        self.params.len()
    }

    fn off_b1(&self) -> usize {
        self.hidden_units * self.n_features
    }

    fn off_w2(&self) -> usize {
        self.off_b1() + self.hidden_units
    }

    fn off_b2(&self) -> usize {
        self.off_w2() + self.classes.len() * self.hidden_units
    }

    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Forward pass on a standardized row: pre-activations, hidden
    /// activations, and softmax probabilities.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = self.hidden_units;
        let d = self.n_features;
        let c = self.classes.len();
        let (b1, w2, b2) = (self.off_b1(), self.off_w2(), self.off_b2());

        let mut z1 = vec![0.0; h];
        for i in 0..h {
            let row = &self.params[i * d..(i + 1) * d];
            z1[i] = self.params[b1 + i]
                + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();

        let mut z2 = vec![0.0; c];
        for k in 0..c {
            let row = &self.params[w2 + k * h..w2 + (k + 1) * h];
            z2[k] = self.params[b2 + k]
                + row.iter().zip(&a1).map(|(w, v)| w * v).sum::<f64>();
        }
        let max = z2.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps: Vec<f64> = z2.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let p: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
        (z1, a1, p)
    }

    /// Softmax probabilities for raw (unstandardized) rows.
    pub fn probabilities(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .map(|row| {
                if row.len() != self.n_features {
                    return Err(PipelineError::argument(format!(
                        "expected {} features, got {}",
                        self.n_features,
                        row.len()
                    )));
                }
                Ok(self.forward(&self.standardize(row)).2)
            })
            .collect()
    }

    /// Mean cross-entropy over standardized rows with class indices.
    fn loss_std(&self, xs: &[Vec<f64>], y_idx: &[usize]) -> f64 {
        let mut total = 0.0;
        for (x, &yi) in xs.iter().zip(y_idx) {
            let (_, _, p) = self.forward(x);
            total -= p[yi].ln();
        }
        total / xs.len() as f64
    }

    /// Mean cross-entropy loss on raw rows and labels.
    pub fn loss(&self, rows: &[Vec<f64>], labels: &[u8]) -> Result<f64> {
        let (xs, y_idx) = self.prepare(rows, labels)?;
        Ok(self.loss_std(&xs, &y_idx))
    }

    fn prepare(&self, rows: &[Vec<f64>], labels: &[u8]) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        if rows.is_empty() || rows.len() != labels.len() {
            return Err(PipelineError::argument(
                "need matching nonempty rows and labels",
            ));
        }
        let y_idx: Vec<usize> = labels
            .iter()
            .map(|l| {
                self.classes.binary_search(l).map_err(|_| {
                    PipelineError::argument(format!("label {l} not in model class list"))
                })
            })
            .collect::<Result<_>>()?;
        let xs: Vec<Vec<f64>> = rows.iter().map(|r| self.standardize(r)).collect();
        Ok((xs, y_idx))
    }

    /// Backpropagated gradient of the mean cross-entropy over a batch
    /// of standardized rows; same layout as `params`.
    fn grad_std(&self, xs: &[Vec<f64>], y_idx: &[usize]) -> (f64, Vec<f64>) {
        let h = self.hidden_units;
        let d = self.n_features;
        let c = self.classes.len();
        let (ob1, ow2, ob2) = (self.off_b1(), self.off_w2(), self.off_b2());
        let batch = xs.len() as f64;

        let mut grad = vec![0.0; self.n_params()];
        let mut total_loss = 0.0;
        for (x, &yi) in xs.iter().zip(y_idx) {
            let (z1, a1, p) = self.forward(x);
            total_loss -= p[yi].ln();

            // dL/dz2 = (p − onehot)/B
            let dz2: Vec<f64> = (0..c)
                .map(|k| (p[k] - if k == yi { 1.0 } else { 0.0 }) / batch)
                .collect();
            for k in 0..c {
                grad[ob2 + k] += dz2[k];
                for i in 0..h {
                    grad[ow2 + k * h + i] += dz2[k] * a1[i];
                }
            }
            for i in 0..h {
                if z1[i] > 0.0 {
                    let da: f64 = (0..c).map(|k| self.params[ow2 + k * h + i] * dz2[k]).sum();
                    grad[ob1 + i] += da;
                    for (g, &xv) in grad[i * d..(i + 1) * d].iter_mut().zip(x) {
                        *g += da * xv;
                    }
                }
            }
        }
        (total_loss / batch, grad)
    }
}

/// Max relative error between backpropagated gradients and central
/// finite differences (step 1e-5) over every parameter of `model`,
/// evaluated on the given batch. Works at any weight setting, so it
/// can gate both fresh initializations and partially trained nets.
pub fn gradient_check(model: &MlpModel, rows: &[Vec<f64>], labels: &[u8]) -> Result<f64> {
    let (xs, y_idx) = model.prepare(rows, labels)?;
    let (_, grad) = model.grad_std(&xs, &y_idx);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for i in 0..model.n_params() {
        let original = probe.params[i];
        probe.params[i] = original + h;
        let plus = probe.loss_std(&xs, &y_idx);
        probe.params[i] = original - h;
        let minus = probe.loss_std(&xs, &y_idx);
        probe.params[i] = original;
        let fd = (plus - minus) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Trains the network. When `validation` is supplied and the config
/// sets a patience, training stops after that many epochs without
/// validation-loss improvement and the best-validation weights are
/// restored.
pub fn train_network(
    x: &[Vec<f64>],
    y: &[u8],
    params: &MlpParams,
    seed: u64,
    validation: Option<(&[Vec<f64>], &[u8])>,
) -> Result<MlpModel> {
    params.validate()?;
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(PipelineError::argument(
            "MLP needs at least 2 samples with matching labels",
        ));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(PipelineError::argument(
            "MLP needs a nonempty rectangular feature matrix",
        ));
    }
    if x.iter().flat_map(|r| r.iter()).any(|v| !v.is_finite()) {
        return Err(PipelineError::validation("MLP features must be finite"));
    }
    let mut classes: Vec<u8> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(PipelineError::argument("MLP needs at least 2 classes"));
    }

    // Standardization fitted on the training partition only.
    let mut means = vec![0.0; d];
    for row in x {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut stds = vec![0.0; d];
    for row in x {
        for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut stds {
        *s = (*s / n as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0; // constant feature: pass through centered zeros
        }
    }

    let mut model = MlpModel::initialize(
        d,
        params.hidden_units,
        classes,
        means,
        stds,
        seed,
    );
    let (xs, y_idx) = model.prepare(x, y)?;
    let val_prepared = validation
        .map(|(vx, vy)| model.prepare(vx, vy))
        .transpose()?;

    // Adam state.
    let mut m1 = vec![0.0; model.n_params()];
    let mut m2 = vec![0.0; model.n_params()];
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut t = 0u64;
    let lr = params.learning_rate;

    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng_from_seed(derive_seed(seed, "mlp-shuffle"));

    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Vec<f64>> = None;
    let mut stale = 0usize;

    for epoch in 0..params.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(params.batch_size) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<usize> = chunk.iter().map(|&i| y_idx[i]).collect();
            let (loss, grad) = model.grad_std(&bx, &by);
            if !loss.is_finite() {
                return Err(PipelineError::numerical(format!(
                    "training diverged at epoch {} with learning rate {lr}: non-finite loss",
                    epoch + 1
                )));
            }
            epoch_loss += loss * chunk.len() as f64;
            t += 1;
            let bc1 = 1.0 - beta1.powi(t as i32);
            let bc2 = 1.0 - beta2.powi(t as i32);
            for i in 0..model.params.len() {
                m1[i] = beta1 * m1[i] + (1.0 - beta1) * grad[i];
                m2[i] = beta2 * m2[i] + (1.0 - beta2) * grad[i] * grad[i];
                let mhat = m1[i] / bc1;
                let vhat = m2[i] / bc2;
                model.params[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        epoch_loss /= n as f64;
        if !epoch_loss.is_finite() {
            return Err(PipelineError::numerical(format!(
                "training diverged at epoch {} with learning rate {lr}: non-finite loss",
                epoch + 1
            )));
        }
        model.loss_history.push(epoch_loss);

        if let (Some((vxs, vy_idx)), Some(patience)) =
            (&val_prepared, params.early_stop_patience)
        {
            let val_loss = model.loss_std(vxs, vy_idx);
            if val_loss < best_val {
                best_val = val_loss;
                best_params = Some(model.params.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    if let Some(best) = best_params {
        model.params = best;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn blobs(
        seed: u64,
        n_per_class: usize,
        centers: &[(f64, f64)],
        sigma: f64,
    ) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..n_per_class {
                let dx: f64 = rng.sample(StandardNormal);
                let dy: f64 = rng.sample(StandardNormal);
                x.push(vec![cx + sigma * dx, cy + sigma * dy]);
                y.push(c as u8);
            }
        }
        (x, y)
    }

    fn hexagon_centers() -> Vec<(f64, f64)> {
        (0..6)
            .map(|k| {
                let a = k as f64 * std::f64::consts::PI / 3.0;
                (3.0 * a.cos(), 3.0 * a.sin())
            })
            .collect()
    }

    fn accuracy(model: &MlpModel, x: &[Vec<f64>], y: &[u8]) -> f64 {
        let probs = model.probabilities(x).unwrap();
        let mut hits = 0;
        for (p, &label) in probs.iter().zip(y) {
            let mut best = 0;
            for (c, &v) in p.iter().enumerate() {
                if v > p[best] {
                    best = c;
                }
            }
            if model.classes[best] == label {
                hits += 1;
            }
        }
        hits as f64 / y.len() as f64
    }

    #[test]
    fn initial_loss_is_exactly_ln_c() {
        // Zero output layer → uniform softmax on any input → loss
        // ln(C) regardless of the data or the hidden weights.
        for c in [2usize, 3, 6] {
            let classes: Vec<u8> = (0..c as u8).collect();
            let model = MlpModel::initialize(
                4,
                16,
                classes.clone(),
                vec![0.0; 4],
                vec![1.0; 4],
                11,
            );
            let mut rng = ChaCha8Rng::seed_from_u64(c as u64);
            let rows: Vec<Vec<f64>> = (0..30)
                .map(|_| (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let labels: Vec<u8> = (0..30).map(|i| (i % c) as u8).collect();
            let loss = model.loss(&rows, &labels).unwrap();
            assert!(
                (loss - (c as f64).ln()).abs() < 1e-12,
                "C={c}: loss {loss} vs ln C {}",
                (c as f64).ln()
            );
        }
    }

    #[test]
    fn gradient_check_passes_at_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let labels = vec![0u8, 1, 2, 0, 1];
        let model = MlpModel::initialize(
            3,
            8,
            vec![0, 1, 2],
            vec![0.0; 3],
            vec![1.0; 3],
            21,
        );
        let err = gradient_check(&model, &rows, &labels).unwrap();
        assert!(err < 1e-4, "gradient check error {err}");
    }

    #[test]
    fn gradient_check_passes_after_training_steps() {
        let (x, y) = blobs(31, 20, &[(0.0, 0.0), (2.0, 2.0), (0.0, 3.0)], 0.6);
        // 25 epochs × 2 batches of 30 ≈ 50 updates, then 50 more via a
        // smaller batch: well past 100 optimizer steps total.
        let params = MlpParams {
            hidden_units: 8,
            epochs: 50,
            batch_size: 30,
            learning_rate: 0.02,
            early_stop_patience: None,
        };
        let model = train_network(&x, &y, &params, 17, None).unwrap();
        assert_eq!(model.loss_history.len(), 50);
        let err = gradient_check(&model, &x[..12], &y[..12]).unwrap();
        assert!(err < 1e-4, "gradient check error after training {err}");
    }

    #[test]
    fn zero_output_layer_gradient_matches_the_closed_form() {
        // Identity hidden pass-through on nonnegative inputs: w1 = I,
        // b1 = 0 keeps a1 = x; w2 = 0 makes p uniform. The analytic
        // output-layer gradient is (p − onehot)·xᵀ/B.
        let d = 4;
        let c = 3;
        let classes: Vec<u8> = (0..c as u8).collect();
        let mut model = MlpModel::initialize(
            d,
            d,
            classes,
            vec![0.0; d],
            vec![1.0; d],
            1,
        );
        for v in model.params.iter_mut() {
            *v = 0.0;
        }
        for i in 0..d {
            model.params[i * d + i] = 1.0; // w1 = identity
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..d).map(|_| rng.gen_range(0.1..1.0)).collect())
            .collect();
        let labels = vec![0u8, 1, 2, 0, 1, 2];
        let (xs, y_idx) = model.prepare(&rows, &labels).unwrap();
        let (loss, grad) = model.grad_std(&xs, &y_idx);
        assert!((loss - (c as f64).ln()).abs() < 1e-12);

        let b = rows.len() as f64;
        let uniform = 1.0 / c as f64;
        let ow2 = model.off_w2();
        let ob2 = model.off_b2();
        for k in 0..c {
            let bias_expected: f64 = y_idx
                .iter()
                .map(|&yi| (uniform - if yi == k { 1.0 } else { 0.0 }) / b)
                .sum();
            assert!((grad[ob2 + k] - bias_expected).abs() < 1e-10);
            for i in 0..d {
                let expected: f64 = xs
                    .iter()
                    .zip(&y_idx)
                    .map(|(x, &yi)| {
                        (uniform - if yi == k { 1.0 } else { 0.0 }) * x[i] / b
                    })
                    .sum();
                let got = grad[ow2 + k * d + i];
                assert!(
                    (got - expected).abs() < 1e-10,
                    "w2[{k}][{i}]: {got} vs {expected}"
                );
            }
        }
        // Zero output weights pass no signal back: hidden grads are 0.
        for i in 0..model.off_w2() {
            assert_eq!(grad[i], 0.0, "hidden gradient {i} should be zero");
        }
    }

    #[test]
    fn xor_is_learnable_with_eight_hidden_units() {
        let x = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let y = vec![0u8, 1, 1, 0];
        let params = MlpParams {
            hidden_units: 8,
            epochs: 1500,
            batch_size: 4,
            learning_rate: 0.05,
            early_stop_patience: None,
        };
        let model = train_network(&x, &y, &params, 42, None).unwrap();
        assert_eq!(accuracy(&model, &x, &y), 1.0);
    }

    #[test]
    fn six_class_blobs_loss_decreases_smoothly() {
        let (x, y) = blobs(51, 50, &hexagon_centers(), 0.5);
        let params = MlpParams {
            hidden_units: 16,
            epochs: 120,
            batch_size: 32,
            learning_rate: 0.01,
            early_stop_patience: None,
        };
        let model = train_network(&x, &y, &params, 9, None).unwrap();
        let losses = &model.loss_history;
        assert_eq!(losses.len(), 120);
        // 10-epoch moving average is monotone nonincreasing.
        let smoothed: Vec<f64> = losses
            .windows(10)
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect();
        for pair in smoothed.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9,
                "smoothed loss rose: {} -> {}",
                pair[0],
                pair[1]
            );
        }
        assert!(accuracy(&model, &x, &y) > 0.95);
    }

    #[test]
    fn absurd_learning_rate_reports_divergence_with_epoch_and_rate() {
        let (x, y) = blobs(61, 30, &[(0.0, 0.0), (2.0, 2.0), (4.0, 0.0)], 0.5);
        let params = MlpParams {
            hidden_units: 8,
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e12,
            early_stop_patience: None,
        };
        let err = train_network(&x, &y, &params, 3, None).unwrap_err();
        assert!(matches!(err, PipelineError::Numerical(_)), "{err}");
        let msg = err.to_string();
        assert!(msg.contains("epoch"), "{msg}");
        assert!(msg.contains("learning rate 1000000000000"), "{msg}");
    }

    #[test]
    fn early_stopping_halts_and_restores_the_best_weights() {
        let (x, y) = blobs(71, 40, &[(0.0, 0.0), (3.0, 3.0)], 0.4);
        let (vx, mut vy) = blobs(72, 15, &[(0.0, 0.0), (3.0, 3.0)], 0.4);
        // One mislabeled validation point: once the clean points are
        // confidently separated its cross-entropy grows without bound,
        // so the validation loss has a genuine minimum mid-training.
        vy[0] = 1 - vy[0];
        let params = MlpParams {
            hidden_units: 8,
            epochs: 500,
            batch_size: 16,
            learning_rate: 0.05,
            early_stop_patience: Some(5),
        };
        let stopped = train_network(&x, &y, &params, 13, Some((&vx, &vy))).unwrap();
        assert!(
            stopped.loss_history.len() < 500,
            "early stopping never triggered ({} epochs)",
            stopped.loss_history.len()
        );

        let val_loss = |m: &MlpModel| -> f64 {
            let probs = m.probabilities(&vx).unwrap();
            let total: f64 = probs
                .iter()
                .zip(&vy)
                .map(|(p, &label)| {
                    let idx = m.classes.iter().position(|&c| c == label).unwrap();
                    -p[idx].max(1e-300).ln()
                })
                .sum();
            total / vx.len() as f64
        };
        // The returned weights are the best-epoch snapshot, not the
        // final ones: they beat the same run trained to completion.
        let full_params = MlpParams {
            early_stop_patience: None,
            ..params
        };
        let full = train_network(&x, &y, &full_params, 13, None).unwrap();
        assert!(
            val_loss(&stopped) < val_loss(&full),
            "snapshot {} vs final {}",
            val_loss(&stopped),
            val_loss(&full)
        );
        assert!(accuracy(&stopped, &vx, &vy) > 0.95);
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let (x, y) = blobs(81, 25, &[(0.0, 0.0), (2.0, 2.0)], 0.5);
        let params = MlpParams {
            hidden_units: 8,
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.02,
            early_stop_patience: None,
        };
        let a = train_network(&x, &y, &params, 55, None).unwrap();
        let b = train_network(&x, &y, &params, 55, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn input_contract_is_enforced() {
        let (x, y) = blobs(91, 10, &[(0.0, 0.0), (2.0, 2.0)], 0.5);
        let bad = MlpParams {
            learning_rate: -1.0,
            ..MlpParams::default()
        };
        assert!(train_network(&x, &y, &bad, 1, None).is_err());
        assert!(train_network(&x[..1], &y[..1], &MlpParams::default(), 1, None).is_err());
        let single: Vec<u8> = vec![0; x.len()];
        assert!(train_network(&x, &single, &MlpParams::default(), 1, None).is_err());
    }
}
