//! Classifier training behind a shared train/predict contract, plus a
//! versioned binary model container.
//!
//! Four kinds plug into the same [`ModelArtifact`] shape: extra trees,
//! a one-hidden-layer MLP, k-nearest neighbors, and a single CART
//! tree. Artifacts carry the feature schema hash they were trained
//! on; [`predict`] refuses inputs whose schema hash differs, so a
//! model can never silently run on reordered or renamed columns.
//!
//! On disk a model is an `EMGM` container: magic, format version, a
//! JSON header (kind, schema hash, seed, classes), length-prefixed
//! named sections, and a trailing FNV-1a checksum over everything
//! before it. Serialization is byte-stable: saving the same artifact
//! twice produces identical files.

mod extra_trees;
mod knn;
mod mlp;

pub use extra_trees::{train_forest, EtNode, EtParams, EtTree, ExtraTreesModel};
pub use knn::{train_neighbors, KnnModel, KnnParams};
pub use mlp::{gradient_check, train_network, MlpModel, MlpParams};

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::featsel::{cart_train, CartModel, CartParams};
use crate::hash::{fnv1a64, fnv1a64_strings};

pub const MODEL_MAGIC: &[u8; 4] = b"EMGM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ExtraTrees,
    Mlp,
    Knn,
    Cart,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::ExtraTrees => "extra_trees",
            ModelKind::Mlp => "mlp",
            ModelKind::Knn => "knn",
            ModelKind::Cart => "cart",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "extra_trees" | "et" => Ok(ModelKind::ExtraTrees),
            "mlp" | "ann" => Ok(ModelKind::Mlp),
            "knn" => Ok(ModelKind::Knn),
            "cart" => Ok(ModelKind::Cart),
            other => Err(PipelineError::argument(format!(
                "unknown model kind {other:?}; expected et|extra_trees, mlp|ann, knn, or cart"
            ))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// All per-kind hyperparameters plus the mandatory master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    #[serde(default)]
    pub et: EtParams,
    #[serde(default)]
    pub mlp: MlpParams,
    #[serde(default)]
    pub knn: KnnParams,
    #[serde(default)]
    pub cart: CartParams,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            et: EtParams::default(),
            mlp: MlpParams::default(),
            knn: KnnParams::default(),
            cart: CartParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.et.validate()?;
        self.mlp.validate()?;
        self.knn.validate()?;
        if self.cart.min_leaf == 0 {
            return Err(PipelineError::config("cart min_leaf must be at least 1"));
        }
        Ok(())
    }
}

/// Learned state, one variant per kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelState {
    ExtraTrees(ExtraTreesModel),
    Mlp(MlpModel),
    Knn(KnnModel),
    Cart(CartModel),
}

/// A trained model with everything needed to apply or audit it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub kind: ModelKind,
    /// Hash of the feature schema (column names) the model was
    /// trained against; predict enforces it.
    pub schema_hash: String,
    pub seed: u64,
    pub classes: Vec<u8>,
    pub state: ModelState,
}

/// Canonical hash of a feature schema: FNV-1a over the column names.
pub fn feature_schema_hash(columns: &[String]) -> String {
    format!("{:016x}", fnv1a64_strings(columns))
}

pub fn train_extra_trees(
    x: &[Vec<f64>],
    y: &[u8],
    cfg: &TrainConfig,
    schema_hash: &str,
) -> Result<ModelArtifact> {
    let model = train_forest(x, y, &cfg.et, cfg.seed)?;
    Ok(ModelArtifact {
        kind: ModelKind::ExtraTrees,
        schema_hash: schema_hash.to_string(),
        seed: cfg.seed,
        classes: model.classes.clone(),
        state: ModelState::ExtraTrees(model),
    })
}

pub fn train_mlp(
    x: &[Vec<f64>],
    y: &[u8],
    cfg: &TrainConfig,
    schema_hash: &str,
    validation: Option<(&[Vec<f64>], &[u8])>,
) -> Result<ModelArtifact> {
    let model = train_network(x, y, &cfg.mlp, cfg.seed, validation)?;
    Ok(ModelArtifact {
        kind: ModelKind::Mlp,
        schema_hash: schema_hash.to_string(),
        seed: cfg.seed,
        classes: model.classes.clone(),
        state: ModelState::Mlp(model),
    })
}

pub fn train_knn(
    x: &[Vec<f64>],
    y: &[u8],
    cfg: &TrainConfig,
    schema_hash: &str,
) -> Result<ModelArtifact> {
    let model = train_neighbors(x, y, &cfg.knn)?;
    Ok(ModelArtifact {
        kind: ModelKind::Knn,
        schema_hash: schema_hash.to_string(),
        seed: cfg.seed,
        classes: model.classes.clone(),
        state: ModelState::Knn(model),
    })
}

pub fn train_cart_model(
    x: &[Vec<f64>],
    y: &[u8],
    cfg: &TrainConfig,
    schema_hash: &str,
) -> Result<ModelArtifact> {
    let model = cart_train(x, y, &cfg.cart)?;
    Ok(ModelArtifact {
        kind: ModelKind::Cart,
        schema_hash: schema_hash.to_string(),
        seed: cfg.seed,
        classes: model.classes.clone(),
        state: ModelState::Cart(model),
    })
}

/// Kind-dispatching trainer used by the CLI and the evaluation
/// harness; additional kinds plug in here behind the same contract.
pub fn train_model(
    kind: ModelKind,
    x: &[Vec<f64>],
    y: &[u8],
    cfg: &TrainConfig,
    schema_hash: &str,
    validation: Option<(&[Vec<f64>], &[u8])>,
) -> Result<ModelArtifact> {
    cfg.validate()?;
    match kind {
        ModelKind::ExtraTrees => train_extra_trees(x, y, cfg, schema_hash),
        ModelKind::Mlp => train_mlp(x, y, cfg, schema_hash, validation),
        ModelKind::Knn => train_knn(x, y, cfg, schema_hash),
        ModelKind::Cart => train_cart_model(x, y, cfg, schema_hash),
    }
}

/// Prediction output: hard labels plus the class-probability matrix
/// (columns aligned with the artifact's class list).
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: Vec<u8>,
    pub probabilities: Vec<Vec<f64>>,
}

/// Applies an artifact to rows carrying the given schema hash. The
/// label is the argmax class; exact probability ties resolve to the
/// lowest class id.
pub fn predict(artifact: &ModelArtifact, x: &[Vec<f64>], schema_hash: &str) -> Result<Prediction> {
    if artifact.schema_hash != schema_hash {
        return Err(PipelineError::schema(format!(
            "feature schema hash mismatch: model was trained on {}, input carries {}",
            artifact.schema_hash, schema_hash
        )));
    }
    let probabilities: Vec<Vec<f64>> = match &artifact.state {
        ModelState::ExtraTrees(m) => m.probabilities(x)?,
        ModelState::Mlp(m) => m.probabilities(x)?,
        ModelState::Knn(m) => m.probabilities(x)?,
        ModelState::Cart(m) => {
            let n_classes = artifact.classes.len();
            x.iter()
                .map(|row| {
                    let label = m.predict(row)?;
                    let idx = artifact
                        .classes
                        .iter()
                        .position(|&c| c == label)
                        .expect("predicted class in class list");
                    let mut p = vec![0.0; n_classes];
                    p[idx] = 1.0;
                    Ok(p)
                })
                .collect::<Result<_>>()?
        }
    };
    let labels: Vec<u8> = probabilities
        .iter()
        .map(|p| {
            let mut best = 0;
            for (c, &v) in p.iter().enumerate() {
                if v > p[best] {
                    best = c;
                }
            }
            artifact.classes[best]
        })
        .collect();
    Ok(Prediction {
        labels,
        probabilities,
    })
}

#[derive(Serialize, Deserialize)]
struct ContainerHeader {
    kind: ModelKind,
    schema_hash: String,
    seed: u64,
    classes: Vec<u8>,
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(PipelineError::corrupt(
                "model container truncated mid-record",
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn take_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Serializes an artifact into the `EMGM` container bytes.
pub fn model_to_bytes(artifact: &ModelArtifact) -> Result<Vec<u8>> {
    let header = ContainerHeader {
        kind: artifact.kind,
        schema_hash: artifact.schema_hash.clone(),
        seed: artifact.seed,
        classes: artifact.classes.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| PipelineError::format(format!("cannot encode model header: {e}")))?;
    let state_json = serde_json::to_vec(&artifact.state)
        .map_err(|e| PipelineError::format(format!("cannot encode model state: {e}")))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    push_u32(&mut buf, MODEL_FORMAT_VERSION);
    push_u64(&mut buf, header_json.len() as u64);
    buf.extend_from_slice(&header_json);
    push_u32(&mut buf, 1); // section count
    let name = b"state";
    push_u32(&mut buf, name.len() as u32);
    buf.extend_from_slice(name);
    push_u64(&mut buf, state_json.len() as u64);
    buf.extend_from_slice(&state_json);
    let checksum = fnv1a64(&buf);
    push_u64(&mut buf, checksum);
    Ok(buf)
}

/// Parses `EMGM` container bytes back into an artifact.
pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelArtifact> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MODEL_MAGIC {
        return Err(PipelineError::format(
            "not a model container: bad magic bytes",
        ));
    }
    let version = cur.take_u32()?;
    if version > MODEL_FORMAT_VERSION {
        return Err(PipelineError::version(format!(
            "model container version {version} is newer than supported {MODEL_FORMAT_VERSION}"
        )));
    }
    if bytes.len() < 12 {
        return Err(PipelineError::corrupt("model container truncated"));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(
        bytes[bytes.len() - 8..].try_into().expect("8 bytes"),
    );
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(PipelineError::corrupt(format!(
            "model container checksum mismatch: stored {stored:016x}, computed {computed:016x}"
        )));
    }

    let header_len = cur.take_u64()? as usize;
    let header: ContainerHeader = serde_json::from_slice(cur.take(header_len)?)
        .map_err(|e| PipelineError::format(format!("cannot decode model header: {e}")))?;
    let section_count = cur.take_u32()?;
    let mut state: Option<ModelState> = None;
    for _ in 0..section_count {
        let name_len = cur.take_u32()? as usize;
        let name = cur.take(name_len)?;
        let payload_len = cur.take_u64()? as usize;
        let payload = cur.take(payload_len)?;
        if name == b"state" {
            state = Some(serde_json::from_slice(payload).map_err(|e| {
                PipelineError::format(format!("cannot decode model state: {e}"))
            })?);
        }
    }
    let state = state.ok_or_else(|| {
        PipelineError::corrupt("model container has no state section")
    })?;
    let state_kind = match &state {
        ModelState::ExtraTrees(_) => ModelKind::ExtraTrees,
        ModelState::Mlp(_) => ModelKind::Mlp,
        ModelState::Knn(_) => ModelKind::Knn,
        ModelState::Cart(_) => ModelKind::Cart,
    };
    if state_kind != header.kind {
        return Err(PipelineError::corrupt(format!(
            "model container header says {} but the state section holds {}",
            header.kind, state_kind
        )));
    }
    Ok(ModelArtifact {
        kind: header.kind,
        schema_hash: header.schema_hash,
        seed: header.seed,
        classes: header.classes,
        state,
    })
}

pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(artifact)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    let bytes = std::fs::read(path)?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
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

    fn quick_config() -> TrainConfig {
        let mut cfg = TrainConfig::new(42);
        cfg.et.n_trees = 25;
        cfg.mlp.epochs = 60;
        cfg.mlp.hidden_units = 12;
        cfg.mlp.learning_rate = 0.05;
        cfg
    }

    #[test]
    fn every_kind_emits_probability_rows_summing_to_one() {
        let (x, y) = blobs(1, 30, &[(0.0, 0.0), (3.0, 3.0), (0.0, 4.0)], 0.6);
        let schema = feature_schema_hash(&["a".into(), "b".into()]);
        let (probe, _) = blobs(2, 10, &[(0.0, 0.0), (3.0, 3.0), (0.0, 4.0)], 0.9);
        for kind in [
            ModelKind::ExtraTrees,
            ModelKind::Mlp,
            ModelKind::Knn,
            ModelKind::Cart,
        ] {
            let artifact = train_model(kind, &x, &y, &quick_config(), &schema, None).unwrap();
            let pred = predict(&artifact, &probe, &schema).unwrap();
            assert_eq!(pred.labels.len(), probe.len());
            for row in &pred.probabilities {
                assert_eq!(row.len(), 3);
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9, "{kind}: row sum {sum}");
                assert!(row.iter().all(|&p| (0.0..=1.0 + 1e-12).contains(&p)));
            }
        }
    }

    #[test]
    fn schema_hash_mismatch_is_a_contract_error() {
        let (x, y) = blobs(3, 10, &[(0.0, 0.0), (2.0, 2.0)], 0.4);
        let schema = feature_schema_hash(&["rms_ch1".into(), "rms_ch2".into()]);
        let artifact =
            train_model(ModelKind::Knn, &x, &y, &quick_config(), &schema, None).unwrap();
        let other = feature_schema_hash(&["rms_ch2".into(), "rms_ch1".into()]);
        assert_ne!(schema, other, "hash must depend on column order");
        let err = predict(&artifact, &x, &other).unwrap_err();
        assert!(matches!(err, PipelineError::Schema(_)), "{err}");
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn extra_trees_trained_rows_get_probability_one_in_pure_leaves() {
        let (x, y) = blobs(4, 20, &[(0.0, 0.0), (4.0, 4.0)], 0.3);
        let schema = feature_schema_hash(&["a".into(), "b".into()]);
        let artifact = train_extra_trees(&x, &y, &quick_config(), &schema).unwrap();
        let pred = predict(&artifact, &x, &schema).unwrap();
        for (i, (&label, probs)) in y.iter().zip(&pred.probabilities).enumerate() {
            let idx = artifact.classes.iter().position(|&c| c == label).unwrap();
            assert_eq!(probs[idx], 1.0, "row {i}");
        }
    }

    #[test]
    fn prediction_is_pointwise_and_tie_breaks_to_the_lowest_class() {
        let (x, y) = blobs(5, 15, &[(0.0, 0.0), (3.0, 3.0)], 0.5);
        let schema = feature_schema_hash(&["a".into(), "b".into()]);
        let artifact =
            train_model(ModelKind::ExtraTrees, &x, &y, &quick_config(), &schema, None).unwrap();
        let (probe, _) = blobs(6, 12, &[(0.0, 0.0), (3.0, 3.0)], 1.0);
        let base = predict(&artifact, &probe, &schema).unwrap();
        let reversed: Vec<Vec<f64>> = probe.iter().rev().cloned().collect();
        let perm = predict(&artifact, &reversed, &schema).unwrap();
        let back: Vec<&[f64]> = perm.probabilities.iter().rev().map(|r| r.as_slice()).collect();
        for (a, b) in base.probabilities.iter().zip(back) {
            assert_eq!(a.as_slice(), b);
        }

        // Exactly tied probabilities resolve to the lowest class id.
        let tie = ModelArtifact {
            kind: ModelKind::Knn,
            schema_hash: schema.clone(),
            seed: 0,
            classes: vec![3, 7],
            state: ModelState::Knn(KnnModel {
                train_x: vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
                train_y_idx: vec![1, 0],
                classes: vec![3, 7],
                k: 2,
            }),
        };
        let pred = predict(&tie, &[vec![0.0, 0.0]], &schema).unwrap();
        assert_eq!(pred.probabilities[0], vec![0.5, 0.5]);
        assert_eq!(pred.labels[0], 3);
    }

    #[test]
    fn container_round_trip_is_byte_stable_and_prediction_preserving() {
        let (x, y) = blobs(7, 25, &[(0.0, 0.0), (2.5, 2.5), (5.0, 0.0)], 0.5);
        let schema = feature_schema_hash(&["a".into(), "b".into()]);
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let probe: Vec<Vec<f64>> = (0..100)
            .map(|_| vec![rng.gen_range(-1.0..6.0), rng.gen_range(-1.0..6.0)])
            .collect();
        for kind in [
            ModelKind::ExtraTrees,
            ModelKind::Mlp,
            ModelKind::Knn,
            ModelKind::Cart,
        ] {
            let artifact = train_model(kind, &x, &y, &quick_config(), &schema, None).unwrap();
            let path = dir.path().join(format!("{kind}.emgm"));
            save_model(&artifact, &path).unwrap();
            let again = dir.path().join(format!("{kind}-2.emgm"));
            save_model(&artifact, &again).unwrap();
            assert_eq!(
                std::fs::read(&path).unwrap(),
                std::fs::read(&again).unwrap(),
                "{kind}: serialization not byte-stable"
            );
            let loaded = load_model(&path).unwrap();
            assert_eq!(artifact, loaded);
            assert_eq!(
                predict(&artifact, &probe, &schema).unwrap(),
                predict(&loaded, &probe, &schema).unwrap()
            );
        }
    }

    #[test]
    fn future_version_and_corruption_are_distinct_errors() {
        let (x, y) = blobs(9, 10, &[(0.0, 0.0), (2.0, 2.0)], 0.4);
        let schema = feature_schema_hash(&["a".into(), "b".into()]);
        let artifact =
            train_model(ModelKind::Knn, &x, &y, &quick_config(), &schema, None).unwrap();
        let bytes = model_to_bytes(&artifact).unwrap();

        let mut future = bytes.clone();
        future[4] = 2; // bump the version field
        let err = model_from_bytes(&future).unwrap_err();
        assert!(matches!(err, PipelineError::Version(_)), "{err}");

        let mut corrupt = bytes.clone();
        let mid = corrupt.len() / 2;
        corrupt[mid] ^= 0xFF;
        let err = model_from_bytes(&corrupt).unwrap_err();
        assert!(matches!(err, PipelineError::Corrupt(_)), "{err}");

        let err = model_from_bytes(b"NOPE").unwrap_err();
        assert!(matches!(err, PipelineError::Format(_)), "{err}");
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in [
            ModelKind::ExtraTrees,
            ModelKind::Mlp,
            ModelKind::Knn,
            ModelKind::Cart,
        ] {
            assert_eq!(ModelKind::parse(kind.as_str()).unwrap(), kind);
        }
        assert_eq!(ModelKind::parse("et").unwrap(), ModelKind::ExtraTrees);
        assert_eq!(ModelKind::parse("ann").unwrap(), ModelKind::Mlp);
        assert!(ModelKind::parse("svm").is_err());
    }
}
