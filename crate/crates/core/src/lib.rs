//! # emgpipe-core
//!
//! Library behind the `emgpipe` CLI: an end-to-end surface-EMG gesture
//! pipeline covering dataset ingestion (CSV / MATLAB v5 / synthetic),
//! signal conditioning (notch, Butterworth low-pass, analytic envelope,
//! per-channel normalization), windowed feature extraction, gesture
//! clustering under a Mahalanobis metric, hybrid feature selection
//! (mutual information + PCA + tree importances), from-scratch
//! classifiers (extra-trees, MLP, k-NN), and stratified cross-validated
//! evaluation.
//!
//! ## Determinism
//!
//! Every random decision derives from a single master seed through
//! labelled substreams ([`rng::derive_seed`]), generators are ChaCha8,
//! and the parallel maps in [`parallel`] collect in input order — so a
//! run is bit-reproducible across machines and thread counts, and
//! pipeline artifacts are byte-identical between reruns.
//!
//! ## Parallelism
//!
//! Data-parallel inner loops go through [`parallel`]; the `parallel`
//! feature (on by default) backs them with rayon, and disabling it
//! yields a dependency-light sequential build with identical output.

// `!(x > 0.0)` rejects NaN along with nonpositive values; the
// suggested `x <= 0.0` would wave NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// The numeric kernels index several parallel arrays per iteration;
// index loops read better there than zipped iterator chains.
#![allow(clippy::needless_range_loop)]

pub mod clustering;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod featsel;
pub mod hash;
pub mod linalg;
pub mod models;
pub mod parallel;
pub mod pipeline;
pub mod preprocess;
pub mod rng;

pub use error::{PipelineError, Result};
