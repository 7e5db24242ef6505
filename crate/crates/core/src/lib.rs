//! Tensor-train parameterized locality preserving projections.
//!
//! The crate learns a linear dimensionality reduction `t = Eᵀ vec(X)` whose
//! mapping matrix `E` is the left unfolding of a tensor-train chain of small
//! 3-order cores. Training minimises an unsquared (Frobenius norm) locality
//! preserving objective over a k-nearest-neighbour heat-kernel graph, using an
//! iteratively reweighted squared surrogate and alternating per-core solves on
//! Stiefel manifolds. Orthonormality of every core's left unfolding keeps the
//! whole mapping orthonormal.
//!
//! Module map:
//!
//! - [`tensor`]: dense n-order tensors, contraction, unfoldings, norms.
//! - [`ttmap`]: tensor-train cores and the chained mapping, plus its binary format.
//! - [`graph`]: kNN heat-kernel affinity, Laplacians and reweighting.
//! - [`stiefel`]: Riemannian gradient descent and eigen-based trace minimisation.
//! - [`trainer`]: partial chain contractions, per-core quadratic forms and the fitting loop.
//! - [`evalbench`]: PCA/LPP baselines, 1NN classification, metrics, noise and splits.
//! - [`io`]: dataset file formats (CSV, raw tensor binary, PGM directories).
//! - [`experiment`]: experiment specs and the seeded sweep runner.
//! - [`synth`]: synthetic benchmark generators.

pub mod error;
pub mod evalbench;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod stiefel;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod ttmap;

pub use error::{Error, Result};
pub use evalbench::{ConfusionMatrix, EvalReport, LabeledDataset, Metrics};
pub use graph::{AffinityGraph, ReweightedGraph};
pub use stiefel::{SolverSettings, StiefelPoint};
pub use tensor::DenseTensor;
pub use trainer::{fit, TrainConfig, TrainTrace};
pub use ttmap::{TtCore, TtMap};
