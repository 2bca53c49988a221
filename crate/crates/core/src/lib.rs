//! Unbounded-depth neural networks.
//!
//! An infinitely deep network posits an output head after every hidden
//! layer and treats the depth that generates the data as a latent
//! truncation. Inference uses a truncated-Poisson family over depths whose
//! members all have finite support, so the evidence lower bound only ever
//! touches finitely many layers. The training loop grows the network
//! lazily as that support expands.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod model;
pub mod poisson;
pub mod trainer;

pub use autodiff::{Graph, Optimizer, ParamId, ParamStore, Tensor, Var};
pub use datasets::{Dataset, SpiralConfig, SplitDataset, Targets};
pub use error::{Result, UdnError};
pub use model::{
    DenseGenerator, DepthMode, ElboBreakdown, LayerSpec, NetworkGenerator, OutputSpec, Prediction,
    TargetKind, VariationalState,
};
pub use poisson::{DepthPrior, TruncatedPoissonDist};
pub use trainer::{
    best_epoch_selection, evaluate, train, train_from, Checkpoint, LearningRate, Metrics, RunRecord, Task, TrainConfig, TrainData,
    TrainOutcome,
};
