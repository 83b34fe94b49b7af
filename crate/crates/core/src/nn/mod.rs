//! Deterministic feed-forward engine: masked ReLU trunk, per-task heads,
//! softmax cross-entropy and gated SGD/Adam.

mod optim;
mod pass;
mod store;

pub use optim::{apply_update, OptimizerKind, OptimizerSpec, OptimizerState, ScoreGate, UpdatePlan, WeightGate};
pub use pass::{
    backward, backward_from_features, forward, forward_features, loss, softmax_cross_entropy, ForwardCache,
    ForwardOutput, GradientBundle, HeadGrad, LayerGrad,
};
pub use store::{Head, Layer, NetworkSpec, ScoredParamStore, TaskId};
