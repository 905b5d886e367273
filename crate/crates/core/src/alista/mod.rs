//! Analytic unrolled ISTA: precomputed weights, learned per-layer scalars.

mod network;
mod train;
mod weights;

pub use network::{AlistaModel, AlistaSolver, LossKind, ParamGradient, ParamMode, TrainingMetadata};
pub use train::{initial_parameters, sweep_layers, train, GradientMode, Optimizer, TrainConfig};
pub use weights::{
    coherence_minimizing_weights, coherence_objective, constraint_violation, AnalyticWeights, MAX_CONDITION,
    WEIGHT_CONSTRAINT,
};
