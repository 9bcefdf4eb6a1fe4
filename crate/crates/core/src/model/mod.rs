//! Network description, execution, persistence and training.

pub mod network;
pub mod spec;
pub mod train;
pub mod weights;

pub use network::{
    init_network, ActivationTrace, Backward, BackwardOptions, LayerParams, Network, ParamGrads, Prediction,
    ReluGate,
};
pub use spec::{infer_shapes, Layer, LayerShape, NetworkSpec, DEFAULT_CLASS_NAMES};
pub use train::{
    confusion_from_predictions, evaluate, train, train_with_validation, EpochMetrics, Evaluation, Sample,
    TrainConfig,
};
pub use weights::{load_weights, load_weights_embedded, save_weights};
