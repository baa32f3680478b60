//! Shallow SSE / SSB / Z3 classifiers with Adam training.

pub mod features;
pub mod model;
pub mod optim;
pub mod train;

pub use features::{FeatureCache, FeatureExtractor};
pub use model::{
    build_model, count_parameters, cross_entropy, loss, softmax, Model, ModelConfig, ModelKind, ParamLayout,
};
pub use optim::Adam;
pub use train::{
    confidence_interval, evaluate, train, write_metrics_csv, CachedDataset, MetricsRow, TrainConfig,
};
