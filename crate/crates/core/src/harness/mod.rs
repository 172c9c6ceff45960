//! Synthetic benchmark: data generation, encoder, training, retrieval
//! metrics, cross-class evaluation and experiment runs.

pub mod config;
pub mod data;
pub mod encoder;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod train;

pub use config::{DataConfig, ExperimentConfig, TestClasses};
pub use data::{generate_dataset, Dataset, SyntheticSpec};
pub use encoder::{encode_all, encode_batch_var, forward, EncoderParams};
pub use eval::{cross_class_eval, cross_class_trial, EvalConfig, EvalReport};
pub use experiment::{
    run_experiment, run_single, write_experiment, ExperimentSummary, PairedSummary, RunArtifacts, RunSummary,
};
pub use metrics::{average_precision_at, map_at_r, query_map_at_r, r_at_1, ranking, RetrievalScore};
pub use train::{loss_and_grads, train, train_from, ModelConfig, StepRecord, TrainConfig};
