//! Training, evaluation, experiments and the property suite behind `check`.

pub mod check;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod optim;
pub mod train;

pub use config::{Mode, RunConfig};
pub use experiment::{run_experiment, Report, SCHEMA_VERSION};
pub use metrics::{
    dis_table, evaluate_accuracy, group_graphons, mask_auc, roc_auc, DisTable, FeatureSource,
};
pub use optim::Adam;
pub use train::{train, MetricRecord, TrainOutcome};
