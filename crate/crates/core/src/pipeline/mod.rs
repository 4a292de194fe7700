//! Experiment harness: splits, training with model selection, metrics,
//! cross-validation, ablation sweeps, transfer and attention export.

mod data;
mod experiment;
mod explain;
mod metrics;
mod split;
mod train;

pub use data::{build_graph_records, load_graph_records, prepare_records};
pub use experiment::{
    ablation_cells, ablation_csv, ablation_sweep, cross_validate, fingerprint, transfer_evaluate,
    AblationAxes, AblationRow, CrossValidation, GnnAxis, MetricsReport, SplitResult, SplitRun,
    TransferReport,
};
pub use explain::{explain_clip, AttentionExport, FrameExport, NodeAttention};
pub use metrics::{auc_pairwise, auc_rank, mean, std_dev, ConfusionMatrix};
pub use split::{class_weights, stratified_split, Split};
pub use train::{evaluate, mean_loss, predict, train, EpochLog, EvalReport, TrainConfig, TrainOutcome};
