//! Multi-domain networks: a shared CNN (A1), per-domain filter branches
//! (A2) and per-domain atom branches (A3), trained on a summed loss.

mod mmd;
mod network;
mod spec;
mod train;

pub use mmd::{
    median_bandwidths, median_pairwise_distance, mmd_loss, MmdValue, DEFAULT_BANDWIDTH_SCALES,
};
pub use network::{
    build_network, BlockInfo, ConvNode, Dense, ForwardCache, Network, Node, Output, Partition,
    PartitionCounts,
};
pub use spec::{Arch, LayerSpec, NetSpec, Resolved};
pub use train::{
    apply_grads, build_task, evaluate, evaluate_fused, fit, fused_feature, loss_and_grad,
    partition_grad, task_from_datasets, train_step, Batch, EpochRecord, Evaluation, FeatureRow, FeatureTable,
    FitSummary, Mode, StepMetrics, StepRecord, TaskData, TaskSpec, TrainConfig, EVAL_CHUNK,
    EVAL_MMD_SAMPLES,
};
