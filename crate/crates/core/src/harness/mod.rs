//! Synthetic tasks, stand-alone training and rank-correlation experiments.

mod rank;
mod task;
mod train;

pub use rank::{
    enumerate_variants, kendall_tau, rank_experiment, search_key, training_key, BaseCell,
    Comparison, ExperimentCache, ExperimentRecord, RankOutcome, RankPlan, MAX_BRUTE_FORCE,
};
pub use task::{generate_task, linear_probe, SignalPattern, SyntheticTask, TaskConfig};
pub use train::{evaluate, train_standalone, TrainConfig};
