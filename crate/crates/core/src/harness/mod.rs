//! Experiment drivers behind the command-line tool.

mod compare;
mod config;
mod evaluate;
mod train;
mod tune;

pub use compare::{compare, percent_reduction, write_comparison_csv, Comparison, ComparisonRow};
pub use config::{EvalConfig, ExperimentConfig, TrainConfig};
pub use evaluate::{
    check_seed_disjointness, evaluate, evaluate_workloads, mean_sd, run_episode, summarize,
    write_episode_csv, write_task_csv, EpisodeReport, PolicySpec, Summary,
};
pub use train::{final_quarter_reward, train, write_train_log, IterationLog, TrainOutcome};
pub use tune::{apply_overrides, tune, write_trial_csv, Trial, TuneGrid};
