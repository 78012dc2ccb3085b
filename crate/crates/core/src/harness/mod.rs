//! Experiment orchestration: run configs, the training loop, run logs on
//! disk, and cross-run comparison.

mod analysis;
mod config;
mod gradients;
mod train;

pub use analysis::{
    compare_runs, median, plot_density, ranks, spearman, window_means, Comparison, MetricsTable, RunLog,
    VariantSummary,
};
pub use gradients::{check_component_gradients, NetworkCheck};
pub use config::{EnvConfig, EnvName, RunConfig, Variant};
pub use train::{
    greedy_path, read_summary, sha256_hex, train, train_into, GreedyPath, MetricsRow, RunSummary, Trainer,
    UpdateOutput, CONFIG_FILE, DENSITY_FILE, EPISODES_FILE, HEATMAP_FILE, METRICS_FILE, REWARDS_FILE,
    SUCCESS_WINDOW, SUMMARY_FILE,
};
