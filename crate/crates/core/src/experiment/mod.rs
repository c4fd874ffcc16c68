//! Training runs, test metrics and the numerical studies behind them.

pub mod cond;
pub mod config;
pub mod equivalence;
pub mod init_demo;
pub mod metrics;
pub mod objective;
pub mod precision_exp;
pub mod report;
pub mod svg;
pub mod train;

pub use cond::{cond_report, condition_row, write_cond_csv, CondRow};
pub use config::{ExperimentConfig, Hyper, Preconditioning};
pub use equivalence::{band_width, equivalence_study, EquivalencePoint};
pub use init_demo::{init_demo, write_init_csv, InitDraw};
pub use metrics::{compute_mre_mse, sample_parameters, Evaluator, MetricsRecord};
pub use objective::{build_samples, network_for, LossPath, TrainingObjective};
pub use precision_exp::{median, precision_experiment, summarize, write_precision_csv, Draw, PrecisionRow, PrecisionSummary};
pub use report::{read_summaries, render_table, report, SummaryRow};
pub use train::{run_training, sci, write_outputs, RunReport};
