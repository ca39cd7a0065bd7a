//! Metrics, reports and sweeps.

mod metrics;
mod report;
mod sweep;

pub use metrics::{accuracy_avg, emit_matrix, forgetting_avg, matrix_svg, PerformanceMatrix};
pub use report::{score_dump_csv, timing_csv, RunReport, TaskSummary, CONSISTENCY_TOL};
pub use sweep::{
    ablate, ablation_table, map_jobs, median, run_one, sweep_seeds, AblationRow, DataSource, Execution, SweepRun,
};
