//! Configuration, training, evaluation, checkpoints, sweeps and reports.

mod adam;
mod checkpoint;
mod config;
mod eval;
mod report;
mod svg;
mod sweep;
mod train;

pub use adam::Adam;
pub use checkpoint::{ArrayEntry, Checkpoint, Manifest, OptimizerState, FORMAT_VERSION, MAGIC};
pub use config::{DataConfig, DataSource, RunConfig, SliceConfig, TrainConfig};
pub use eval::{evaluate, evaluate_example, summarize, EvalOptions, EvalReport, EvalRow, EvalSummary};
pub use train::{build_model, example_loss, load_dataset, load_split, train, train_on, Dataset, EpochLog, ExampleLoss, Split, TrainOutcome};
pub use report::{
    comparison_row, footer_rows, read_summary, summary_path, write_comparison, write_eval_report, write_train_outputs,
    ComparisonRow, CHECKPOINT_FILE, CONFIG_TOML, HISTORY_CSV, HISTORY_JSON, HISTORY_SVG,
    COMPARISON_CSV, COMPARISON_SVG, EXAMPLES_CSV, HISTOGRAM_CSV, HISTOGRAM_SVG, READ_RATIO_CSV, READ_RATIO_SVG,
    SUMMARY_JSON,
};
pub use svg::{bar_chart, line_chart, Series};
pub use sweep::{
    aggregate, cell_config, run_sweep, write_sweep, SweepCell, SweepResult, SweepRun, SweepSpec, SWEEP_CSV, SWEEP_JSON,
    SWEEP_RUNS_CSV, SWEEP_SVG,
};
