//! Experiment orchestration: datasets, the feature/reducer/budget grid,
//! MAL against random sampling, persisted reports and their summaries.

mod aggregate;
mod dataset;
mod experiment;

pub use aggregate::{aggregate, strategy_contrast, write_contrast_csv, write_summary_csv, ContrastRow, GroupKey, SummaryRow};
pub use dataset::{
    load_csv_dataset, read_labels_csv, synth_dataset, Arousal, CsvSource, Dataset, LabelMap, Quadrant, SynthSpec,
    Task, Valence, DEFAULT_LABELMAP, MIN_DATASET_ROWS,
};
pub use experiment::{
    budget_to_count, read_report, run_experiment, CellFailure, DatasetSource, ExperimentConfig, ExperimentReport,
    GridConfig, MetricChoice, ReportRecord, RunOptions, Strategy, REPORT_HEADER,
};
