//! Data ingestion, configuration files, run logs and plot-data export.

mod config;
mod data;
mod log;

pub use config::{config_keys, flat_config, parse_config, parse_config_with, render_config};
pub use data::{
    decode_record, encode_record, find_cifar10, load_cifar10, load_cifar10_with, parse_batch, stratified_subsample,
    synthetic_dataset, DatasetSplit, SyntheticSpec, CLASSES, FILE_BYTES, RECORDS_PER_FILE, RECORD_BYTES, TEST_FILE,
    TRAIN_FILES,
};
pub use log::{
    emit_plot_data, log_to_csv, read_metrics_log, read_summary, summary_path, write_metrics_log, RunLog, RunLogRow,
    RunSummary, LOG_COLUMNS, PLOT_SERIES,
};
