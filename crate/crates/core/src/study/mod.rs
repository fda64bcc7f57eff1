//! Study matrix: per-dataset, combined-dataset and composed adapters evaluated on
//! every evaluation set, written as CSV and aligned-text tables.

mod config;
mod correlate;
mod enumerate;
mod runner;
mod table;

pub use config::{toy_train_config, FamilyConfig, SourceConfig, StudyConfig};
pub use correlate::{correlate, render_correlations, Correlation};
pub use enumerate::{enumerate_compositions, row_count, subset_label, subsets};
pub use runner::{
    build_host, eval_seed, family_ensemble, family_rows, gen_data, generate_family, load_family, multi_controls,
    multi_rows, run_dir, run_study, split_prompts, train, train_dataset, DataManifest, DatasetEntry, Evaluator,
    FamilyData, RowSpec, DATA_DIR, DATA_MANIFEST, MULTI_TABLE, OOD_SET, RUNS_DIR, TABLES_DIR,
};
pub use table::{mean_std, multi_columns, single_columns, ResultsTable, Stat, TableRow, KEY_COLUMNS, METRIC_SUFFIXES};
