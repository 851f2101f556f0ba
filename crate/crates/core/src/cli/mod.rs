//! Command orchestration behind the `autohead` binary.
//!
//! A run directory holds everything one experiment produces:
//!
//! ```text
//! <out>/
//!   data/<problem>/{defect,no_defect}/*.png, manifest.json   (synthetic source)
//!   data/<problem>.split.json
//!   models/<problem>/<arch>.acnn, auto-classifier.model
//!   features/<problem>/<arch>.{train,val}.aftb
//!   reports/<problem>/cnn-<arch>.json, fusion.json, auto-classifier.json, timing.json
//!   reports/table1.{md,csv}, table2.{md,csv}, timing.md, bench.json
//!   leaderboards/<problem>.csv, <problem>.timing.csv
//!   manifest.json
//! ```
//!
//! Files that record wall-clock times (`timing.json`, `bench.json`,
//! `timing.md`, `*.timing.csv`) are the only ones that differ between two
//! runs of the same configuration.

mod commands;
mod config;
mod report;
mod run_dir;

pub use commands::{
    auto_model_path, bench, bench_problem, best_network, cmd_bench, cmd_fuse, cmd_gen_data, cmd_search_head,
    cmd_train_cnns, cnn_report_file, load_networks, load_problem, network_report, problem_names, AutoBench,
    AutoReport, BenchReport, CnnReport, FusionBench, FusionReport, NetworkBench, Problem, ProblemBench, ProblemTiming,
    Stats, AUTO_MODEL_FILE, AUTO_REPORT, FUSION_REPORT,
};
pub use config::{BenchConfig, DataConfig, DataSource, RunConfig, SearchSection, SplitConfig, TrainSection};
pub use report::{
    cmd_report, percent, render_csv, render_markdown, ExperimentReport, Metric, ProblemRow, AUTO_METHOD,
    FUSION_METHOD, TABLE1, TABLE2,
};
pub use run_dir::{is_timing_artifact, read_json, write_json, RunDir, RunManifest, BENCH_FILE, MANIFEST, TIMING_FILE};

use crate::error::Error;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_SEARCH: i32 = 4;

/// Process exit code for an error: 1 usage/config, 2 data, 3 training,
/// 4 search.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Training(_) | Error::AucUndefined(_) | Error::DegenerateWeights(_) => EXIT_TRAINING,
        Error::Search(_) => EXIT_SEARCH,
        Error::Shape(_) | Error::Validation(_) | Error::Data(_) | Error::Format(_) | Error::Io { .. } => EXIT_DATA,
    }
}

/// `error[<kind>]: <message>` on a single line.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("error[{}]: {msg}", e.kind())
}
