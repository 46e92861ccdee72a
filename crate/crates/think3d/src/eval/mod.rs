//! Benchmark evaluation: item loading, parallel episodes, reports.

pub mod bench;
pub mod run;

pub use bench::{load_benchmark, parse_benchmark, parse_question, BenchError, BenchmarkItem};
pub use run::{angle_histogram, run_eval, summarize, write_report, AngleBin, BackendFactory, EvalConfig, ItemResult, Report, Summary};
