//! Evaluation artifacts: score tables, per-image win counts and the
//! one-sided binomial test, rendered as Markdown, CSV or JSON.

mod report;
mod stats;

use std::path::PathBuf;

use thiserror::Error;

pub use report::{
    collect_runs, emit_report, load_pairs_csv, load_score_rows, load_win_table, render, Report, ReportFormat, WinRow,
};
pub use stats::{
    aggregate, binomial_one_sided, summarize, win_counts, AggregateRow, ComparisonPair, ScoreRow, Summary, WinSummary,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no scores to aggregate")]
    EmptyGroup,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown report format `{0}` (expected markdown, csv or json)")]
    UnknownFormat(String),
    #[error("cannot read {path}: {reason}")]
    Input { path: PathBuf, reason: String },
    #[error("cannot write {path}: {reason}")]
    Output { path: PathBuf, reason: String },
}
