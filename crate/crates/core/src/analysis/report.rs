//! Report inputs and renderings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::stats::{aggregate, win_counts, AggregateRow, ComparisonPair, ScoreRow, WinSummary};
use super::AnalysisError;
use crate::engine::RunResult;
use crate::runstore::Manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(AnalysisError::UnknownFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRow {
    pub dataset: String,
    #[serde(default)]
    pub metric: String,
    pub wins_a: u64,
    pub wins_b: u64,
    #[serde(default)]
    pub ties: u64,
}

impl WinRow {
    pub fn summary(&self) -> WinSummary {
        WinSummary {
            wins_a: self.wins_a,
            wins_b: self.wins_b,
            ties: self.ties,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub scores: Vec<AggregateRow>,
    pub wins: Vec<WinRow>,
}

impl Report {
    pub fn from_scores(rows: &[ScoreRow]) -> Result<Self, AnalysisError> {
        Ok(Self {
            scores: aggregate(rows)?,
            wins: Vec::new(),
        })
    }

    /// Win counts per (dataset, metric) plus score summaries for both sides.
    pub fn from_pairs(pairs: &[ComparisonPair]) -> Result<Self, AnalysisError> {
        if pairs.is_empty() {
            return Err(AnalysisError::EmptyGroup);
        }
        let mut groups: BTreeMap<(&str, &str), Vec<&ComparisonPair>> = BTreeMap::new();
        let mut rows = Vec::with_capacity(pairs.len() * 2);
        for p in pairs {
            if !p.score_a.is_finite() || !p.score_b.is_finite() {
                return Err(AnalysisError::Domain(format!("non-finite score for image {}", p.image_id)));
            }
            groups.entry((&p.dataset, &p.metric)).or_default().push(p);
            for (method, score) in [("a", p.score_a), ("b", p.score_b)] {
                rows.push(ScoreRow {
                    dataset: p.dataset.clone(),
                    metric: p.metric.clone(),
                    method: method.to_string(),
                    score,
                });
            }
        }
        let wins = groups
            .into_iter()
            .map(|((dataset, metric), ps)| {
                let w = win_counts(ps);
                WinRow {
                    dataset: dataset.to_string(),
                    metric: metric.to_string(),
                    wins_a: w.wins_a,
                    wins_b: w.wins_b,
                    ties: w.ties,
                }
            })
            .collect();
        Ok(Self {
            scores: aggregate(&rows)?,
            wins,
        })
    }

    /// A precomputed per-dataset win table; row order is kept.
    pub fn from_win_table(rows: Vec<WinRow>) -> Result<Self, AnalysisError> {
        if rows.is_empty() {
            return Err(AnalysisError::EmptyGroup);
        }
        Ok(Self {
            scores: Vec::new(),
            wins: rows,
        })
    }

    pub fn total(&self) -> WinSummary {
        self.wins.iter().fold(WinSummary::default(), |acc, r| acc.add(&r.summary()))
    }
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> AnalysisError {
    AnalysisError::Input {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, AnalysisError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input_err(path, e))?;
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| input_err(path, e))
}

/// Pairs file with columns `image_id,dataset,metric,score_a,score_b`.
pub fn load_pairs_csv(path: &Path) -> Result<Vec<ComparisonPair>, AnalysisError> {
    read_csv(path)
}

/// Score rows from CSV with columns `dataset,metric,method,score`; other
/// columns are ignored.
pub fn load_score_rows(path: &Path) -> Result<Vec<ScoreRow>, AnalysisError> {
    read_csv(path)
}

/// Win table as JSON (array of rows) or CSV with columns
/// `dataset,metric,wins_a,wins_b,ties`; `metric` and `ties` are optional.
pub fn load_win_table(path: &Path) -> Result<Vec<WinRow>, AnalysisError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let bytes = fs::read(path).map_err(|e| input_err(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| input_err(path, e))
    } else {
        read_csv(path)
    }
}

fn run_dirs(path: &Path) -> Result<Vec<PathBuf>, AnalysisError> {
    if path.join("manifest.json").is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|e| input_err(path, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// One score row per completed run found under `paths`, each of which is a
/// run directory or a directory of runs. The score is the final best mean
/// fitness; the method is `<mode>-<guidance scorer>`.
pub fn collect_runs(paths: &[PathBuf]) -> Result<Vec<ScoreRow>, AnalysisError> {
    let mut rows = Vec::new();
    for root in paths {
        for dir in run_dirs(root)? {
            let result_path = dir.join("result.json");
            if !result_path.is_file() {
                log::warn!("skipping incomplete run {}", dir.display());
                continue;
            }
            let manifest_path = dir.join("manifest.json");
            let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path).map_err(|e| input_err(&manifest_path, e))?)
                .map_err(|e| input_err(&manifest_path, e))?;
            let result: RunResult = serde_json::from_slice(&fs::read(&result_path).map_err(|e| input_err(&result_path, e))?)
                .map_err(|e| input_err(&result_path, e))?;
            let fitness = result
                .best_individual
                .fitness
                .as_ref()
                .ok_or_else(|| input_err(&result_path, "best individual has no fitness"))?;
            let mode = serde_json::to_value(manifest.mode)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            rows.push(ScoreRow {
                dataset: manifest.dataset.clone().unwrap_or_else(|| "unlabeled".into()),
                metric: fitness.scorer_id.clone(),
                method: format!("{mode}-{}", manifest.config.engine.guidance_scorer),
                score: fitness.mean_score,
            });
        }
    }
    Ok(rows)
}

fn pref_cell(w: &WinSummary) -> String {
    w.preference_a().map_or("—".into(), |p| format!("{p:.1}"))
}

fn p_cell(w: &WinSummary) -> String {
    w.p_value().map_or("—".into(), |p| format!("{p:.4}"))
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn markdown(report: &Report) -> String {
    let mut out = String::from("# Report\n");
    if !report.scores.is_empty() {
        out.push_str("\n## Scores\n\n| dataset | metric | method | n | mean ± std |\n|---|---|---|---:|---:|\n");
        for r in &report.scores {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                r.dataset,
                r.metric,
                r.method,
                r.summary.n,
                r.summary.render()
            ));
        }
    }
    if !report.wins.is_empty() {
        out.push_str(
            "\n## Per-image wins\n\n| dataset | metric | A wins | B wins | ties | total | A preferred (%) | p (one-sided) |\n|---|---|---:|---:|---:|---:|---:|---:|\n",
        );
        let mut line = |label: &str, metric: &str, w: &WinSummary| {
            out.push_str(&format!(
                "| {label} | {metric} | {} | {} | {} | {} | {} | {} |\n",
                w.wins_a,
                w.wins_b,
                w.ties,
                w.total(),
                pref_cell(w),
                p_cell(w)
            ));
        };
        for r in &report.wins {
            line(&r.dataset, &r.metric, &r.summary());
        }
        line("**Total**", "", &report.total());
    }
    out
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn win_fields(label: &str, metric: &str, w: &WinSummary) -> Vec<String> {
    vec![
        label.to_string(),
        metric.to_string(),
        w.wins_a.to_string(),
        w.wins_b.to_string(),
        w.ties.to_string(),
        w.total().to_string(),
        opt_num(w.preference_a()),
        opt_num(w.p_value()),
    ]
}

fn win_json(label: &str, metric: &str, w: &WinSummary) -> Value {
    json!({
        "dataset": label,
        "metric": metric,
        "wins_a": w.wins_a,
        "wins_b": w.wins_b,
        "ties": w.ties,
        "total": w.total(),
        "preference_a_pct": w.preference_a(),
        "p_value": w.p_value(),
    })
}

/// File names and contents for `format`. Output is a pure function of the
/// report.
pub fn render(report: &Report, format: ReportFormat) -> Vec<(String, Vec<u8>)> {
    match format {
        ReportFormat::Markdown => vec![("report.md".into(), markdown(report).into_bytes())],
        ReportFormat::Csv => {
            let mut files = Vec::new();
            if !report.scores.is_empty() {
                let rows = report
                    .scores
                    .iter()
                    .map(|r| {
                        vec![
                            r.dataset.clone(),
                            r.metric.clone(),
                            r.method.clone(),
                            r.summary.n.to_string(),
                            r.summary.mean.to_string(),
                            opt_num(r.summary.std),
                        ]
                    })
                    .collect();
                files.push((
                    "scores.csv".into(),
                    csv_bytes(&["dataset", "metric", "method", "n", "mean", "std"], rows),
                ));
            }
            if !report.wins.is_empty() {
                let mut rows: Vec<Vec<String>> = report
                    .wins
                    .iter()
                    .map(|r| win_fields(&r.dataset, &r.metric, &r.summary()))
                    .collect();
                rows.push(win_fields("Total", "", &report.total()));
                files.push((
                    "wins.csv".into(),
                    csv_bytes(
                        &["dataset", "metric", "wins_a", "wins_b", "ties", "total", "preference_a_pct", "p_value"],
                        rows,
                    ),
                ));
            }
            files
        }
        ReportFormat::Json => {
            let scores: Vec<Value> = report
                .scores
                .iter()
                .map(|r| {
                    json!({
                        "dataset": r.dataset,
                        "metric": r.metric,
                        "method": r.method,
                        "n": r.summary.n,
                        "mean": r.summary.mean,
                        "std": r.summary.std,
                    })
                })
                .collect();
            let rows: Vec<Value> = report
                .wins
                .iter()
                .map(|r| win_json(&r.dataset, &r.metric, &r.summary()))
                .collect();
            let doc = json!({
                "scores": scores,
                "wins": {
                    "rows": rows,
                    "total": if report.wins.is_empty() { Value::Null } else { win_json("Total", "", &report.total()) },
                },
            });
            let mut bytes = serde_json::to_vec_pretty(&doc).expect("report json");
            bytes.push(b'\n');
            vec![("report.json".into(), bytes)]
        }
    }
}

/// Writes the rendering under `<out_dir>/reports/` and returns the paths.
pub fn emit_report(report: &Report, format: ReportFormat, out_dir: &Path) -> Result<Vec<PathBuf>, AnalysisError> {
    let dir = out_dir.join("reports");
    let out_err = |path: &Path, e: std::io::Error| AnalysisError::Output {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    fs::create_dir_all(&dir).map_err(|e| out_err(&dir, e))?;
    let mut written = Vec::new();
    for (name, bytes) in render(report, format) {
        let path = dir.join(name);
        crate::runstore::write_atomic(&path, &bytes).map_err(|e| AnalysisError::Output {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        written.push(path);
    }
    Ok(written)
}
