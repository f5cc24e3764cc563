//! `promptevolver` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 backend error,
//! 4 storage error. Logs go to standard error; standard output carries only
//! results, as plain text or as one JSON document with `--json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use promptevolver::analysis::{
    aggregate, collect_runs, emit_report, load_pairs_csv, load_score_rows, load_win_table, AnalysisError, Report,
    ReportFormat,
};
use promptevolver::backends::{BackendError, Backends};
use promptevolver::config::{BackendMode, GUIDANCE_SCORERS};
use promptevolver::engine::EngineError;
use promptevolver::runstore::{resume_run, start_run, unique_run_id, RunMode, StoreError};
use promptevolver::transfer::{transfer_run, write_transfer_csv, TransferError, TransferT2i};
use promptevolver::{ConfigError, RunConfig, RunResult, TargetImage, TemplateFamily};
use serde_json::json;

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_STORAGE: u8 = 4;

#[derive(Parser)]
#[command(name = "promptevolver", version, about = "Recover text prompts for a target image by evolving them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a prompt for a target image.
    Invert(RunArgs),
    /// Evaluate N initial prompts once and keep the best (no evolution).
    Baseline(RunArgs),
    /// Re-score the best prompts of finished runs with another T2I backend.
    Eval(EvalArgs),
    /// Aggregate scores and win counts into report files.
    Report(ReportArgs),
    /// Continue an interrupted run from its last committed generation.
    Resume(ResumeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TemplateArg {
    Structured,
    Minimal,
    Spatial,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Sim,
    Http,
}

#[derive(Args)]
struct RunArgs {
    /// Target image (PNG, JPEG or WebP).
    #[arg(long)]
    image: Option<PathBuf>,
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory that holds run directories [default: storage.root, "runs"].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seed; also seeds the simulation world.
    #[arg(long)]
    seed: Option<u64>,
    /// Population size N (baseline default 60).
    #[arg(long)]
    n: Option<usize>,
    /// Number of generations T.
    #[arg(long)]
    t: Option<usize>,
    /// Images generated per prompt K.
    #[arg(long)]
    k: Option<usize>,
    /// Mutation probability.
    #[arg(long)]
    pm: Option<f64>,
    /// Guidance scorer used as fitness.
    #[arg(long, value_parser = PossibleValuesParser::new(GUIDANCE_SCORERS))]
    guidance: Option<String>,
    /// VLM instruction template family.
    #[arg(long, value_enum)]
    template: Option<TemplateArg>,
    /// Show the VLM the parents' best images during crossover (structured only).
    #[arg(long)]
    grounded_crossover: bool,
    /// `sim` wires every service to a deterministic simulation.
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// VLM chat-completions endpoint (http backend).
    #[arg(long)]
    vlm_url: Option<String>,
    /// Image-generation endpoint (http backend).
    #[arg(long)]
    t2i_url: Option<String>,
    /// Similarity endpoint for the guidance scorer (http backend).
    #[arg(long)]
    scorer_url: Option<String>,
    /// Maximum concurrent offspring pipelines.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Run directory name [default: <mode>-<target hash>-s<seed>].
    #[arg(long)]
    run_id: Option<String>,
    /// Dataset label recorded with the run, used to group reports.
    #[arg(long)]
    dataset: Option<String>,
    /// Print the result as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directories, or directories containing runs.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Generator: `sim` (the run's world), `sim:<salt>` (another world) or `http`.
    #[arg(long, default_value = "sim")]
    t2i: String,
    /// Scorer id [default: each run's guidance scorer].
    #[arg(long, value_parser = PossibleValuesParser::new(GUIDANCE_SCORERS))]
    metric: Option<String>,
    /// TOML file with HTTP endpoint settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scores file to write.
    #[arg(long, default_value = "scores.csv")]
    out: PathBuf,
    /// Print the scored rows as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run roots, run directories, score or pairs CSV files, or win tables.
    inputs: Vec<PathBuf>,
    /// markdown, csv or json.
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Directory receiving `reports/` [default: the first input directory, else .].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the written paths as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ResumeArgs {
    /// Run directory.
    run: PathBuf,
    /// Print the result as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

fn flag_for(key: &str) -> Option<&'static str> {
    Some(match key {
        "population_size" => "--n",
        "generations" => "--t",
        "samples_per_prompt" => "--k",
        "mutation_rate" => "--pm",
        "parallelism" => "--parallelism",
        "guidance_scorer" => "--guidance",
        "crossover_grounding" => "--grounded-crossover",
        "backends.vlm.url" => "--vlm-url",
        "backends.t2i.url" => "--t2i-url",
        k if k.starts_with("backends.scorers.") => "--scorer-url",
        _ => return None,
    })
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let key = match &e {
            ConfigError::OutOfRange { key, .. } | ConfigError::MissingField(key) => flag_for(key),
            ConfigError::UnknownScorer(_) => Some("--guidance"),
            _ => None,
        };
        match key {
            Some(flag) => Failure::config(format!("{e} (flag {flag})")),
            None => Failure::config(e.to_string()),
        }
    }
}

impl From<BackendError> for Failure {
    fn from(e: BackendError) -> Self {
        Self {
            code: EXIT_BACKEND,
            message: e.to_string(),
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Self {
            code: EXIT_STORAGE,
            message: e.to_string(),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(c) => c.into(),
            EngineError::Storage(s) => s.into(),
            EngineError::Template(t) => Failure::config(t.to_string()),
            other => Self {
                code: EXIT_BACKEND,
                message: other.to_string(),
            },
        }
    }
}

impl From<TransferError> for Failure {
    fn from(e: TransferError) -> Self {
        match e {
            TransferError::Config(c) => c.into(),
            TransferError::Backend(b) => b.into(),
            TransferError::Storage(s) => s.into(),
            TransferError::Engine(en) => en.into(),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        let code = match e {
            AnalysisError::Input { .. } | AnalysisError::Output { .. } => EXIT_STORAGE,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::config(format!("cannot read --config {}: {e}", p.display())))?;
            RunConfig::from_toml_str(&text)
                .map_err(|e| Failure::config(format!("--config {}: {e}", p.display())))
        }
    }
}

fn build_config(args: &RunArgs, mode: RunMode) -> Result<RunConfig, Failure> {
    let mut cfg = load_config(args.config.as_deref())?;
    let e = &mut cfg.engine;
    if mode == RunMode::Baseline {
        e.population_size = 60;
    }
    if let Some(v) = args.seed {
        e.rng_seed = v;
    }
    if let Some(v) = args.n {
        e.population_size = v;
    }
    if let Some(v) = args.t {
        e.generations = v;
    }
    if let Some(v) = args.k {
        e.samples_per_prompt = v;
    }
    if let Some(v) = args.pm {
        e.mutation_rate = v;
    }
    if let Some(v) = &args.guidance {
        e.guidance_scorer = v.clone();
    }
    if let Some(v) = args.parallelism {
        e.parallelism = v;
    }
    if mode == RunMode::Baseline {
        e.generations = 0;
        e.mutation_rate = 0.0;
    }
    if let Some(t) = args.template {
        cfg.templates.template_variant = match t {
            TemplateArg::Structured => TemplateFamily::Structured,
            TemplateArg::Minimal => TemplateFamily::Minimal,
            TemplateArg::Spatial => TemplateFamily::SpatialEmphasis,
        };
    }
    if args.grounded_crossover {
        cfg.templates.crossover_grounding = true;
    }
    let b = &mut cfg.backends;
    if let Some(mode) = args.backend {
        b.mode = match mode {
            BackendArg::Sim => BackendMode::Sim,
            BackendArg::Http => BackendMode::Http,
        };
    }
    if let Some(u) = &args.vlm_url {
        b.vlm.url = Some(u.clone());
    }
    if let Some(u) = &args.t2i_url {
        b.t2i.url = Some(u.clone());
    }
    if let Some(u) = &args.scorer_url {
        b.scorers.entry(cfg.engine.guidance_scorer.clone()).or_default().url = Some(u.clone());
    }
    if let Some(out) = &args.out {
        cfg.storage.root = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summary_json(result: &RunResult, run_dir: &Path, run_id: &str) -> serde_json::Value {
    let best = &result.best_individual;
    let fitness = best.fitness.as_ref();
    json!({
        "run_id": run_id,
        "run_dir": run_dir.display().to_string(),
        "best_prompt": best.text(),
        "best_id": best.id,
        "mean_score": fitness.map(|f| f.mean_score),
        "per_image_scores": fitness.map(|f| f.per_image_scores.clone()),
        "total_prompts_created": result.total_prompts_created,
        "total_t2i_images": result.total_t2i_images,
        "total_vlm_calls": result.total_vlm_calls,
        "cache_hits": result.cache_hits,
        "cache_misses": result.cache_misses,
    })
}

fn print_result(result: &RunResult, run_dir: &Path, run_id: &str, as_json: bool) {
    if as_json {
        println!("{}", summary_json(result, run_dir, run_id));
    } else {
        let best = &result.best_individual;
        println!("{}", best.text());
        if let Some(f) = &best.fitness {
            println!("mean fitness: {}", f.mean_score);
        }
        println!("run directory: {}", run_dir.display());
    }
}

fn cmd_run(args: RunArgs, mode: RunMode) -> Result<(), Failure> {
    let cfg = build_config(&args, mode)?;
    let image = args.image.as_ref().ok_or_else(|| Failure::config("--image is required"))?;
    let bytes = fs::read(image).map_err(|e| Failure::config(format!("cannot read --image {}: {e}", image.display())))?;
    let target = TargetImage::from_bytes(bytes, image.display().to_string())
        .map_err(|e| Failure::config(format!("--image {}: {e}", image.display())))?;
    let root = cfg.storage.root.clone();
    let run_id = match &args.run_id {
        Some(id) => id.clone(),
        None => {
            let label = if mode == RunMode::Baseline { "baseline" } else { "invert" };
            let base = format!("{label}-{}-s{}", &target.content_hash()[..8], cfg.engine.rng_seed);
            unique_run_id(&root, &base)
        }
    };
    let backends = Backends::from_config(&cfg, &target)?;
    log::info!("starting run {run_id} under {}", root.display());
    let (dir, result) = start_run(&root, &run_id, mode, args.dataset.as_deref(), &cfg, &target, &backends)?;
    print_result(&result, &dir, &run_id, args.json);
    Ok(())
}

fn cmd_resume(args: ResumeArgs) -> Result<(), Failure> {
    let manifest = args.run.join("manifest.json");
    if !manifest.is_file() {
        return Err(StoreError::StorageFailure {
            path: args.run.clone(),
            reason: "not a run directory".into(),
        }
        .into());
    }
    let result = resume_run(&args.run, Backends::from_config)?;
    let run_id = args.run.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    print_result(&result, &args.run, &run_id, args.json);
    Ok(())
}

fn run_dirs(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    if path.join("manifest.json").is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let missing = || -> Failure {
        StoreError::StorageFailure {
            path: path.to_path_buf(),
            reason: "no run directory found".into(),
        }
        .into()
    };
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|_| missing())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    if dirs.is_empty() {
        return Err(missing());
    }
    dirs.sort();
    Ok(dirs)
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let t2i: TransferT2i = args.t2i.parse().map_err(|e: ConfigError| Failure::config(format!("--t2i: {e}")))?;
    let endpoints = args.config.as_deref().map(|p| load_config(Some(p))).transpose()?;
    let mut rows = Vec::new();
    for root in &args.runs {
        for dir in run_dirs(root)? {
            log::info!("scoring {} with {t2i}", dir.display());
            rows.extend(transfer_run(&dir, t2i, args.metric.as_deref(), endpoints.as_ref())?);
        }
    }
    write_transfer_csv(&args.out, &rows)?;
    if args.json {
        println!("{}", json!({ "scores_file": args.out.display().to_string(), "rows": rows }));
    } else {
        let mut runs: Vec<&str> = rows.iter().map(|r| r.run_id.as_str()).collect();
        runs.dedup();
        for run in runs {
            let scores: Vec<f64> = rows.iter().filter(|r| r.run_id == run).map(|r| r.score).collect();
            println!("{run}\t{}", scores.iter().sum::<f64>() / scores.len() as f64);
        }
        println!("scores file: {}", args.out.display());
    }
    Ok(())
}

fn csv_header(path: &Path) -> Result<Vec<String>, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::from(AnalysisError::Input { path: path.to_path_buf(), reason: e.to_string() }))?;
    let header = reader
        .headers()
        .map_err(|e| Failure::from(AnalysisError::Input { path: path.to_path_buf(), reason: e.to_string() }))?;
    Ok(header.iter().map(str::to_string).collect())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let format: ReportFormat = args.format.parse().map_err(|e: AnalysisError| Failure::config(format!("--format: {e}")))?;
    let (mut scores, mut pairs, mut wins) = (Vec::new(), Vec::new(), Vec::new());
    for input in &args.inputs {
        if input.is_dir() {
            scores.extend(collect_runs(std::slice::from_ref(input))?);
        } else if input.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            wins.extend(load_win_table(input)?);
        } else {
            let header = csv_header(input)?;
            let has = |c: &str| header.iter().any(|h| h == c);
            if has("wins_a") {
                wins.extend(load_win_table(input)?);
            } else if has("score_a") {
                pairs.extend(load_pairs_csv(input)?);
            } else if has("score") && has("method") {
                scores.extend(load_score_rows(input)?);
            } else {
                return Err(Failure::config(format!(
                    "{}: unrecognised columns (expected a win table, pairs or score rows)",
                    input.display()
                )));
            }
        }
    }
    let mut report = if pairs.is_empty() { Report::default() } else { Report::from_pairs(&pairs)? };
    if !scores.is_empty() {
        report.scores.extend(aggregate(&scores)?);
    }
    report.wins.extend(wins);
    if report.scores.is_empty() && report.wins.is_empty() {
        return Err(AnalysisError::EmptyGroup.into());
    }
    let out = args
        .out
        .clone()
        .or_else(|| args.inputs.iter().find(|p| p.is_dir()).cloned())
        .unwrap_or_else(|| PathBuf::from("."));
    let written = emit_report(&report, format, &out)?;
    if args.json {
        let paths: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
        println!("{}", json!({ "files": paths }));
    } else {
        for p in written {
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Invert(a) => cmd_run(a, RunMode::Evolution),
        Command::Baseline(a) => cmd_run(a, RunMode::Baseline),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
        Command::Resume(a) => cmd_resume(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
