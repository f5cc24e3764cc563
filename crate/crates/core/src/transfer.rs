//! Re-scoring the best prompts of finished runs with another generator.
//!
//! Prompts are not re-optimised. Each stored best prompt is rendered K times
//! with the chosen T2I backend, using the same per-prompt seeds as the run,
//! and every image is scored against the run's target.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::sim::{SimScorer, SimT2i, SimWorld};
use crate::backends::{http, BackendError, RetryPolicy, Retrying, ScorerBackend, T2IBackend};
use crate::config::{BackendMode, ConfigError, RunConfig};
use crate::engine::{evaluate, EngineError, FitnessCache};
use crate::runstore::{RunStore, StoreError};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Storage(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Which generator renders the prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferT2i {
    /// The run's own simulation world, or one with a different generator salt.
    Sim { salt: Option<u64> },
    Http,
}

impl FromStr for TransferT2i {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(Self::Sim { salt: None }),
            "http" => Ok(Self::Http),
            _ => match s.strip_prefix("sim:").map(str::parse::<u64>) {
                Some(Ok(salt)) => Ok(Self::Sim { salt: Some(salt) }),
                _ => Err(ConfigError::Parse(format!(
                    "unknown T2I backend `{s}` (expected sim, sim:<salt> or http)"
                ))),
            },
        }
    }
}

impl std::fmt::Display for TransferT2i {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Sim { salt: None } => f.write_str("sim"),
            Self::Sim { salt: Some(s) } => write!(f, "sim:{s}"),
            Self::Http => f.write_str("http"),
        }
    }
}

/// One scored image. `dataset`, `metric`, `method` and `score` make the row
/// usable as report input; `metric` is the id reported by the scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub run_id: String,
    pub dataset: String,
    pub metric: String,
    pub method: String,
    pub t2i: String,
    pub image_index: usize,
    pub score: f64,
    pub prompt: String,
}

type ScoringPair = (Arc<dyn T2IBackend>, Arc<dyn ScorerBackend>);

fn backends_for(
    cfg: &RunConfig,
    store: &RunStore,
    t2i: TransferT2i,
    metric: &str,
) -> Result<ScoringPair, TransferError> {
    let target = store.target()?;
    match t2i {
        TransferT2i::Sim { salt } => {
            let mut params = cfg.backends.sim.clone();
            if let Some(s) = salt {
                params.generator_salt = s;
            }
            let world = Arc::new(SimWorld::for_target(cfg.engine.rng_seed, &params, &target));
            Ok((Arc::new(SimT2i::new(world.clone())), Arc::new(SimScorer::new(world))))
        }
        TransferT2i::Http => {
            let policy = RetryPolicy::from_config(cfg);
            let t2i = Retrying::new(http::ImagesApiT2i::from_config(cfg)?, policy);
            let scorer: Arc<dyn ScorerBackend> = if cfg.backends.mode == BackendMode::Sim && metric == "sim" {
                let world = Arc::new(SimWorld::for_target(cfg.engine.rng_seed, &cfg.backends.sim, &target));
                Arc::new(SimScorer::new(world))
            } else {
                Arc::new(Retrying::new(http::HttpScorer::from_config(cfg, metric)?, policy))
            };
            Ok((Arc::new(t2i), scorer))
        }
    }
}

/// Scores the best prompt of the completed run in `dir`. `metric` defaults
/// to the run's guidance scorer; `endpoints` supplies HTTP settings when
/// the run itself used the simulation.
pub fn transfer_run(
    dir: &Path,
    t2i: TransferT2i,
    metric: Option<&str>,
    endpoints: Option<&RunConfig>,
) -> Result<Vec<TransferRow>, TransferError> {
    if !dir.join("manifest.json").is_file() {
        return Err(StoreError::StorageFailure {
            path: dir.to_path_buf(),
            reason: "not a run directory".into(),
        }
        .into());
    }
    let store = RunStore::open(dir)?;
    let manifest = store.manifest().clone();
    let records = store.load_records()?;
    let result = crate::engine::RunResult::from_records(records)?;
    let best = result.best_individual;

    let mut cfg = manifest.config.clone();
    if let Some(e) = endpoints {
        cfg.backends.vlm = e.backends.vlm.clone();
        cfg.backends.t2i = e.backends.t2i.clone();
        cfg.backends.scorers = e.backends.scorers.clone();
        cfg.backends.timeout_secs = e.backends.timeout_secs;
    }
    let metric = metric.unwrap_or(&cfg.engine.guidance_scorer).to_string();
    let (t2i_backend, scorer) = backends_for(&cfg, &store, t2i, &metric)?;
    let target = store.target()?;
    let eval = evaluate(
        &best.prompt,
        &target,
        cfg.engine.samples_per_prompt,
        cfg.engine.rng_seed,
        t2i_backend.as_ref(),
        scorer.as_ref(),
        &FitnessCache::new(),
        0,
    )?;
    let mode = serde_json::to_value(manifest.mode)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    Ok(eval
        .record
        .per_image_scores
        .iter()
        .enumerate()
        .map(|(i, s)| TransferRow {
            run_id: manifest.run_id.clone(),
            dataset: manifest.dataset.clone().unwrap_or_else(|| "unlabeled".into()),
            metric: eval.record.scorer_id.clone(),
            method: format!("{mode}-{}", cfg.engine.guidance_scorer),
            t2i: t2i.to_string(),
            image_index: i,
            score: *s,
            prompt: best.text().to_string(),
        })
        .collect())
}

pub fn write_transfer_csv(path: &Path, rows: &[TransferRow]) -> Result<(), StoreError> {
    let fail = |e: &dyn std::fmt::Display| StoreError::StorageFailure {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| fail(&e))?;
    }
    let bytes = w.into_inner().map_err(|e| fail(&e))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| fail(&e))?;
    }
    crate::runstore::write_atomic(path, &bytes)
}

