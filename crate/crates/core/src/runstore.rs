//! On-disk run directories.
//!
//! ```text
//! <root>/<run-id>/
//!   manifest.json          configuration, target hash, status
//!   target.<ext>           copy of the target image
//!   generations/gen-N.json one committed generation each
//!   images/<digest>-<k>.<ext>
//!   cache/index.json       fitness cache entries tagged by generation
//!   result.json            written when the run completes
//!   .lock
//! ```
//!
//! Every file is written to a temporary name and renamed into place, so a
//! crash leaves either the old or the new version. Generation files carry a
//! SHA-256 of their record and are rejected when it does not match.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{BackendError, Backends};
use crate::config::RunConfig;
use crate::engine::{CacheEntry, Engine, EngineError, FitnessCache, GenerationRecord, RunResult, RunSink, RunState};
use crate::rng::t2i_base_seed;
use crate::types::{GeneratedImage, TargetImage};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("storage failure at {path}: {reason}")]
    StorageFailure { path: PathBuf, reason: String },
    #[error("run `{0}` already exists")]
    RunExists(String),
    #[error("generation files are not contiguous: expected gen-{expected}, found gen-{found}")]
    GapInSequence { expected: u32, found: u32 },
    #[error("corrupt run data in {path}: {reason}")]
    CorruptManifest { path: PathBuf, reason: String },
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("run directory {0} is locked by another process")]
    Locked(PathBuf),
    #[error("invalid run id `{0}`")]
    InvalidRunId(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::StorageFailure {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> StoreError {
    StoreError::CorruptManifest {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Evolution,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub run_id: String,
    pub mode: RunMode,
    pub config: RunConfig,
    pub target_hash: String,
    pub target_source: String,
    pub target_file: String,
    /// Free-form dataset label used to group reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct GenerationFile {
    schema_version: u32,
    sha256: String,
    record: GenerationRecord,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    schema_version: u32,
    entries: Vec<CacheEntry>,
}

fn record_digest(record: &GenerationRecord) -> String {
    let json = serde_json::to_string(record).expect("records always serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = tmp_path(path);
    let mut f = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StoreError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| corrupt(path, e.to_string()))?;
    if let Some(v) = value.get("schema_version").and_then(|v| v.as_u64()) {
        if v != SCHEMA_VERSION as u64 {
            return Err(StoreError::SchemaMismatch {
                found: v as u32,
                expected: SCHEMA_VERSION,
            });
        }
    } else {
        return Err(corrupt(path, "missing schema_version"));
    }
    serde_json::from_value(value).map_err(|e| corrupt(path, e.to_string()))
}

fn valid_run_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// `base`, or `base-2`, `base-3`, … if that directory already exists.
pub fn unique_run_id(root: &Path, base: &str) -> String {
    if !root.join(base).exists() {
        return base.to_string();
    }
    (2..)
        .map(|i| format!("{base}-{i}"))
        .find(|id| !root.join(id).exists())
        .expect("some suffix is free")
}

/// An open run directory holding its lock.
pub struct RunStore {
    dir: PathBuf,
    manifest: Manifest,
    _lock: File,
    crash_before_commit: Option<u32>,
}

impl RunStore {
    fn lock(dir: &Path) -> Result<File, StoreError> {
        let path = dir.join(".lock");
        let f = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        match f.try_lock() {
            Ok(()) => Ok(f),
            Err(fs::TryLockError::WouldBlock) => Err(StoreError::Locked(dir.to_path_buf())),
            Err(fs::TryLockError::Error(e)) => Err(io_err(&path, e)),
        }
    }

    /// Creates `<root>/<run_id>` with a manifest and a copy of the target.
    pub fn create(
        root: &Path,
        run_id: &str,
        mode: RunMode,
        config: &RunConfig,
        target: &TargetImage,
        dataset: Option<&str>,
    ) -> Result<Self, StoreError> {
        if !valid_run_id(run_id) {
            return Err(StoreError::InvalidRunId(run_id.to_string()));
        }
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        let dir = root.join(run_id);
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(StoreError::RunExists(run_id.to_string()))
            }
            Err(e) => return Err(io_err(&dir, e)),
        }
        for sub in ["generations", "images", "cache"] {
            let p = dir.join(sub);
            fs::create_dir(&p).map_err(|e| io_err(&p, e))?;
        }
        let lock = Self::lock(&dir)?;
        let target_file = format!("target.{}", target.format().extension());
        write_atomic(&dir.join(&target_file), target.bytes())?;
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            run_id: run_id.to_string(),
            mode,
            config: config.clone(),
            target_hash: target.content_hash().to_string(),
            target_source: target.source_id().to_string(),
            target_file,
            dataset: dataset.map(str::to_string),
            status: RunStatus::Running,
            error: None,
        };
        let store = Self {
            dir,
            manifest,
            _lock: lock,
            crash_before_commit: None,
        };
        store.write_manifest()?;
        Ok(store)
    }

    /// Opens an existing run directory and checks its manifest.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Err(corrupt(&path, "manifest.json not found"));
        }
        let lock = Self::lock(dir)?;
        let manifest: Manifest = read_json(&path)?;
        manifest
            .config
            .validate()
            .map_err(|e| corrupt(&path, format!("stored configuration is invalid: {e}")))?;
        let store = Self {
            dir: dir.to_path_buf(),
            manifest,
            _lock: lock,
            crash_before_commit: None,
        };
        let target = store.target()?;
        if target.content_hash() != store.manifest.target_hash {
            return Err(corrupt(&path, "target image does not match the recorded hash"));
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn config(&self) -> &RunConfig {
        &self.manifest.config
    }

    pub fn target(&self) -> Result<TargetImage, StoreError> {
        let path = self.dir.join(&self.manifest.target_file);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        TargetImage::from_bytes(bytes, self.manifest.target_source.clone()).map_err(|e| corrupt(&path, e.to_string()))
    }

    /// Test hook: the commit of `generation` writes its temporary file and
    /// then fails as if the process had died before the rename.
    pub fn inject_crash_before_commit(&mut self, generation: u32) {
        self.crash_before_commit = Some(generation);
    }

    fn write_manifest(&self) -> Result<(), StoreError> {
        let json = serde_json::to_vec_pretty(&self.manifest).expect("manifests always serialize");
        write_atomic(&self.dir.join("manifest.json"), &json)
    }

    pub fn set_status(&mut self, status: RunStatus, error: Option<String>) -> Result<(), StoreError> {
        self.manifest.status = status;
        self.manifest.error = error;
        self.write_manifest()
    }

    fn generation_path(&self, idx: u32) -> PathBuf {
        self.dir.join("generations").join(format!("gen-{idx}.json"))
    }

    /// All committed generations in order. Leftover temporary files are
    /// ignored; gaps, bad digests and schema mismatches are errors.
    pub fn load_records(&self) -> Result<Vec<GenerationRecord>, StoreError> {
        let gdir = self.dir.join("generations");
        let mut found = BTreeMap::new();
        for entry in fs::read_dir(&gdir).map_err(|e| io_err(&gdir, e))? {
            let entry = entry.map_err(|e| io_err(&gdir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(idx) = name.strip_prefix("gen-").and_then(|s| s.strip_suffix(".json")) else {
                continue;
            };
            let idx: u32 = idx
                .parse()
                .map_err(|_| corrupt(&entry.path(), "unexpected generation file name"))?;
            found.insert(idx, entry.path());
        }
        let mut records = Vec::with_capacity(found.len());
        for (expected, (idx, path)) in found.into_iter().enumerate() {
            if idx != expected as u32 {
                return Err(StoreError::GapInSequence {
                    expected: expected as u32,
                    found: idx,
                });
            }
            let file: GenerationFile = read_json(&path)?;
            if record_digest(&file.record) != file.sha256 {
                return Err(corrupt(&path, "record digest mismatch"));
            }
            if file.record.generation_index != idx {
                return Err(corrupt(&path, "generation index does not match file name"));
            }
            records.push(file.record);
        }
        Ok(records)
    }

    pub fn load_cache(&self) -> Result<Vec<CacheEntry>, StoreError> {
        let path = self.dir.join("cache").join("index.json");
        if !path.exists() {
            return Ok(Vec::new());
        }
        Ok(read_json::<CacheFile>(&path)?.entries)
    }

    pub fn image_path(&self, image_ref: &str) -> PathBuf {
        self.dir.join("images").join(image_ref)
    }

    /// Highest-scoring stored image of every cached prompt.
    pub fn load_best_images(&self, entries: &[CacheEntry]) -> Result<HashMap<String, GeneratedImage>, StoreError> {
        let seed = self.manifest.config.engine.rng_seed;
        let mut out = HashMap::new();
        for e in entries {
            let scores = &e.record.per_image_scores;
            let mut best = 0;
            for (i, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = i;
                }
            }
            let Some(image_ref) = e.record.image_refs.get(best) else {
                continue;
            };
            let path = self.image_path(image_ref);
            let bytes = fs::read(&path).map_err(|err| io_err(&path, err))?;
            let digest = crate::digest::prompt_digest(&e.text);
            let img = GeneratedImage::new(bytes, t2i_base_seed(seed, &digest) + best as u64, digest.clone())
                .map_err(|err| corrupt(&path, err.to_string()))?;
            out.insert(digest, img);
        }
        Ok(out)
    }

    pub fn write_result(&self, result: &RunResult) -> Result<(), StoreError> {
        let json = serde_json::to_vec_pretty(result).expect("run results always serialize");
        write_atomic(&self.dir.join("result.json"), &json)
    }
}

impl RunSink for RunStore {
    fn store_images(&mut self, digest: &str, images: &[GeneratedImage]) -> Result<(), StoreError> {
        for (k, img) in images.iter().enumerate() {
            let path = self.image_path(&crate::engine::image_ref(digest, k, img));
            write_atomic(&path, img.bytes())?;
        }
        Ok(())
    }

    fn commit_generation(&mut self, record: &GenerationRecord, cache: &FitnessCache) -> Result<(), StoreError> {
        // The cache index goes first: entries are tagged with their
        // generation and anything newer than the last generation file is
        // discarded on resume.
        let cache_file = CacheFile {
            schema_version: SCHEMA_VERSION,
            entries: cache.entries(),
        };
        let cache_json = serde_json::to_vec(&cache_file).expect("cache always serializes");
        write_atomic(&self.dir.join("cache").join("index.json"), &cache_json)?;

        let path = self.generation_path(record.generation_index);
        let file = GenerationFile {
            schema_version: SCHEMA_VERSION,
            sha256: record_digest(record),
            record: record.clone(),
        };
        let json = serde_json::to_vec_pretty(&file).expect("records always serialize");
        if self.crash_before_commit == Some(record.generation_index) {
            let tmp = tmp_path(&path);
            fs::write(&tmp, &json).map_err(|e| io_err(&tmp, e))?;
            return Err(io_err(&path, "injected crash before commit"));
        }
        write_atomic(&path, &json)
    }
}

fn finish_run(store: &mut RunStore, outcome: Result<RunResult, EngineError>) -> Result<RunResult, EngineError> {
    match outcome {
        Ok(result) => {
            store.write_result(&result)?;
            store.set_status(RunStatus::Completed, None)?;
            Ok(result)
        }
        Err(e) => {
            if let Err(status_err) = store.set_status(RunStatus::Aborted, Some(e.to_string())) {
                log::error!("could not mark run as aborted: {status_err}");
            }
            Err(e)
        }
    }
}

/// Creates a run directory and runs to completion, committing every
/// generation. The returned path is the run directory.
pub fn start_run(
    root: &Path,
    run_id: &str,
    mode: RunMode,
    dataset: Option<&str>,
    cfg: &RunConfig,
    target: &TargetImage,
    backends: &Backends,
) -> Result<(PathBuf, RunResult), EngineError> {
    let mut cfg = cfg.clone();
    if mode == RunMode::Baseline {
        cfg.engine.generations = 0;
        cfg.engine.mutation_rate = 0.0;
    }
    let mut store = RunStore::create(root, run_id, mode, &cfg, target, dataset)?;
    let outcome = Engine::new(&cfg, backends, target).and_then(|engine| {
        let state = engine.start(&mut store)?;
        engine.finish(state, &mut store)
    });
    let result = finish_run(&mut store, outcome)?;
    Ok((store.dir.clone(), result))
}

/// Continues a run from its last committed generation. A completed run
/// returns its stored result without touching any backend.
pub fn resume_run(
    dir: &Path,
    make_backends: impl FnOnce(&RunConfig, &TargetImage) -> Result<Backends, BackendError>,
) -> Result<RunResult, EngineError> {
    let mut store = RunStore::open(dir)?;
    let records = store.load_records()?;
    if store.manifest.status == RunStatus::Completed {
        return RunResult::from_records(records);
    }
    let cfg = store.config().clone();
    let target = store.target()?;
    let backends = make_backends(&cfg, &target)?;
    store.set_status(RunStatus::Running, None)?;
    let outcome = Engine::new(&cfg, &backends, &target).and_then(|engine| {
        let state = if records.is_empty() {
            engine.start(&mut store)?
        } else {
            let entries = store.load_cache()?;
            let images = if cfg.templates.crossover_grounding {
                store.load_best_images(&entries)?
            } else {
                HashMap::new()
            };
            RunState::from_records(records, entries, images)?
        };
        engine.finish(state, &mut store)
    });
    finish_run(&mut store, outcome)
}
