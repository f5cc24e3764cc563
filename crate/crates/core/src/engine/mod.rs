//! The evolutionary loop: initialization, tournament selection, VLM
//! crossover and mutation, cached fitness evaluation and elitist survivor
//! selection.

mod cache;
mod select;

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{score_pair, t2i_generate, vlm_chat, BackendError, Backends, ScorerBackend, T2IBackend};
use crate::config::{ConfigError, RunConfig};
use crate::rng::{t2i_base_seed, SeedTree};
use crate::runstore::StoreError;
use crate::templates::{
    parse_population, parse_single_prompt, truncate_prompt, TemplateError, TemplateSet, TemplateVariant, TokenBudget,
};
use crate::tokenizer::{Tokenizer, TokenizerRegistry};
use crate::types::{FitnessRecord, GeneratedImage, Individual, Operator, Prompt, TargetImage, TypeError};

pub use cache::{CacheEntry, FitnessCache};
pub use select::{best_index, fitter, select_survivors, tournament_select};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("the VLM produced {got} usable initial prompts, {wanted} required")]
    InitUnderflow { got: usize, wanted: usize },
    #[error("population member {0} has not been evaluated")]
    UnevaluatedPopulation(String),
    #[error("individual {0} has not been evaluated")]
    UnevaluatedIndividual(String),
    #[error("invalid population: {0}")]
    InvalidPopulation(String),
    #[error(transparent)]
    Fitness(#[from] TypeError),
    #[error(transparent)]
    Storage(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub individuals: Vec<Individual>,
    pub generation_index: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VlmCallCounts {
    pub init: u64,
    pub crossover: u64,
    pub mutation: u64,
}

impl VlmCallCounts {
    pub fn total(&self) -> u64 {
        self.init + self.crossover + self.mutation
    }
}

/// One VLM exchange, kept so runs can be audited and compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmLogEntry {
    pub tag: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation_index: u32,
    /// The population after this generation's survivor selection.
    pub population: Vec<Individual>,
    /// All offspring created in this generation (empty for generation 0).
    pub offspring: Vec<Individual>,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub t2i_images: u64,
    pub vlm_calls: VlmCallCounts,
    pub substitutions: u64,
    /// Wall-clock time; the only field that differs between identical runs.
    pub duration_ms: u64,
    pub vlm_log: Vec<VlmLogEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub best_individual: Individual,
    pub final_population: Population,
    pub generation_records: Vec<GenerationRecord>,
    pub total_t2i_images: u64,
    pub total_vlm_calls: u64,
    pub total_prompts_created: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

impl RunResult {
    pub fn from_records(records: Vec<GenerationRecord>) -> Result<Self, EngineError> {
        let last = records
            .last()
            .ok_or_else(|| EngineError::InvalidPopulation("no generations recorded".into()))?;
        let final_population = Population {
            individuals: last.population.clone(),
            generation_index: last.generation_index,
        };
        let best_individual = final_population.individuals[best_index(&final_population)?].clone();
        let prompts = |r: &GenerationRecord| {
            if r.generation_index == 0 {
                r.population.len() as u64
            } else {
                r.offspring.len() as u64
            }
        };
        Ok(Self {
            best_individual,
            total_t2i_images: records.iter().map(|r| r.t2i_images).sum(),
            total_vlm_calls: records.iter().map(|r| r.vlm_calls.total()).sum(),
            total_prompts_created: records.iter().map(prompts).sum(),
            cache_hits: records.iter().map(|r| r.cache_hits).sum(),
            cache_misses: records.iter().map(|r| r.cache_misses).sum(),
            final_population,
            generation_records: records,
        })
    }

    /// JSON with wall-clock durations zeroed. Two runs with the same seed,
    /// configuration and deterministic backends produce identical output.
    pub fn canonical_json(&self) -> String {
        let mut copy = self.clone();
        for r in &mut copy.generation_records {
            r.duration_ms = 0;
        }
        serde_json::to_string_pretty(&copy).expect("run results always serialize")
    }
}

/// Receives each completed generation. Images arrive before the record
/// that refers to them.
pub trait RunSink {
    fn store_images(&mut self, digest: &str, images: &[GeneratedImage]) -> Result<(), StoreError>;

    fn commit_generation(&mut self, record: &GenerationRecord, cache: &FitnessCache) -> Result<(), StoreError>;
}

/// Keeps nothing.
pub struct NullSink;

impl RunSink for NullSink {
    fn store_images(&mut self, _: &str, _: &[GeneratedImage]) -> Result<(), StoreError> {
        Ok(())
    }

    fn commit_generation(&mut self, _: &GenerationRecord, _: &FitnessCache) -> Result<(), StoreError> {
        Ok(())
    }
}

/// Everything needed to continue a run after its last committed generation.
pub struct RunState {
    pub population: Population,
    pub cache: FitnessCache,
    pub records: Vec<GenerationRecord>,
    /// Highest-scoring image per prompt digest, for grounded crossover.
    pub best_images: HashMap<String, GeneratedImage>,
}

impl RunState {
    pub fn from_records(
        records: Vec<GenerationRecord>,
        cache_entries: Vec<CacheEntry>,
        best_images: HashMap<String, GeneratedImage>,
    ) -> Result<Self, EngineError> {
        let last = records
            .last()
            .ok_or_else(|| EngineError::InvalidPopulation("no generations recorded".into()))?;
        let population = Population {
            individuals: last.population.clone(),
            generation_index: last.generation_index,
        };
        let done = last.generation_index;
        let hits = records.iter().map(|r| r.cache_hits).sum();
        let misses = records.iter().map(|r| r.cache_misses).sum();
        let cache = FitnessCache::restore(cache_entries.into_iter().filter(|e| e.generation <= done), hits, misses);
        Ok(Self {
            population,
            cache,
            records,
            best_images,
        })
    }
}

/// Result of evaluating one prompt.
pub struct Evaluation {
    pub record: FitnessRecord,
    /// The K images, present only when this call generated them.
    pub images: Option<Vec<GeneratedImage>>,
}

pub fn image_ref(digest: &str, k: usize, img: &GeneratedImage) -> String {
    let ext = crate::types::validate_raster(img.bytes())
        .map(|f| f.extension())
        .unwrap_or("png");
    format!("{digest}-{k}.{ext}")
}

/// Mean similarity between the target and K images of `prompt`, served
/// from the cache when the text has been evaluated before.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    prompt: &Prompt,
    target: &TargetImage,
    k: usize,
    run_seed: u64,
    t2i: &dyn T2IBackend,
    scorer: &dyn ScorerBackend,
    cache: &FitnessCache,
    generation: u32,
) -> Result<Evaluation, EngineError> {
    let mut fresh = None;
    let (record, _) = cache.get_or_evaluate(prompt.text(), generation, || -> Result<_, EngineError> {
        let digest = prompt.digest();
        let images = t2i_generate(t2i, prompt, k, t2i_base_seed(run_seed, &digest))?;
        let scores = images
            .iter()
            .map(|img| score_pair(scorer, target.bytes(), img.bytes()))
            .collect::<Result<Vec<_>, _>>()?;
        let refs = images.iter().enumerate().map(|(i, img)| image_ref(&digest, i, img)).collect();
        let record = FitnessRecord::from_scores(scores, refs, scorer.id())?;
        fresh = Some(images);
        Ok(record)
    })?;
    Ok(Evaluation { record, images: fresh })
}

fn best_image(record: &FitnessRecord, images: &[GeneratedImage]) -> Option<GeneratedImage> {
    let mut best = 0;
    for (i, s) in record.per_image_scores.iter().enumerate() {
        if *s > record.per_image_scores[best] {
            best = i;
        }
    }
    images.get(best).cloned()
}

/// Runs `f` over `0..n` on up to `workers` threads, returning results in
/// index order. After the first error no new items are started.
fn parallel_map<T: Send, E: Send>(
    n: usize,
    workers: usize,
    f: impl Fn(usize) -> Result<T, E> + Sync,
) -> Result<Vec<T>, E> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Vec<Mutex<Option<Result<T, E>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = f(i);
                if r.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
            });
        }
    });
    let mut out = Vec::with_capacity(n);
    let mut first_err = None;
    for slot in slots {
        match slot.into_inner().unwrap_or_else(|e| e.into_inner()) {
            Some(Ok(v)) => out.push(v),
            Some(Err(e)) => {
                first_err.get_or_insert(e);
            }
            None => {}
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Whether a failed VLM operator call may fall back to the substitution
/// rule instead of aborting the run.
fn substitutable(err: &EngineError) -> bool {
    match err {
        EngineError::Backend(e) => !matches!(
            e,
            BackendError::AttachmentLimitExceeded { .. } | BackendError::InvalidRequest(_)
        ),
        EngineError::Template(e) => matches!(e, TemplateError::NoPromptsFound | TemplateError::EmptyAfterTruncation),
        _ => false,
    }
}

pub struct OffspringPlan<'p> {
    pub p1: &'p Individual,
    pub p2: &'p Individual,
    pub mutate: bool,
}

struct Bred {
    child: Individual,
    log: Vec<VlmLogEntry>,
    mutation_called: bool,
    substituted: bool,
    images: Option<Vec<GeneratedImage>>,
}

struct Evaluated {
    individual: Individual,
    images: Option<Vec<GeneratedImage>>,
}

pub struct Engine<'a> {
    cfg: &'a RunConfig,
    backends: &'a Backends,
    target: &'a TargetImage,
    templates: TemplateSet,
    tokenizer: Arc<dyn Tokenizer>,
    variant: TemplateVariant,
    budget: TokenBudget,
    seeds: SeedTree,
}

impl<'a> Engine<'a> {
    pub fn new(cfg: &'a RunConfig, backends: &'a Backends, target: &'a TargetImage) -> Result<Self, EngineError> {
        cfg.validate()?;
        let templates = match &cfg.templates.override_dir {
            Some(dir) => TemplateSet::with_overrides(dir)?,
            None => TemplateSet::builtin(),
        };
        let tokenizer = TokenizerRegistry::default()
            .get(&cfg.engine.tokenizer)
            .ok_or_else(|| ConfigError::OutOfRange {
                key: "tokenizer".into(),
                reason: format!("unknown tokenizer `{}`", cfg.engine.tokenizer),
            })?;
        Ok(Self {
            cfg,
            backends,
            target,
            templates,
            tokenizer,
            variant: TemplateVariant::new(cfg.templates.template_variant, cfg.templates.crossover_grounding)?,
            budget: TokenBudget::new(cfg.engine.token_limit, cfg.engine.reserved_special_tokens)?,
            seeds: SeedTree::new(cfg.engine.rng_seed),
        })
    }

    fn chat(&self, messages: &[crate::templates::VlmMessage], temperature: f64, tag: &str, log: &mut Vec<VlmLogEntry>) -> Result<String, BackendError> {
        let out = vlm_chat(self.backends.vlm.as_ref(), messages, temperature, tag);
        log.push(VlmLogEntry {
            tag: tag.to_string(),
            temperature,
            response: out.as_ref().ok().cloned(),
            error: out.as_ref().err().map(|e| e.to_string()),
        });
        out
    }

    /// Asks the VLM for N prompts, with one follow-up request for any
    /// shortfall. Returned individuals are not yet evaluated.
    pub fn initialize_population(&self) -> Result<(Population, Vec<VlmLogEntry>), EngineError> {
        let n = self.cfg.engine.population_size;
        let temp = self.cfg.engine.init_temperature;
        let mut log = Vec::new();
        let mut entries: Vec<(Prompt, f64)> = Vec::new();
        for attempt in 0..2 {
            let wanted = n - entries.len();
            let messages = self.templates.render_init(wanted, self.variant, self.target);
            let response = self.chat(&messages, temp, &format!("init/{attempt}"), &mut log)?;
            match parse_population(&response, wanted) {
                Ok(parsed) => {
                    for (text, p) in parsed.entries {
                        match truncate_prompt(&text, self.budget, self.tokenizer.as_ref()) {
                            Ok(prompt) => entries.push((prompt, p)),
                            Err(e) => log::warn!("dropping initial prompt: {e}"),
                        }
                    }
                }
                Err(TemplateError::NoPromptsFound) => log::warn!("init response {attempt} contained no prompts"),
                Err(e) => return Err(e.into()),
            }
            if entries.len() >= n {
                break;
            }
        }
        if entries.len() < n {
            return Err(EngineError::InitUnderflow {
                got: entries.len(),
                wanted: n,
            });
        }
        let individuals = entries
            .into_iter()
            .enumerate()
            .map(|(i, (prompt, p))| Individual::init(format!("g0-{i}"), prompt, p))
            .collect();
        Ok((
            Population {
                individuals,
                generation_index: 0,
            },
            log,
        ))
    }

    fn evaluate_individual(&self, mut ind: Individual, cache: &FitnessCache, generation: u32) -> Result<Evaluated, EngineError> {
        let eval = evaluate(
            &ind.prompt,
            self.target,
            self.cfg.engine.samples_per_prompt,
            self.cfg.engine.rng_seed,
            self.backends.t2i.as_ref(),
            self.backends.scorer.as_ref(),
            cache,
            generation,
        )?;
        ind.fitness = Some(eval.record);
        Ok(Evaluated {
            individual: ind,
            images: eval.images,
        })
    }

    fn parent_image(&self, parent: &Individual, best_images: &HashMap<String, GeneratedImage>) -> Result<GeneratedImage, EngineError> {
        best_images
            .get(&parent.prompt.digest())
            .cloned()
            .ok_or(EngineError::Template(TemplateError::GroundingImagesMissing))
    }

    /// The random decisions behind offspring `index` of `generation`: both
    /// tournament winners and whether the child is mutated. Each offspring
    /// has its own random stream, so plans do not depend on scheduling.
    pub fn offspring_plan<'p>(&self, pop: &'p Population, generation: u32, index: usize) -> Result<OffspringPlan<'p>, EngineError> {
        let e = &self.cfg.engine;
        let mut rng = self.seeds.stream("offspring", &[generation as u64, index as u64]);
        let p1 = tournament_select(pop, e.tournament_size, &mut rng)?;
        let p2 = tournament_select(pop, e.tournament_size, &mut rng)?;
        let mutate = rng.gen_bool(e.mutation_rate);
        Ok(OffspringPlan { p1, p2, mutate })
    }

    /// Creates offspring `index` of generation `generation`: two tournaments,
    /// VLM crossover and, with probability p_m, VLM mutation.
    fn breed(&self, pop: &Population, generation: u32, index: usize, best_images: &HashMap<String, GeneratedImage>) -> Result<Bred, EngineError> {
        let e = &self.cfg.engine;
        let OffspringPlan { p1, p2, mutate } = self.offspring_plan(pop, generation, index)?;
        let mut log = Vec::new();
        let mut substitution = None;

        let grounding = if self.variant.grounded_crossover() {
            Some((self.parent_image(p1, best_images)?, self.parent_image(p2, best_images)?))
        } else {
            None
        };
        let messages = self.templates.render_crossover(
            &p1.prompt,
            &p2.prompt,
            self.variant,
            self.target,
            grounding.as_ref().map(|(a, b)| (a, b)),
        )?;
        let tag = format!("g{generation}/o{index}/crossover");
        let crossed = self
            .chat(&messages, e.crossover_temperature, &tag, &mut log)
            .map_err(EngineError::from)
            .and_then(|r| Ok(parse_single_prompt(&r)?))
            .and_then(|t| Ok(truncate_prompt(&t, self.budget, self.tokenizer.as_ref())?));
        let mut child = match crossed {
            Ok(p) => p,
            Err(err) if substitutable(&err) => {
                log::warn!("{tag} failed, copying the fitter parent: {err}");
                substitution = Some(format!("crossover failed ({err}); copied fitter parent"));
                fitter(p1, p2).prompt.clone()
            }
            Err(err) => return Err(err),
        };

        let mut operator = Operator::Crossover;
        if mutate {
            let messages = self.templates.render_mutation(&child, self.variant, self.target);
            let tag = format!("g{generation}/o{index}/mutation");
            let mutated = self
                .chat(&messages, e.mutation_temperature, &tag, &mut log)
                .map_err(EngineError::from)
                .and_then(|r| Ok(parse_single_prompt(&r)?))
                .and_then(|t| Ok(truncate_prompt(&t, self.budget, self.tokenizer.as_ref())?));
            match mutated {
                Ok(p) => {
                    child = p;
                    operator = Operator::CrossoverThenMutation;
                }
                Err(err) if substitutable(&err) => {
                    log::warn!("{tag} failed, keeping the unmutated child: {err}");
                    let note = format!("mutation failed ({err}); kept unmutated child");
                    substitution = Some(match substitution {
                        Some(prev) => format!("{prev}; {note}"),
                        None => note,
                    });
                }
                Err(err) => return Err(err),
            }
        }

        let substituted = substitution.is_some();
        let mut ind = Individual::offspring(
            format!("g{generation}-{index}"),
            child,
            generation,
            operator,
            [p1.id.clone(), p2.id.clone()],
        );
        ind.substitution = substitution;
        Ok(Bred {
            child: ind,
            log,
            mutation_called: mutate,
            substituted,
            images: None,
        })
    }

    fn remember(&self, state_images: &mut HashMap<String, GeneratedImage>, ind: &Individual, images: &[GeneratedImage]) {
        if !self.variant.grounded_crossover() {
            return;
        }
        if let Some(img) = ind.fitness.as_ref().and_then(|f| best_image(f, images)) {
            state_images.insert(ind.prompt.digest(), img);
        }
    }

    fn flush_images(
        &self,
        sink: &mut dyn RunSink,
        state_images: &mut HashMap<String, GeneratedImage>,
        evaluated: &[(&Individual, &Option<Vec<GeneratedImage>>)],
    ) -> Result<(), EngineError> {
        for (ind, images) in evaluated {
            if let Some(images) = images {
                sink.store_images(&ind.prompt.digest(), images)?;
                self.remember(state_images, ind, images);
            }
        }
        Ok(())
    }

    /// Initializes and evaluates generation 0 and commits it.
    pub fn start(&self, sink: &mut dyn RunSink) -> Result<RunState, EngineError> {
        let started = Instant::now();
        let (pop, vlm_log) = self.initialize_population()?;
        let cache = FitnessCache::new();
        let inits = vlm_log.len() as u64;
        let evaluated = parallel_map(pop.individuals.len(), self.cfg.engine.parallelism, |i| {
            self.evaluate_individual(pop.individuals[i].clone(), &cache, 0)
        })?;
        let mut best_images = HashMap::new();
        let pairs: Vec<_> = evaluated.iter().map(|e| (&e.individual, &e.images)).collect();
        self.flush_images(sink, &mut best_images, &pairs)?;
        let population = Population {
            individuals: evaluated.into_iter().map(|e| e.individual).collect(),
            generation_index: 0,
        };
        let record = GenerationRecord {
            generation_index: 0,
            population: population.individuals.clone(),
            offspring: Vec::new(),
            cache_hits: cache.hits(),
            cache_misses: cache.misses(),
            t2i_images: cache.misses() * self.cfg.engine.samples_per_prompt as u64,
            vlm_calls: VlmCallCounts {
                init: inits,
                ..Default::default()
            },
            substitutions: 0,
            duration_ms: started.elapsed().as_millis() as u64,
            vlm_log,
        };
        sink.commit_generation(&record, &cache)?;
        log::info!(
            "generation 0: best {:.4}",
            population.individuals[best_index(&population)?].mean_score().unwrap_or(0.0)
        );
        Ok(RunState {
            population,
            cache,
            records: vec![record],
            best_images,
        })
    }

    /// Runs one generation: N offspring, evaluation and survivor selection.
    pub fn step(&self, state: &mut RunState, sink: &mut dyn RunSink) -> Result<(), EngineError> {
        let started = Instant::now();
        let generation = state.population.generation_index + 1;
        let (hits0, misses0) = (state.cache.hits(), state.cache.misses());
        let n = self.cfg.engine.population_size;
        let pop = &state.population;
        let cache = &state.cache;
        let best_images = &state.best_images;
        let bred = parallel_map(n, self.cfg.engine.parallelism, |i| {
            let mut b = self.breed(pop, generation, i, best_images)?;
            let ev = self.evaluate_individual(b.child.clone(), cache, generation)?;
            b.child = ev.individual;
            b.images = ev.images;
            Ok::<_, EngineError>(b)
        })?;

        let mut best_images = std::mem::take(&mut state.best_images);
        let pairs: Vec<_> = bred.iter().map(|b| (&b.child, &b.images)).collect();
        self.flush_images(sink, &mut best_images, &pairs)?;
        state.best_images = best_images;

        let offspring: Vec<Individual> = bred.iter().map(|b| b.child.clone()).collect();
        let survivors = select_survivors(&state.population, &offspring, n)?;
        let misses = state.cache.misses() - misses0;
        let record = GenerationRecord {
            generation_index: generation,
            population: survivors.individuals.clone(),
            offspring,
            cache_hits: state.cache.hits() - hits0,
            cache_misses: misses,
            t2i_images: misses * self.cfg.engine.samples_per_prompt as u64,
            vlm_calls: VlmCallCounts {
                init: 0,
                crossover: n as u64,
                mutation: bred.iter().filter(|b| b.mutation_called).count() as u64,
            },
            substitutions: bred.iter().filter(|b| b.substituted).count() as u64,
            duration_ms: started.elapsed().as_millis() as u64,
            vlm_log: bred.into_iter().flat_map(|b| b.log).collect(),
        };
        sink.commit_generation(&record, &state.cache)?;
        log::info!(
            "generation {generation}: best {:.4}, {} cache hits",
            survivors.individuals[best_index(&survivors)?].mean_score().unwrap_or(0.0),
            record.cache_hits
        );
        state.population = survivors;
        state.records.push(record);
        Ok(())
    }

    /// Steps until T generations are done.
    pub fn finish(&self, mut state: RunState, sink: &mut dyn RunSink) -> Result<RunResult, EngineError> {
        while (state.population.generation_index as usize) < self.cfg.engine.generations {
            self.step(&mut state, sink)?;
        }
        RunResult::from_records(state.records)
    }
}

/// Full run: generation 0 plus T generations of evolution.
pub fn run_evolution(
    target: &TargetImage,
    cfg: &RunConfig,
    backends: &Backends,
    sink: &mut dyn RunSink,
) -> Result<RunResult, EngineError> {
    let engine = Engine::new(cfg, backends, target)?;
    let state = engine.start(sink)?;
    engine.finish(state, sink)
}

/// The single-shot baseline: one VLM request for N prompts, each evaluated,
/// no evolution. Any configured T and p_m are ignored.
pub fn run_baseline(
    target: &TargetImage,
    cfg: &RunConfig,
    backends: &Backends,
    sink: &mut dyn RunSink,
) -> Result<RunResult, EngineError> {
    let mut cfg = cfg.clone();
    cfg.engine.generations = 0;
    cfg.engine.mutation_rate = 0.0;
    run_evolution(target, &cfg, backends, sink)
}

#[cfg(test)]
mod tests;
