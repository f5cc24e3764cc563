use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::*;
use crate::backends::sim::{SimT2i, SimVlm, SimWorld};
use crate::backends::{T2iDescriptor, VlmBackend, VlmDescriptor};
use crate::config::{RunConfig, TemplateFamily};
use crate::templates::VlmMessage;

fn setup(seed: u64) -> (RunConfig, Arc<SimWorld>, TargetImage) {
    let mut cfg = RunConfig::default();
    cfg.engine.rng_seed = seed;
    let world = Arc::new(SimWorld::generate(seed, &cfg.backends.sim));
    let target = world.target_image("sim");
    (cfg, world, target)
}

fn run(cfg: &RunConfig, backends: &Backends, target: &TargetImage) -> RunResult {
    run_evolution(target, cfg, backends, &mut NullSink).unwrap()
}

/// Wraps the simulated VLM and fails calls whose tag matches.
struct FailingVlm {
    inner: SimVlm,
    fail_on: &'static str,
    err: BackendError,
}

impl VlmBackend for FailingVlm {
    fn descriptor(&self) -> VlmDescriptor {
        self.inner.descriptor()
    }

    fn chat(&self, messages: &[VlmMessage], temperature: f64, call_tag: &str) -> Result<String, BackendError> {
        if call_tag.contains(self.fail_on) {
            return Err(self.err.clone());
        }
        self.inner.chat(messages, temperature, call_tag)
    }
}

/// Answers every init request with a fixed text.
struct ScriptedInit {
    inner: SimVlm,
    replies: Vec<String>,
    calls: AtomicUsize,
}

impl VlmBackend for ScriptedInit {
    fn descriptor(&self) -> VlmDescriptor {
        self.inner.descriptor()
    }

    fn chat(&self, messages: &[VlmMessage], temperature: f64, call_tag: &str) -> Result<String, BackendError> {
        if call_tag.starts_with("init/") {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            return Ok(self.replies.get(i).cloned().unwrap_or_default());
        }
        self.inner.chat(messages, temperature, call_tag)
    }
}

struct BrokenT2i;

impl T2IBackend for BrokenT2i {
    fn descriptor(&self) -> T2iDescriptor {
        T2iDescriptor {
            id: "broken".into(),
            image_size: "64x1".into(),
        }
    }

    fn generate_one(&self, _: &Prompt, _: u64) -> Result<GeneratedImage, BackendError> {
        Err(BackendError::Transport("connection reset".into()))
    }
}

fn tags(n: usize) -> String {
    (0..n)
        .map(|i| format!("<prompt probability=\"0.1\">prompt number {i}</prompt>"))
        .collect()
}

#[test]
fn default_run_shape_and_accounting() {
    let (cfg, world, target) = setup(3);
    let result = run(&cfg, &Backends::sim(world), &target);
    assert_eq!(result.generation_records.len(), 6);
    assert_eq!(result.total_prompts_created, 60);
    assert_eq!(result.final_population.individuals.len(), 10);
    assert_eq!(result.final_population.generation_index, 5);
    for (t, r) in result.generation_records.iter().enumerate() {
        assert_eq!(r.generation_index as usize, t);
        assert_eq!(r.population.len(), 10);
        if t == 0 {
            assert_eq!(r.vlm_calls.init, 1);
            assert!(r.population.iter().all(|i| i.init_probability.is_some()));
        } else {
            assert_eq!(r.vlm_calls.crossover, 10);
            assert_eq!(r.offspring.len(), 10);
            let mutated = r.offspring.iter().filter(|o| o.operator == Operator::CrossoverThenMutation).count();
            assert_eq!(r.vlm_calls.mutation as usize, mutated);
        }
        assert_eq!(r.t2i_images, r.cache_misses * 3);
        assert_eq!(r.vlm_log.len() as u64, r.vlm_calls.total());
        for ind in &r.population {
            ind.validate().unwrap();
            ind.fitness.as_ref().unwrap().check(3).unwrap();
        }
    }
    let best = result.best_individual.mean_score().unwrap();
    for ind in &result.final_population.individuals {
        assert!(ind.mean_score().unwrap() <= best);
    }
}

#[test]
fn best_fitness_never_decreases() {
    for seed in 0..5 {
        let (cfg, world, target) = setup(seed);
        let result = run(&cfg, &Backends::sim(world), &target);
        let bests: Vec<f64> = result
            .generation_records
            .iter()
            .map(|r| r.population.iter().map(|i| i.mean_score().unwrap()).fold(f64::MIN, f64::max))
            .collect();
        assert!(bests.windows(2).all(|w| w[1] >= w[0]), "{bests:?}");
    }
}

#[test]
fn t2i_calls_match_cache_misses() {
    let (cfg, world, target) = setup(8);
    let t2i = Arc::new(SimT2i::new(world.clone()));
    let backends = Backends {
        t2i: t2i.clone(),
        ..Backends::sim(world)
    };
    let result = run(&cfg, &backends, &target);
    assert_eq!(t2i.images_generated() as u64, result.total_t2i_images);
    assert_eq!(result.total_t2i_images, result.cache_misses * 3);
}

#[test]
fn repeated_runs_are_identical_across_parallelism() {
    let (mut cfg, world, target) = setup(21);
    let a = run(&cfg, &Backends::sim(world.clone()), &target);
    let b = run(&cfg, &Backends::sim(world.clone()), &target);
    cfg.engine.parallelism = 1;
    let c = run(&cfg, &Backends::sim(world), &target);
    assert_eq!(a.canonical_json(), b.canonical_json());
    assert_eq!(a.canonical_json(), c.canonical_json());
}

#[test]
fn mutation_rate_extremes() {
    let (mut cfg, world, target) = setup(4);
    cfg.engine.mutation_rate = 1.0;
    let all = run(&cfg, &Backends::sim(world.clone()), &target);
    for r in &all.generation_records[1..] {
        assert_eq!(r.vlm_calls.mutation, 10);
        assert!(r.offspring.iter().all(|o| o.operator == Operator::CrossoverThenMutation));
    }
    cfg.engine.mutation_rate = 0.0;
    let none = run(&cfg, &Backends::sim(world), &target);
    for r in &none.generation_records[1..] {
        assert_eq!(r.vlm_calls.mutation, 0);
        assert!(r.offspring.iter().all(|o| o.operator == Operator::Crossover));
    }
}

#[test]
fn baseline_is_one_generation() {
    let (mut cfg, world, target) = setup(5);
    cfg.engine.population_size = 60;
    let result = run_baseline(&target, &cfg, &Backends::sim(world), &mut NullSink).unwrap();
    assert_eq!(result.generation_records.len(), 1);
    assert_eq!(result.total_prompts_created, 60);
    assert_eq!(result.total_vlm_calls, 1);
}

#[test]
fn init_follow_up_fills_shortfall() {
    let (cfg, world, target) = setup(6);
    let vlm = Arc::new(ScriptedInit {
        inner: SimVlm::new(world.clone()),
        replies: vec![tags(7), tags(3).replace("number", "extra")],
        calls: AtomicUsize::new(0),
    });
    let backends = Backends {
        vlm: vlm.clone(),
        ..Backends::sim(world)
    };
    let engine = Engine::new(&cfg, &backends, &target).unwrap();
    let (pop, log) = engine.initialize_population().unwrap();
    assert_eq!(pop.individuals.len(), 10);
    assert_eq!(log.len(), 2);
    assert_eq!(log[1].tag, "init/1");
}

#[test]
fn init_underflow_after_two_empty_replies() {
    let (cfg, world, target) = setup(6);
    let backends = Backends {
        vlm: Arc::new(ScriptedInit {
            inner: SimVlm::new(world.clone()),
            replies: vec!["no tags here".into(), "still nothing".into()],
            calls: AtomicUsize::new(0),
        }),
        ..Backends::sim(world)
    };
    let err = run_evolution(&target, &cfg, &backends, &mut NullSink).unwrap_err();
    assert!(matches!(err, EngineError::InitUnderflow { got: 0, wanted: 10 }), "{err}");
}

#[test]
fn failed_crossover_copies_fitter_parent() {
    let (cfg, world, target) = setup(7);
    let backends = Backends {
        vlm: Arc::new(FailingVlm {
            inner: SimVlm::new(world.clone()),
            fail_on: "/crossover",
            err: BackendError::RateLimited { retry_after: None },
        }),
        ..Backends::sim(world)
    };
    let result = run(&cfg, &backends, &target);
    let r1 = &result.generation_records[1];
    assert_eq!(r1.substitutions, 10);
    let parents = &result.generation_records[0].population;
    for o in r1.offspring.iter().filter(|o| o.operator == Operator::Crossover) {
        assert!(o.substitution.as_deref().unwrap().starts_with("crossover failed"));
        let ps: Vec<&Individual> = o
            .parent_ids
            .iter()
            .map(|id| parents.iter().find(|p| &p.id == id).unwrap())
            .collect();
        assert_eq!(o.text(), fitter(ps[0], ps[1]).text());
    }
}

#[test]
fn failed_mutation_keeps_child() {
    let (mut cfg, world, target) = setup(7);
    cfg.engine.mutation_rate = 1.0;
    let backends = Backends {
        vlm: Arc::new(FailingVlm {
            inner: SimVlm::new(world.clone()),
            fail_on: "/mutation",
            err: BackendError::BadResponse("garbled".into()),
        }),
        ..Backends::sim(world)
    };
    let result = run(&cfg, &backends, &target);
    for r in &result.generation_records[1..] {
        assert_eq!(r.substitutions, 10);
        assert_eq!(r.vlm_calls.mutation, 10);
        assert!(r.offspring.iter().all(|o| o.operator == Operator::Crossover));
    }
}

#[test]
fn t2i_failure_aborts() {
    let (cfg, world, target) = setup(9);
    let backends = Backends {
        t2i: Arc::new(BrokenT2i),
        ..Backends::sim(world)
    };
    let err = run_evolution(&target, &cfg, &backends, &mut NullSink).unwrap_err();
    assert!(matches!(err, EngineError::Backend(BackendError::Transport(_))), "{err}");
}

#[test]
fn grounded_crossover_runs_in_sim() {
    let (mut cfg, world, target) = setup(10);
    cfg.templates.crossover_grounding = true;
    let result = run(&cfg, &Backends::sim(world), &target);
    assert_eq!(result.total_prompts_created, 60);
    assert_eq!(result.generation_records[1].substitutions, 0);
}

#[test]
fn every_template_family_runs() {
    for family in [TemplateFamily::Structured, TemplateFamily::Minimal, TemplateFamily::SpatialEmphasis] {
        let (mut cfg, world, target) = setup(11);
        cfg.templates.template_variant = family;
        let result = run(&cfg, &Backends::sim(world), &target);
        assert_eq!(result.total_prompts_created, 60, "{family:?}");
    }
}

#[test]
fn plans_are_reproducible() {
    let (cfg, world, target) = setup(12);
    let backends = Backends::sim(world);
    let engine = Engine::new(&cfg, &backends, &target).unwrap();
    let state = engine.start(&mut NullSink).unwrap();
    let a = engine.offspring_plan(&state.population, 1, 3).unwrap();
    let b = engine.offspring_plan(&state.population, 1, 3).unwrap();
    assert_eq!((a.p1.id.as_str(), a.p2.id.as_str(), a.mutate), (b.p1.id.as_str(), b.p2.id.as_str(), b.mutate));
}
