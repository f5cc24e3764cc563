//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use fancy_regex::Regex;
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use promptevolver::analysis::{binomial_one_sided, load_win_table, render, Report, ReportFormat};
use promptevolver::backends::sim::{SimT2i, SimVlm, SimWorld};
use promptevolver::backends::{BackendError, Backends, VlmBackend, VlmDescriptor};
use promptevolver::engine::{tournament_select, Engine, NullSink, Population};
use promptevolver::rng::SeedTree;
use promptevolver::runstore::{resume_run, start_run, RunMode, RunStore};
use promptevolver::templates::{
    parse_population, parse_single_prompt, truncate_prompt, Role, TemplateSet, TemplateVariant, TokenBudget, VlmMessage,
};
use promptevolver::tokenizer::{Tokenizer, WordPunctTokenizer};
use promptevolver::{
    run_baseline, run_evolution, FitnessRecord, GeneratedImage, Individual, Prompt, RunConfig, RunResult, TargetImage,
    TemplateFamily,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn setup(seed: u64) -> (RunConfig, Arc<SimWorld>, TargetImage) {
    let mut cfg = RunConfig::default();
    cfg.engine.rng_seed = seed;
    let world = Arc::new(SimWorld::generate(seed, &cfg.backends.sim));
    let target = world.target_image("sim");
    (cfg, world, target)
}

fn best_per_generation(r: &RunResult) -> Vec<f64> {
    r.generation_records
        .iter()
        .map(|g| g.population.iter().filter_map(Individual::mean_score).fold(f64::MIN, f64::max))
        .collect()
}

fn budget_parity() -> Outcome {
    let (cfg, world, target) = setup(1);
    let evo = run_evolution(&target, &cfg, &Backends::sim(world.clone()), &mut NullSink).map_err(|e| e.to_string())?;
    let base = run_baseline(&target, &RunConfig::baseline(), &Backends::sim(world), &mut NullSink)
        .map_err(|e| e.to_string())?;
    ensure!(evo.total_prompts_created == 60, "evolution created {}", evo.total_prompts_created);
    ensure!(base.total_prompts_created == 60, "baseline created {}", base.total_prompts_created);
    Ok(format!(
        "evolution N=10,T=5 created {}, baseline N=60,T=0 created {}",
        evo.total_prompts_created, base.total_prompts_created
    ))
}

fn elitism() -> Outcome {
    let mut ok = 0;
    for seed in 0..100 {
        let (cfg, world, target) = setup(1000 + seed);
        let r = run_evolution(&target, &cfg, &Backends::sim(world), &mut NullSink).map_err(|e| e.to_string())?;
        let best = best_per_generation(&r);
        if best.windows(2).all(|w| w[1] >= w[0]) {
            ok += 1;
        }
    }
    ensure!(ok == 100, "non-decreasing best fitness in {ok}/100 runs");
    Ok("best mean score non-decreasing in 100/100 runs".into())
}

fn evolution_beats_baseline() -> Outcome {
    let worlds = 30;
    let (mut wins, mut evo_sum, mut base_sum) = (0, 0.0, 0.0);
    for seed in 0..worlds {
        let (cfg, world, target) = setup(5000 + seed);
        let evo = run_evolution(&target, &cfg, &Backends::sim(world.clone()), &mut NullSink).map_err(|e| e.to_string())?;
        let mut base_cfg = RunConfig::baseline();
        base_cfg.engine.rng_seed = cfg.engine.rng_seed;
        let base = run_baseline(&target, &base_cfg, &Backends::sim(world), &mut NullSink).map_err(|e| e.to_string())?;
        let e = evo.best_individual.mean_score().unwrap();
        let b = base.best_individual.mean_score().unwrap();
        evo_sum += e;
        base_sum += b;
        if e > b {
            wins += 1;
        }
    }
    let (em, bm) = (evo_sum / worlds as f64, base_sum / worlds as f64);
    let share = wins as f64 / worlds as f64;
    ensure!(share >= 0.8, "evolution strictly better in {wins}/{worlds} worlds");
    ensure!(em > bm, "mean best fitness {em:.4} (evolution) vs {bm:.4} (baseline)");
    Ok(format!(
        "evolution better in {wins}/{worlds} worlds; mean best {em:.4} vs {bm:.4}"
    ))
}

fn choose(n: u64, k: u64) -> BigUint {
    (0..k).fold(BigUint::one(), |acc, i| acc * BigUint::from(n - i) / BigUint::from(i + 1))
}

fn binomial() -> Outcome {
    let p = binomial_one_sided(521, 956).map_err(|e| e.to_string())?;
    ensure!((0.0025..=0.0035).contains(&p), "p(521, 956) = {p}");
    let mut checked = 0;
    for n in 1..=20u64 {
        for k in 0..=n {
            let num: BigUint = (k..=n).map(|i| choose(n, i)).fold(BigUint::zero(), |a, b| a + b);
            // The numerator is below 2^20, so this division is correctly rounded.
            let exact = num.to_f64().unwrap() / (BigUint::one() << n as usize).to_f64().unwrap();
            let got = binomial_one_sided(k, n).map_err(|e| e.to_string())?;
            ensure!(got == exact, "k={k} n={n}: {got} != {exact}");
            checked += 1;
        }
    }
    Ok(format!("p(521, 956) = {p:.6}; {checked} (k, n) pairs with n <= 20 exact"))
}

fn fixture(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", name].iter().collect()
}

fn win_table() -> Outcome {
    let rows = load_win_table(&fixture("dataset_win_table.csv")).map_err(|e| e.to_string())?;
    let report = Report::from_win_table(rows).map_err(|e| e.to_string())?;
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files = promptevolver::analysis::emit_report(&report, ReportFormat::Csv, out.path()).map_err(|e| e.to_string())?;
    let mut reader = csv::Reader::from_path(&files[0]).map_err(|e| e.to_string())?;
    let total = reader
        .records()
        .map(|r| r.unwrap())
        .find(|r| &r[0] == "Total")
        .ok_or("no totals row")?;
    let (a, b, n): (u64, u64, u64) = (total[2].parse().unwrap(), total[3].parse().unwrap(), total[5].parse().unwrap());
    let pref: f64 = total[6].parse().unwrap();
    ensure!((a, b, n) == (521, 435, 956), "totals {a}/{b}/{n}");
    ensure!((pref - 54.5).abs() <= 0.05, "preference {pref}");
    let md = String::from_utf8(render(&report, ReportFormat::Markdown).remove(0).1).unwrap();
    ensure!(md.contains("| 521 | 435 | 0 | 956 | 54.5 |"), "markdown totals row missing");
    Ok(format!("totals {a}/{b}/{n}, A preferred {pref:.1}%"))
}

/// Answers about 30% of crossovers with the first parent's prompt verbatim.
struct Duplicating {
    inner: SimVlm,
    duplicated: AtomicUsize,
    seeds: SeedTree,
}

impl VlmBackend for Duplicating {
    fn descriptor(&self) -> VlmDescriptor {
        self.inner.descriptor()
    }

    fn chat(&self, messages: &[VlmMessage], temperature: f64, call_tag: &str) -> Result<String, BackendError> {
        if call_tag.ends_with("/crossover") && self.seeds.derive_u64("dup", call_tag) % 10 < 3 {
            let user = messages.iter().rev().find(|m| m.role == Role::User).unwrap();
            let p1 = user.text.lines().find_map(|l| l.strip_prefix("Prompt 1: ")).unwrap();
            self.duplicated.fetch_add(1, Ordering::SeqCst);
            return Ok(format!("<prompt>{p1}</prompt>"));
        }
        self.inner.chat(messages, temperature, call_tag)
    }
}

fn cache_contract() -> Outcome {
    let (mut cfg, world, target) = setup(77);
    cfg.engine.population_size = 20;
    cfg.engine.generations = 10;
    cfg.engine.mutation_rate = 0.0;
    let t2i = Arc::new(SimT2i::new(world.clone()));
    let vlm = Arc::new(Duplicating {
        inner: SimVlm::new(world.clone()),
        duplicated: AtomicUsize::new(0),
        seeds: SeedTree::new(5),
    });
    let backends = Backends {
        vlm: vlm.clone(),
        t2i: t2i.clone(),
        ..Backends::sim(world)
    };
    let r = run_evolution(&target, &cfg, &backends, &mut NullSink).map_err(|e| e.to_string())?;
    let mut distinct = BTreeSet::new();
    let mut created = 0;
    for g in &r.generation_records {
        let made = if g.generation_index == 0 { &g.population } else { &g.offspring };
        for ind in made {
            distinct.insert(ind.text().to_string());
            created += 1;
        }
    }
    let offspring = created - cfg.engine.population_size;
    let dup = vlm.duplicated.load(Ordering::SeqCst) as f64 / offspring as f64;
    ensure!((0.2..=0.4).contains(&dup), "duplicate share {dup:.2}");
    let k = cfg.engine.samples_per_prompt;
    let calls = t2i.images_generated();
    ensure!(calls == k * distinct.len(), "{calls} T2I calls for {} distinct prompts", distinct.len());
    Ok(format!(
        "{:.0}% forced duplicates; {calls} T2I calls = {k} x {} distinct of {created} prompts",
        dup * 100.0,
        distinct.len()
    ))
}

fn ind(id: &str, text: &str, score: f64) -> Individual {
    let mut i = Individual::init(id, Prompt::new(text, &WordPunctTokenizer).unwrap(), 0.3);
    i.fitness = Some(FitnessRecord::from_scores(vec![score], vec![format!("{id}.png")], "sim").unwrap());
    i
}

fn mutation_statistics() -> Outcome {
    let (cfg, world, target) = setup(31);
    let backends = Backends::sim(world);
    let engine = Engine::new(&cfg, &backends, &target).map_err(|e| e.to_string())?;
    let pop = Population {
        individuals: (0..10).map(|i| ind(&format!("i{i}"), &format!("p{i}"), i as f64 / 10.0)).collect(),
        generation_index: 0,
    };
    let (gens, per_gen) = (1000u32, 10usize);
    let mut mutated = 0;
    for g in 1..=gens {
        for i in 0..per_gen {
            if engine.offspring_plan(&pop, g, i).map_err(|e| e.to_string())?.mutate {
                mutated += 1;
            }
        }
    }
    let frac = mutated as f64 / (gens as usize * per_gen) as f64;
    ensure!((frac - 0.10).abs() <= 0.01, "mutated fraction {frac}");

    let trio = Population {
        individuals: vec![ind("A", "a", 0.9), ind("B", "b", 0.5), ind("C", "c", 0.1)],
        generation_index: 0,
    };
    let mut rng = SeedTree::new(2024).stream("tournament-fixture", &[]);
    let trials = 10_000;
    let mut a = 0;
    for _ in 0..trials {
        if tournament_select(&trio, 2, &mut rng).map_err(|e| e.to_string())?.id == "A" {
            a += 1;
        }
    }
    let pa = a as f64 / trials as f64;
    ensure!((pa - 2.0 / 3.0).abs() <= 0.03, "P(select A) = {pa}");
    Ok(format!("mutated fraction {frac:.4} over 10000 offspring; P(select A) = {pa:.4}"))
}

fn determinism_and_resume() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (cfg, _, target) = setup(4242);
    let sim = |c: &RunConfig, t: &TargetImage| Backends::from_config(c, t);
    let backends = sim(&cfg, &target).map_err(|e| e.to_string())?;
    let (_, full) = start_run(root.path(), "a", RunMode::Evolution, None, &cfg, &target, &backends).map_err(|e| e.to_string())?;
    let backends = sim(&cfg, &target).map_err(|e| e.to_string())?;
    let (_, again) = start_run(root.path(), "b", RunMode::Evolution, None, &cfg, &target, &backends).map_err(|e| e.to_string())?;
    ensure!(full.canonical_json() == again.canonical_json(), "repeated runs differ");
    for crash_at in 0..=cfg.engine.generations as u32 {
        let id = format!("crash-{crash_at}");
        let backends = sim(&cfg, &target).map_err(|e| e.to_string())?;
        {
            let mut store = RunStore::create(root.path(), &id, RunMode::Evolution, &cfg, &target, None).map_err(|e| e.to_string())?;
            store.inject_crash_before_commit(crash_at);
            let engine = Engine::new(&cfg, &backends, &target).map_err(|e| e.to_string())?;
            let outcome = engine.start(&mut store).and_then(|s| engine.finish(s, &mut store));
            ensure!(outcome.is_err(), "injected crash at {crash_at} did not interrupt the run");
        }
        let resumed = resume_run(&root.path().join(&id), sim).map_err(|e| e.to_string())?;
        ensure!(
            resumed.canonical_json() == full.canonical_json(),
            "resume after crash at generation {crash_at} diverged"
        );
    }
    Ok("repeated runs identical; resume after interruption at each of generations 0-5 identical".into())
}

fn golden(name: &str) -> String {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "golden", "templates", name].iter().collect();
    std::fs::read_to_string(path).unwrap()
}

fn template_fidelity() -> Outcome {
    let v: std::collections::BTreeMap<String, String> = serde_json::from_str(&golden("values.json")).unwrap();
    let p = |t: &str| Prompt::new(t, &WordPunctTokenizer).unwrap();
    let set = TemplateSet::builtin();
    let world = SimWorld::generate(1, &Default::default());
    let target = world.target_image("t");
    let mut compared = 0;
    for (family, stem) in [
        (TemplateFamily::Structured, "structured"),
        (TemplateFamily::SpatialEmphasis, "spatial"),
        (TemplateFamily::Minimal, "minimal"),
    ] {
        let variant = TemplateVariant::plain(family);
        let rendered = [
            ("init", set.render_init(v["n"].parse().unwrap(), variant, &target)),
            (
                "crossover",
                set.render_crossover(&p(&v["prompt_1"]), &p(&v["prompt_2"]), variant, &target, None)
                    .map_err(|e| e.to_string())?,
            ),
            ("mutation", set.render_mutation(&p(&v["prompt"]), variant, &target)),
        ];
        for (op, msgs) in rendered {
            ensure!(msgs[0].text == golden(&format!("{stem}.system.txt")), "{stem} system text differs");
            ensure!(msgs[1].text == golden(&format!("{stem}.{op}.txt")), "{stem}.{op} differs");
            compared += 1;
        }
    }
    let g = GeneratedImage::new(world.target_image_bytes(), 0, "x").unwrap();
    let grounded = TemplateVariant::new(TemplateFamily::Structured, true).map_err(|e| e.to_string())?;
    let msgs = set
        .render_crossover(&p(&v["prompt_1"]), &p(&v["prompt_2"]), grounded, &target, Some((&g, &g)))
        .map_err(|e| e.to_string())?;
    ensure!(msgs[1].text == golden("structured.crossover_grounded.txt"), "grounded crossover differs");
    compared += 1;

    let corpus: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(fixture("parse_corpus.json")).unwrap()).unwrap();
    let oracle = Regex::new(r"<prompt(\s[^<>]*)?>((?:(?!<prompt[\s>])[\s\S])*?)</prompt>").unwrap();
    for case in &corpus {
        let name = case["name"].as_str().unwrap();
        let input = case["input"].as_str().unwrap();
        let n = case["expected_n"].as_u64().unwrap() as usize;
        let got = parse_population(input, n).ok().map(|p| p.entries);
        let want: Option<Vec<(String, f64)>> = case["population"]
            .get("entries")
            .map(|e| serde_json::from_value(e.clone()).unwrap());
        ensure!(got == want, "corpus case {name}: population {got:?} != {want:?}");
        let single = parse_single_prompt(input).ok();
        ensure!(single.as_deref() == case["single"].as_str(), "corpus case {name}: single prompt");
        let live: Vec<String> = oracle
            .captures_iter(input)
            .map(|c| c.unwrap().get(2).unwrap().as_str().trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        ensure!(single == live.last().cloned(), "corpus case {name}: live oracle disagrees");
    }
    Ok(format!("{compared} renderings match golden files; {} parse cases pass", corpus.len()))
}

fn truncation() -> Outcome {
    let tok = WordPunctTokenizer;
    let budget = TokenBudget::default();
    let token = prop_oneof!["[a-zA-Z0-9]{1,10}", "[,.;:!?()'\"-]", "[éü東🦊]{1,2}"];
    let text = prop::collection::vec((token, prop_oneof![Just(" "), Just(""), Just("\n")]), 1..=500)
        .prop_map(|v| v.into_iter().map(|(t, s)| format!("{t}{s}")).collect::<String>());
    let mut runner = TestRunner::new(PropConfig {
        cases: 300,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let max_seen = std::cell::Cell::new(0usize);
    runner
        .run(&text, |t| {
            let once = truncate_prompt(&t, budget, &tok).unwrap();
            let n = tok.count(once.text());
            max_seen.set(max_seen.get().max(n));
            prop_assert!(n <= 75);
            let twice = truncate_prompt(once.text(), budget, &tok).unwrap();
            prop_assert_eq!(once.text(), twice.text());
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("300 random texts of 1-500 tokens: at most {} tokens kept, idempotent", max_seen.get()))
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    check: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "budget parity", limit: Some(Duration::from_secs(1)), check: budget_parity },
        Criterion { id: 2, name: "elitism invariant", limit: Some(Duration::from_secs(10)), check: elitism },
        Criterion { id: 3, name: "evolution beats baseline", limit: Some(Duration::from_secs(30)), check: evolution_beats_baseline },
        Criterion { id: 4, name: "binomial reproduction", limit: Some(Duration::from_secs(1)), check: binomial },
        Criterion { id: 5, name: "win-table reproduction", limit: Some(Duration::from_secs(1)), check: win_table },
        Criterion { id: 6, name: "cache contract", limit: None, check: cache_contract },
        Criterion { id: 7, name: "mutation-rate statistics", limit: None, check: mutation_statistics },
        Criterion { id: 8, name: "determinism and resumability", limit: None, check: determinism_and_resume },
        Criterion { id: 9, name: "template fidelity", limit: None, check: template_fidelity },
        Criterion { id: 10, name: "truncation", limit: None, check: truncation },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(msg), Some(limit)) if elapsed > limit => Err(format!("{msg}; took {elapsed:.2?}, limit {limit:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(msg) => println!("PASS criterion {:>2} ({}): {msg} [{:.2?}]", c.id, c.name, elapsed),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {:>2} ({}): {msg} [{:.2?}]", c.id, c.name, elapsed);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
