use proptest::prelude::*;

use promptevolver::analysis::{aggregate, binomial_one_sided, ScoreRow};
use promptevolver::config::{validate_config, RunConfig, TemplateFamily};
use promptevolver::templates::{parse_population, truncate_prompt, TokenBudget};
use promptevolver::tokenizer::{Tokenizer, WordPunctTokenizer};

fn token() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9]{1,12}",
        "[,.;:!?()\\-'\"]",
        "[éüñ東京🦊]{1,3}",
    ]
}

fn text(max_tokens: usize) -> impl Strategy<Value = String> {
    prop::collection::vec((token(), prop_oneof![Just(" "), Just(""), Just("\n"), Just("  ")]), 1..=max_tokens)
        .prop_map(|parts| parts.into_iter().map(|(t, s)| format!("{t}{s}")).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn truncation_fits_and_is_idempotent(t in text(500)) {
        let tok = WordPunctTokenizer;
        let budget = TokenBudget::default();
        let once = truncate_prompt(&t, budget, &tok).unwrap();
        prop_assert!(tok.count(once.text()) <= 75);
        let twice = truncate_prompt(once.text(), budget, &tok).unwrap();
        prop_assert_eq!(once.text(), twice.text());
        if tok.count(&t) <= 75 {
            prop_assert_eq!(once.text(), t.as_str());
        } else {
            prop_assert!(t.starts_with(once.text()));
        }
    }

    #[test]
    fn parse_never_exceeds_expected(n_tags in 0usize..20, expected in 0usize..25, junk in "[a-z <>/]{0,40}") {
        let mut doc = junk.clone();
        for i in 0..n_tags {
            doc.push_str(&format!("<prompt probability=\"0.{i}\">p{i}</prompt>{junk}"));
        }
        if let Ok(p) = parse_population(&doc, expected) {
            prop_assert!(p.entries.len() <= expected);
            prop_assert!(p.entries.iter().all(|(_, pr)| (0.0..=1.0).contains(pr)));
        }
    }

    #[test]
    fn binomial_is_monotone_in_k(n in 1u64..400) {
        let mut prev = 1.0f64;
        for k in 0..=n {
            let p = binomial_one_sided(k, n).unwrap();
            prop_assert!(p <= prev + 1e-15, "k={} n={} p={} prev={}", k, n, p, prev);
            prop_assert!((0.0..=1.0).contains(&p));
            prev = p;
        }
    }

    #[test]
    fn aggregate_ignores_input_order(scores in prop::collection::vec(0.0f64..1.0, 1..40), seed in any::<u64>()) {
        let rows: Vec<ScoreRow> = scores.iter().enumerate().map(|(i, s)| ScoreRow {
            dataset: format!("d{}", i % 3),
            metric: "clip".into(),
            method: format!("m{}", i % 2),
            score: *s,
        }).collect();
        let mut shuffled = rows.clone();
        let len = shuffled.len();
        let mut state = seed;
        for i in (1..len).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(aggregate(&rows).unwrap(), aggregate(&shuffled).unwrap());
    }

    #[test]
    fn config_round_trips(
        n in 2usize..200,
        t in 0usize..50,
        k in 1usize..8,
        pm in 0.0f64..=1.0,
        seed in any::<u64>(),
        family in prop_oneof![Just(TemplateFamily::Structured), Just(TemplateFamily::Minimal), Just(TemplateFamily::SpatialEmphasis)],
        par in 1usize..16,
    ) {
        let mut cfg = RunConfig::default();
        cfg.engine.population_size = n;
        cfg.engine.generations = t;
        cfg.engine.samples_per_prompt = k;
        cfg.engine.mutation_rate = pm;
        cfg.engine.rng_seed = seed;
        cfg.engine.parallelism = par;
        cfg.templates.template_variant = family;
        let text = cfg.to_toml_string();
        let parsed = RunConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(validate_config(&cfg.to_table()).unwrap(), cfg);
    }
}
