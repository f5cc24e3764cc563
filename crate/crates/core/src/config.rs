//! Run configuration: parsing, defaults and validation.
//!
//! The configuration file is TOML with four sections (`engine`, `backends`,
//! `templates`, `storage`). Every key is optional; missing keys take the
//! defaults below.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::TokenizerRegistry;

pub const GUIDANCE_SCORERS: [&str; 5] = ["clip", "blip", "dreamsim", "openclip", "sim"];

pub const ENV_VLM_URL: &str = "PE_VLM_URL";
pub const ENV_VLM_KEY: &str = "PE_VLM_KEY";
pub const ENV_T2I_URL: &str = "PE_T2I_URL";
pub const ENV_T2I_KEY: &str = "PE_T2I_KEY";
pub const ENV_SCORER_URL: &str = "PE_SCORER_URL";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("missing required field `{0}`")]
    MissingField(String),
    #[error("value out of range for `{key}`: {reason}")]
    OutOfRange { key: String, reason: String },
    #[error("unknown guidance scorer `{0}` (expected one of clip, blip, dreamsim, openclip, sim)")]
    UnknownScorer(String),
    #[error("unknown template variant `{0}` (expected structured, minimal or spatial_emphasis)")]
    UnknownTemplateVariant(String),
    #[error("malformed configuration: {0}")]
    Parse(String),
}

impl ConfigError {
    fn range(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::OutOfRange {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateFamily {
    Structured,
    Minimal,
    #[serde(alias = "spatial")]
    SpatialEmphasis,
}

impl TemplateFamily {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "structured" => Some(Self::Structured),
            "minimal" => Some(Self::Minimal),
            "spatial" | "spatial_emphasis" => Some(Self::SpatialEmphasis),
            _ => None,
        }
    }

    /// Name used in template resource file names.
    pub fn file_stem(self) -> &'static str {
        match self {
            Self::Structured => "structured",
            Self::Minimal => "minimal",
            Self::SpatialEmphasis => "spatial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    Sim,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub population_size: usize,
    pub generations: usize,
    pub samples_per_prompt: usize,
    pub mutation_rate: f64,
    pub tournament_size: usize,
    pub crossover_temperature: f64,
    pub mutation_temperature: f64,
    pub init_temperature: f64,
    pub token_limit: usize,
    pub reserved_special_tokens: usize,
    pub tokenizer: String,
    pub guidance_scorer: String,
    #[serde(with = "seed_repr")]
    pub rng_seed: u64,
    pub parallelism: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            population_size: 10,
            generations: 5,
            samples_per_prompt: 3,
            mutation_rate: 0.1,
            tournament_size: 2,
            crossover_temperature: 0.7,
            mutation_temperature: 0.9,
            init_temperature: 0.7,
            token_limit: 77,
            reserved_special_tokens: 2,
            tokenizer: crate::tokenizer::DEFAULT_TOKENIZER.to_string(),
            guidance_scorer: "clip".to_string(),
            rng_seed: 0,
            parallelism: 4,
        }
    }
}

impl EngineConfig {
    /// Total number of prompts a run creates: N × (T + 1).
    pub fn prompt_budget(&self) -> usize {
        self.population_size * (self.generations + 1)
    }

    pub fn max_content_tokens(&self) -> usize {
        self.token_limit - self.reserved_special_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VlmEndpoint {
    pub url: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub model: String,
    pub max_attachments: usize,
}

impl Default for VlmEndpoint {
    fn default() -> Self {
        Self {
            url: None,
            api_key_env: ENV_VLM_KEY.to_string(),
            model: "qwen3-vl-8b-instruct".to_string(),
            max_attachments: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct T2iEndpoint {
    pub url: Option<String>,
    pub api_key_env: String,
    pub model: String,
    pub size: String,
}

impl Default for T2iEndpoint {
    fn default() -> Self {
        Self {
            url: None,
            api_key_env: ENV_T2I_KEY.to_string(),
            model: "flux.2-klein-4b".to_string(),
            size: "1024x1024".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerEndpoint {
    pub url: Option<String>,
    pub score_min: f64,
    pub score_max: f64,
}

impl Default for ScorerEndpoint {
    fn default() -> Self {
        Self {
            url: None,
            score_min: -1.0,
            score_max: 1.0,
        }
    }
}

/// Parameters of the deterministic simulation world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Probability that the generator drops a described feature.
    pub dropout: f64,
    /// Number of target features when the world is synthesised.
    pub feature_count: usize,
    /// Probability that an initial prompt mentions a given target feature.
    pub init_coverage: f64,
    /// Expected noise tokens per initial prompt at temperature 1.
    pub noise_rate: f64,
    /// Seed salt for the generator; changing it models a different T2I model.
    pub generator_salt: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dropout: 0.1,
            feature_count: 12,
            init_coverage: 0.5,
            noise_rate: 2.0,
            generator_salt: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub mode: BackendMode,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub vlm: VlmEndpoint,
    pub t2i: T2iEndpoint,
    /// Scorer endpoints keyed by guidance id.
    pub scorers: BTreeMap<String, ScorerEndpoint>,
    pub sim: SimConfig,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        Self {
            mode: BackendMode::Sim,
            max_retries: 3,
            backoff_base_ms: 500,
            max_in_flight: 4,
            timeout_secs: 120,
            vlm: VlmEndpoint::default(),
            t2i: T2iEndpoint::default(),
            scorers: BTreeMap::new(),
            sim: SimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatesConfig {
    pub template_variant: TemplateFamily,
    pub crossover_grounding: bool,
    /// Directory of `<family>.<operator>.txt` files overriding the built-ins.
    pub override_dir: Option<PathBuf>,
}

impl Default for TemplatesConfig {
    fn default() -> Self {
        Self {
            template_variant: TemplateFamily::Structured,
            crossover_grounding: false,
            override_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageConfig {
    pub root: PathBuf,
}

impl Default for StorageConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("runs"),
        }
    }
}

/// A validated run configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub engine: EngineConfig,
    pub backends: BackendsConfig,
    pub templates: TemplatesConfig,
    pub storage: StorageConfig,
}

impl RunConfig {
    /// The VLM-Baseline configuration: N = 60, T = 0, p_m = 0.
    pub fn baseline() -> Self {
        let mut cfg = Self::default();
        cfg.engine.population_size = 60;
        cfg.engine.generations = 0;
        cfg.engine.mutation_rate = 0.0;
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        validate_config(&table)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serializes to a TOML table")
    }

    /// Re-checks every invariant. Called after overrides are applied.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.engine;
        if e.population_size < 2 {
            return Err(ConfigError::range("population_size", "must be at least 2"));
        }
        if e.samples_per_prompt < 1 {
            return Err(ConfigError::range("samples_per_prompt", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&e.mutation_rate) {
            return Err(ConfigError::range("mutation_rate", "must lie in [0, 1]"));
        }
        if e.tournament_size < 1 || e.tournament_size > e.population_size {
            return Err(ConfigError::range(
                "tournament_size",
                format!("must lie in [1, population_size = {}]", e.population_size),
            ));
        }
        for (key, t) in [
            ("crossover_temperature", e.crossover_temperature),
            ("mutation_temperature", e.mutation_temperature),
            ("init_temperature", e.init_temperature),
        ] {
            if !t.is_finite() || !(0.0..=2.0).contains(&t) {
                return Err(ConfigError::range(key, "must lie in [0, 2]"));
            }
        }
        if e.token_limit <= e.reserved_special_tokens {
            return Err(ConfigError::range(
                "token_limit",
                "must exceed reserved_special_tokens",
            ));
        }
        if TokenizerRegistry::default().get(&e.tokenizer).is_none() {
            return Err(ConfigError::range("tokenizer", format!("unknown tokenizer `{}`", e.tokenizer)));
        }
        if !GUIDANCE_SCORERS.contains(&e.guidance_scorer.as_str()) {
            return Err(ConfigError::UnknownScorer(e.guidance_scorer.clone()));
        }
        if e.parallelism < 1 {
            return Err(ConfigError::range("parallelism", "must be at least 1"));
        }
        if e.population_size.checked_mul(e.generations.saturating_add(1)).is_none() {
            return Err(ConfigError::range("generations", "prompt budget overflows"));
        }

        let b = &self.backends;
        if b.max_in_flight < 1 {
            return Err(ConfigError::range("max_in_flight", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&b.sim.dropout) {
            return Err(ConfigError::range("dropout", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&b.sim.init_coverage) {
            return Err(ConfigError::range("init_coverage", "must lie in [0, 1]"));
        }
        if b.sim.feature_count < 1 {
            return Err(ConfigError::range("feature_count", "must be at least 1"));
        }
        if !b.sim.noise_rate.is_finite() || b.sim.noise_rate < 0.0 {
            return Err(ConfigError::range("noise_rate", "must be non-negative"));
        }
        for (id, s) in &b.scorers {
            if !(s.score_min < s.score_max) {
                return Err(ConfigError::range(
                    &format!("scorers.{id}.score_max"),
                    "score_max must exceed score_min",
                ));
            }
        }
        if b.mode == BackendMode::Http {
            if b.vlm.max_attachments < 1 {
                return Err(ConfigError::range("max_attachments", "must be at least 1"));
            }
            if resolve(&b.vlm.url, ENV_VLM_URL).is_none() {
                return Err(ConfigError::MissingField("backends.vlm.url".into()));
            }
            if resolve(&b.t2i.url, ENV_T2I_URL).is_none() {
                return Err(ConfigError::MissingField("backends.t2i.url".into()));
            }
            if e.guidance_scorer == "sim" {
                return Err(ConfigError::range(
                    "guidance_scorer",
                    "the sim scorer is only available with the sim backend",
                ));
            }
            let scorer_url = b.scorers.get(&e.guidance_scorer).and_then(|s| s.url.clone());
            if resolve(&scorer_url, ENV_SCORER_URL).is_none() {
                return Err(ConfigError::MissingField(format!(
                    "backends.scorers.{}.url",
                    e.guidance_scorer
                )));
            }
        }

        if self.templates.crossover_grounding
            && self.templates.template_variant != TemplateFamily::Structured
        {
            return Err(ConfigError::range(
                "crossover_grounding",
                "grounded crossover exists only for the structured template family",
            ));
        }
        Ok(())
    }
}

/// TOML integers are signed 64-bit, so seeds above `i64::MAX` are written as
/// decimal strings. Both forms are accepted on input.
mod seed_repr {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        struct SeedVisitor;
        impl Visitor<'_> for SeedVisitor {
            type Value = u64;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a non-negative 64-bit integer or its decimal string")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<u64, E> {
                Ok(v)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<u64, E> {
                u64::try_from(v).map_err(|_| E::custom("rng_seed must be non-negative"))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<u64, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(SeedVisitor)
    }
}

/// A configured value, falling back to an environment variable.
pub fn resolve(configured: &Option<String>, env_var: &str) -> Option<String> {
    configured
        .clone()
        .or_else(|| std::env::var(env_var).ok())
        .filter(|s| !s.trim().is_empty())
}

/// Applies defaults to a parsed configuration document and checks every
/// invariant.
pub fn validate_config(raw: &toml::Table) -> Result<RunConfig, ConfigError> {
    if let Some(v) = raw
        .get("templates")
        .and_then(|t| t.get("template_variant"))
    {
        let name = v.as_str().unwrap_or_default();
        if TemplateFamily::parse(name).is_none() {
            return Err(ConfigError::UnknownTemplateVariant(v.to_string()));
        }
    }
    if let Some(v) = raw.get("engine").and_then(|t| t.get("guidance_scorer")) {
        let name = v.as_str().unwrap_or_default();
        if !GUIDANCE_SCORERS.contains(&name) {
            return Err(ConfigError::UnknownScorer(name.to_string()));
        }
    }
    let cfg: RunConfig = toml::Value::Table(raw.clone())
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> toml::Table {
        text.parse().unwrap()
    }

    #[test]
    fn empty_document_gets_defaults() {
        let cfg = validate_config(&toml::Table::new()).unwrap();
        assert_eq!(cfg.engine.population_size, 10);
        assert_eq!(cfg.engine.generations, 5);
        assert_eq!(cfg.engine.samples_per_prompt, 3);
        assert_eq!(cfg.engine.mutation_rate, 0.1);
        assert_eq!(cfg.engine.tournament_size, 2);
        assert_eq!(cfg.engine.crossover_temperature, 0.7);
        assert_eq!(cfg.engine.mutation_temperature, 0.9);
        assert_eq!(cfg.engine.token_limit, 77);
        assert_eq!(cfg.engine.max_content_tokens(), 75);
        assert_eq!(cfg.templates.template_variant, TemplateFamily::Structured);
        assert!(!cfg.templates.crossover_grounding);
    }

    #[test]
    fn baseline_config_is_valid() {
        let cfg = validate_config(&table(
            "[engine]\npopulation_size = 60\ngenerations = 0\nmutation_rate = 0.0\n",
        ))
        .unwrap();
        assert_eq!(cfg, RunConfig::baseline());
    }

    #[test]
    fn budget_parity_between_defaults() {
        assert_eq!(RunConfig::default().engine.prompt_budget(), 60);
        assert_eq!(RunConfig::baseline().engine.prompt_budget(), 60);
    }

    #[test]
    fn population_of_one_is_rejected() {
        let err = validate_config(&table("[engine]\npopulation_size = 1\n")).unwrap_err();
        assert!(matches!(err, ConfigError::OutOfRange { ref key, .. } if key == "population_size"));
    }

    #[test]
    fn range_errors_name_their_key() {
        let cases = [
            ("[engine]\nmutation_rate = 1.5\n", "mutation_rate"),
            ("[engine]\ntournament_size = 11\n", "tournament_size"),
            ("[engine]\nsamples_per_prompt = 0\n", "samples_per_prompt"),
            ("[engine]\ntoken_limit = 2\n", "token_limit"),
            ("[backends.sim]\ndropout = 1.0\n", "dropout"),
            (
                "[templates]\ntemplate_variant = \"minimal\"\ncrossover_grounding = true\n",
                "crossover_grounding",
            ),
        ];
        for (text, key) in cases {
            match validate_config(&table(text)) {
                Err(ConfigError::OutOfRange { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_names() {
        assert_eq!(
            validate_config(&table("[engine]\nguidance_scorer = \"nosuch\"\n")),
            Err(ConfigError::UnknownScorer("nosuch".into()))
        );
        assert!(matches!(
            validate_config(&table("[templates]\ntemplate_variant = \"fancy\"\n")),
            Err(ConfigError::UnknownTemplateVariant(_))
        ));
        assert!(matches!(
            validate_config(&table("[engine]\npopulaton_size = 3\n")),
            Err(ConfigError::Parse(_))
        ));
        let spatial = validate_config(&table("[templates]\ntemplate_variant = \"spatial\"\n")).unwrap();
        assert_eq!(spatial.templates.template_variant, TemplateFamily::SpatialEmphasis);
    }

    #[test]
    fn http_mode_requires_endpoints() {
        let err = validate_config(&table(
            "[backends]\nmode = \"http\"\n[backends.vlm]\nurl = \"http://localhost:1/v1/chat/completions\"\n[backends.t2i]\nurl = \"http://localhost:2/v1/images\"\n[backends.scorers.clip]\nurl = \"http://localhost:3/score\"\n",
        ));
        assert!(err.is_ok(), "{err:?}");
        let err = validate_config(&table(
            "[backends]\nmode = \"http\"\n[backends.vlm]\nurl = \"http://x\"\n[backends.t2i]\nurl = \"http://y\"\n[backends.scorers.clip]\nurl = \"http://z\"\n[engine]\nguidance_scorer = \"blip\"\n",
        ));
        if std::env::var(ENV_SCORER_URL).is_err() {
            assert_eq!(
                err,
                Err(ConfigError::MissingField("backends.scorers.blip.url".into()))
            );
        }
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = validate_config(&table(
            "[engine]\npopulation_size = 7\nrng_seed = \"18446744073709551615\"\n[templates]\ntemplate_variant = \"spatial_emphasis\"\n[backends.scorers.clip]\nurl = \"http://h/score\"\n",
        ))
        .unwrap();
        let again = validate_config(&cfg.to_table()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.engine.rng_seed, u64::MAX);
    }
}
