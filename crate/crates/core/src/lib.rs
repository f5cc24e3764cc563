//! Evolutionary prompt inversion for text-to-image models.
//!
//! Given a target image, a population of natural-language prompts is evolved
//! with a genetic algorithm whose crossover and mutation operators are
//! vision-language-model calls and whose fitness is the mean similarity of
//! K generated images to the target.

pub mod analysis;
pub mod backends;
pub mod config;
pub mod digest;
pub mod engine;
pub mod rng;
pub mod runstore;
pub mod templates;
pub mod tokenizer;
pub mod transfer;
pub mod types;

pub use config::{validate_config, ConfigError, RunConfig, TemplateFamily};
pub use engine::{run_baseline, run_evolution, RunResult};
pub use types::{FitnessRecord, GeneratedImage, Individual, Operator, Prompt, TargetImage};
