//! Deterministic simulation of the VLM, the generator and the scorer.
//!
//! A [`SimWorld`] describes the target as a weighted set of feature tokens.
//! The simulated generator renders the tokens of a prompt into a sim-image,
//! losing each with probability `dropout`; the simulated scorer is the
//! weighted Jaccard similarity of two images' feature sets. The simulated
//! VLM recognises the operator from the rendered template and edits token
//! sets: initial prompts are random feature subsets with noise, crossover
//! keeps shared tokens and the target-matching side of each difference,
//! and mutation makes 1 to 3 edits biased toward the target.
//!
//! All randomness comes from substreams keyed by the world seed and the
//! call tag (or prompt digest and image seed), so results do not depend on
//! call order or thread scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use super::simimage::{self, SimFeature};
use super::{BackendError, ScorerBackend, T2IBackend, T2iDescriptor, VlmBackend, VlmDescriptor};
use crate::config::SimConfig;
use crate::digest::prompt_digest;
use crate::rng::SeedTree;
use crate::templates::{Role, VlmMessage};
use crate::tokenizer::{Tokenizer, WordPunctTokenizer};
use crate::types::{GeneratedImage, Prompt, TargetImage};

const FEATURE_VOCAB: &[&str] = &[
    "fox", "snow", "forest", "river", "bridge", "castle", "lantern", "sunset", "fog", "mountain",
    "lake", "boat", "child", "dog", "cat", "horse", "umbrella", "rain", "street", "neon",
    "market", "bicycle", "tower", "clock", "garden", "roses", "fountain", "statue", "owl", "moon",
    "stars", "desert", "camel", "tent", "campfire", "guitar", "violin", "piano", "candle", "window",
    "curtain", "teacup", "book", "library", "ladder", "train", "station", "platform", "crowd", "kite",
    "beach", "wave", "surfer", "lighthouse", "cliff", "seagull", "harbor", "crane", "warehouse", "graffiti",
    "portrait", "freckles", "scarf", "hat", "glasses", "beard", "smile", "bokeh", "watercolor", "oilpaint",
    "golden", "crimson", "teal", "violet", "amber", "silver", "wooden", "marble", "velvet", "copper",
];

const NOISE_VOCAB: &[&str] = &[
    "dragon", "spaceship", "robot", "volcano", "jellyfish", "cactus", "igloo", "pyramid", "zebra",
    "submarine", "balloon", "carousel", "skyscraper", "penguin", "tornado", "asteroid", "knight",
    "pirate", "waterfall", "glacier", "lightning", "cathedral", "windmill", "tractor", "helmet",
    "banana", "pumpkin", "sword", "crown", "mirror", "feather", "skull", "anchor", "compass",
    "telescope", "hourglass", "pagoda", "bamboo", "flamingo", "octopus",
];

/// The hidden ground truth the simulated services agree on.
#[derive(Debug, Clone, PartialEq)]
pub struct SimWorld {
    /// Feature token to strictly positive weight.
    pub target_features: BTreeMap<String, f64>,
    pub noise_vocab: Vec<String>,
    pub dropout: f64,
    pub init_coverage: f64,
    pub noise_rate: f64,
    pub seed: u64,
    pub generator_salt: u64,
    /// Content hash of a non-sim target image this world stands for.
    pub bound_target: Option<String>,
}

impl SimWorld {
    /// A world with `params.feature_count` random features.
    pub fn generate(seed: u64, params: &SimConfig) -> Self {
        let mut rng = SeedTree::new(seed).stream("sim-world", &[]);
        let n = params.feature_count.clamp(1, FEATURE_VOCAB.len());
        let target_features = FEATURE_VOCAB
            .choose_multiple(&mut rng, n)
            .map(|t| (t.to_string(), rng.gen_range(0.5..2.0)))
            .collect();
        Self::with_features(seed, params, target_features)
    }

    pub fn with_features(seed: u64, params: &SimConfig, target_features: BTreeMap<String, f64>) -> Self {
        assert!(!target_features.is_empty(), "a sim world needs at least one feature");
        assert!(
            target_features.values().all(|w| *w > 0.0 && w.is_finite()),
            "feature weights must be strictly positive"
        );
        let noise_vocab = NOISE_VOCAB
            .iter()
            .map(|s| s.to_string())
            .filter(|s| !target_features.contains_key(s))
            .collect();
        Self {
            target_features,
            noise_vocab,
            dropout: params.dropout,
            init_coverage: params.init_coverage,
            noise_rate: params.noise_rate,
            seed,
            generator_salt: params.generator_salt,
            bound_target: None,
        }
    }

    /// The world for a run on `target`. A sim-image target supplies its own
    /// features; any other image gets a synthetic world bound to its hash.
    pub fn for_target(run_seed: u64, params: &SimConfig, target: &TargetImage) -> Self {
        let seed = SeedTree::new(run_seed).derive_u64("sim-world", target.content_hash());
        let listed = simimage::decode(target.bytes()).map(|feats| {
            feats
                .into_iter()
                .filter(|f| simimage::is_valid_token(&f.token))
                .map(|f| (f.token.to_lowercase(), f.weight.filter(|w| *w > 0.0).unwrap_or(1.0)))
                .collect::<BTreeMap<_, _>>()
        });
        match listed {
            Some(features) if !features.is_empty() => Self::with_features(seed, params, features),
            _ => {
                let mut world = Self::generate(seed, params);
                world.bound_target = Some(target.content_hash().to_string());
                world
            }
        }
    }

    /// Sim-image of the target, carrying feature weights.
    pub fn target_image_bytes(&self) -> Vec<u8> {
        let feats: Vec<_> = self
            .target_features
            .iter()
            .map(|(t, w)| SimFeature::weighted(t.clone(), *w))
            .collect();
        simimage::encode(&feats)
    }

    pub fn target_image(&self, source_id: &str) -> TargetImage {
        TargetImage::from_bytes(self.target_image_bytes(), source_id).expect("sim-images are valid PNGs")
    }

    fn seeds(&self) -> SeedTree {
        SeedTree::new(self.seed)
    }

    fn weight(&self, token: &str) -> f64 {
        self.target_features.get(token).copied().unwrap_or(1.0)
    }

    /// Feature set an image shows, as the scorer sees it.
    pub fn image_features(&self, bytes: &[u8]) -> Result<BTreeSet<String>, BackendError> {
        if let Some(feats) = simimage::decode(bytes) {
            return Ok(feats.into_iter().map(|f| f.token).collect());
        }
        let hash = crate::digest::bytes_digest(bytes);
        if self.bound_target.as_deref() == Some(hash.as_str()) {
            return Ok(self.target_features.keys().cloned().collect());
        }
        Err(BackendError::BadResponse("not a sim-image".into()))
    }

    /// Weighted Jaccard similarity; 1.0 for two empty sets.
    pub fn similarity(&self, a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
        let union: f64 = a.union(b).map(|t| self.weight(t)).sum();
        if union == 0.0 {
            return 1.0;
        }
        let inter: f64 = a.intersection(b).map(|t| self.weight(t)).sum();
        inter / union
    }

    /// Features a generator renders from `prompt` with the given seed.
    pub fn render_features(&self, prompt: &str, seed: u64) -> Vec<String> {
        let mut rng = self.seeds().stream_for_label(
            "sim-t2i",
            &prompt_digest(prompt),
            &[self.generator_salt, seed],
        );
        words(prompt)
            .into_iter()
            .filter(|_| !rng.gen_bool(self.dropout))
            .collect()
    }

    /// Fitness a prompt would get at zero dropout.
    pub fn noiseless_fitness(&self, prompt: &str) -> f64 {
        let shown: BTreeSet<String> = words(prompt).into_iter().collect();
        let target: BTreeSet<String> = self.target_features.keys().cloned().collect();
        self.similarity(&shown, &target)
    }
}

/// Distinct lowercase ASCII word tokens in first-appearance order.
pub fn words(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    WordPunctTokenizer
        .token_spans(text)
        .into_iter()
        .map(|r| text[r].to_lowercase())
        .filter(|w| w.bytes().all(|b| b.is_ascii_alphanumeric()))
        .filter(|w| seen.insert(w.clone()))
        .collect()
}

enum SimRequest {
    Init(usize),
    Crossover(String, String),
    Mutation(String),
}

fn line_after<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.strip_prefix(marker))
        .map(str::trim)
}

fn recognise(messages: &[VlmMessage]) -> Result<SimRequest, BackendError> {
    let user = messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .ok_or(BackendError::UnrecognizedTemplate)?;
    let text = &user.text;
    if let Some(p) = line_after(text, "Current prompt to mutate: ").or_else(|| line_after(text, "Current prompt: ")) {
        return Ok(SimRequest::Mutation(p.to_string()));
    }
    if let (Some(a), Some(b)) = (line_after(text, "Prompt 1: "), line_after(text, "Prompt 2: ")) {
        return Ok(SimRequest::Crossover(a.to_string(), b.to_string()));
    }
    if let Some(rest) = text.find("Generate ").map(|i| &text[i + "Generate ".len()..]) {
        let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
        if rest[digits.len()..].starts_with(" diverse") {
            if let Ok(n) = digits.parse() {
                return Ok(SimRequest::Init(n));
            }
        }
    }
    Err(BackendError::UnrecognizedTemplate)
}

/// Answers a rendered template the way the simulated VLM would.
pub fn sim_vlm_respond(
    world: &SimWorld,
    messages: &[VlmMessage],
    temperature: f64,
    call_tag: &str,
) -> Result<String, BackendError> {
    let mut rng = world
        .seeds()
        .stream_for_label("sim-vlm", call_tag, &[temperature.to_bits()]);
    let features: Vec<&String> = world.target_features.keys().collect();
    match recognise(messages)? {
        SimRequest::Init(n) => {
            let noise_p = (world.noise_rate * temperature / 4.0).clamp(0.0, 1.0);
            let mut prompts = Vec::with_capacity(n);
            for _ in 0..n {
                let mut tokens: Vec<String> = features
                    .iter()
                    .filter(|_| rng.gen_bool(world.init_coverage))
                    .map(|s| s.to_string())
                    .collect();
                if tokens.is_empty() {
                    tokens.push(features.choose(&mut rng).expect("non-empty").to_string());
                }
                let covered = tokens.len();
                for _ in 0..4 {
                    if rng.gen_bool(noise_p) {
                        if let Some(t) = world.noise_vocab.choose(&mut rng) {
                            if !tokens.contains(t) {
                                tokens.push(t.clone());
                            }
                        }
                    }
                }
                tokens.shuffle(&mut rng);
                prompts.push((tokens.join(" "), covered as f64));
            }
            let total: f64 = prompts.iter().map(|(_, c)| c).sum();
            Ok(prompts
                .into_iter()
                .map(|(text, c)| format!("<prompt probability=\"{:.2}\">{text}</prompt>\n", c / total))
                .collect())
        }
        SimRequest::Crossover(a, b) => {
            let (wa, wb) = (words(&a), words(&b));
            let mut child: Vec<String> = wa
                .iter()
                .filter(|t| wb.contains(t) || world.target_features.contains_key(*t))
                .cloned()
                .collect();
            child.extend(
                wb.iter()
                    .filter(|t| !wa.contains(t) && world.target_features.contains_key(*t))
                    .cloned(),
            );
            let text = if child.is_empty() { wa.join(" ") } else { child.join(" ") };
            Ok(format!("<prompt>{text}</prompt>"))
        }
        SimRequest::Mutation(p) => {
            let mut tokens = words(&p);
            let extra_p = (temperature / 1.8).clamp(0.0, 1.0);
            let edits = 1 + (0..2).filter(|_| rng.gen_bool(extra_p)).count();
            for _ in 0..edits {
                let missing: Vec<&String> = features.iter().copied().filter(|f| !tokens.contains(f)).collect();
                let noise_idx: Vec<usize> = (0..tokens.len())
                    .filter(|i| !world.target_features.contains_key(&tokens[*i]))
                    .collect();
                let roll: f64 = rng.gen();
                let choice = if roll < 0.6 { 0 } else if roll < 0.85 { 1 } else { 2 };
                let order = [choice, 0, 1, 2];
                for op in order {
                    match op {
                        0 if !missing.is_empty() => {
                            let w: Vec<f64> = missing.iter().map(|m| world.weight(m)).collect();
                            let dist = rand::distributions::WeightedIndex::new(&w).expect("positive weights");
                            let pick = missing[rng.sample(dist)].clone();
                            let at = rng.gen_range(0..=tokens.len());
                            tokens.insert(at, pick);
                        }
                        1 if !noise_idx.is_empty() => {
                            let i = *noise_idx.choose(&mut rng).expect("non-empty");
                            tokens.remove(i);
                        }
                        2 => {
                            let fresh: Vec<&String> =
                                world.noise_vocab.iter().filter(|t| !tokens.contains(t)).collect();
                            if let Some(t) = fresh.choose(&mut rng) {
                                tokens.push((*t).clone());
                            }
                        }
                        _ => continue,
                    }
                    break;
                }
            }
            if tokens.is_empty() {
                tokens.push(features.choose(&mut rng).expect("non-empty").to_string());
            }
            Ok(format!("<prompt>{}</prompt>", tokens.join(" ")))
        }
    }
}

pub struct SimVlm {
    world: Arc<SimWorld>,
    calls: AtomicUsize,
}

impl SimVlm {
    pub fn new(world: Arc<SimWorld>) -> Self {
        Self {
            world,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl VlmBackend for SimVlm {
    fn descriptor(&self) -> VlmDescriptor {
        VlmDescriptor {
            id: "sim-vlm".into(),
            supports_images: true,
            max_attachments: 4,
        }
    }

    fn chat(&self, messages: &[VlmMessage], temperature: f64, call_tag: &str) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        sim_vlm_respond(&self.world, messages, temperature, call_tag)
    }
}

pub struct SimT2i {
    world: Arc<SimWorld>,
    images: AtomicUsize,
}

impl SimT2i {
    pub fn new(world: Arc<SimWorld>) -> Self {
        Self {
            world,
            images: AtomicUsize::new(0),
        }
    }

    /// Number of images generated so far.
    pub fn images_generated(&self) -> usize {
        self.images.load(Ordering::SeqCst)
    }
}

impl T2IBackend for SimT2i {
    fn descriptor(&self) -> T2iDescriptor {
        T2iDescriptor {
            id: format!("sim-t2i-{}", self.world.generator_salt),
            image_size: "64x1".into(),
        }
    }

    fn generate_one(&self, prompt: &Prompt, seed: u64) -> Result<GeneratedImage, BackendError> {
        self.images.fetch_add(1, Ordering::SeqCst);
        let feats: Vec<SimFeature> = self
            .world
            .render_features(prompt.text(), seed)
            .into_iter()
            .map(SimFeature::plain)
            .collect();
        GeneratedImage::new(simimage::encode(&feats), seed, prompt.digest())
            .map_err(|e| BackendError::BadResponse(e.to_string()))
    }
}

pub struct SimScorer {
    world: Arc<SimWorld>,
    calls: AtomicUsize,
}

impl SimScorer {
    pub fn new(world: Arc<SimWorld>) -> Self {
        Self {
            world,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ScorerBackend for SimScorer {
    fn id(&self) -> &str {
        "sim"
    }

    fn score_range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn score(&self, a: &[u8], b: &[u8]) -> Result<f64, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let fa = self.world.image_features(a)?;
        let fb = self.world.image_features(b)?;
        Ok(self.world.similarity(&fa, &fb))
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    pub fn png_bytes() -> Vec<u8> {
        super::simimage::encode(&[super::SimFeature::plain("fox")])
    }
}
