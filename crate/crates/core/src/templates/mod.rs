//! VLM instruction templates and response parsing.
//!
//! The built-in templates are stored verbatim under `templates/` and keyed
//! by `(family, operator)`. A directory of `<family>.<operator>.txt` files
//! can replace any subset of them. Only `{n}`, `{prompt}`, `{prompt_1}` and
//! `{prompt_2}` are substituted, in a single pass.

mod parse;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TemplateFamily;
use crate::types::{GeneratedImage, Prompt, TargetImage};

pub use parse::{
    parse_population, parse_single_prompt, truncate_prompt, ParsedPopulation, TokenBudget,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("grounded crossover requires the images generated from both parents")]
    GroundingImagesMissing,
    #[error("grounded crossover exists only for the structured family")]
    GroundingUnsupported,
    #[error("no well-formed <prompt> span found in the response")]
    NoPromptsFound,
    #[error("prompt is empty after truncation")]
    EmptyAfterTruncation,
    #[error("invalid token budget: limit {limit} must exceed reserved {reserved}")]
    InvalidBudget { limit: usize, reserved: usize },
    #[error("template override {path}: {reason}")]
    Override { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateOp {
    System,
    Init,
    Crossover,
    CrossoverGrounded,
    Mutation,
}

impl TemplateOp {
    pub const ALL: [TemplateOp; 5] = [
        TemplateOp::System,
        TemplateOp::Init,
        TemplateOp::Crossover,
        TemplateOp::CrossoverGrounded,
        TemplateOp::Mutation,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            TemplateOp::System => "system",
            TemplateOp::Init => "init",
            TemplateOp::Crossover => "crossover",
            TemplateOp::CrossoverGrounded => "crossover_grounded",
            TemplateOp::Mutation => "mutation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateVariant {
    family: TemplateFamily,
    grounded_crossover: bool,
}

impl TemplateVariant {
    pub fn new(family: TemplateFamily, grounded_crossover: bool) -> Result<Self, TemplateError> {
        if grounded_crossover && family != TemplateFamily::Structured {
            return Err(TemplateError::GroundingUnsupported);
        }
        Ok(Self {
            family,
            grounded_crossover,
        })
    }

    pub fn plain(family: TemplateFamily) -> Self {
        Self {
            family,
            grounded_crossover: false,
        }
    }

    pub fn family(&self) -> TemplateFamily {
        self.family
    }

    pub fn grounded_crossover(&self) -> bool {
        self.grounded_crossover
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attachment {
    pub bytes: Vec<u8>,
    pub mime: &'static str,
}

impl Attachment {
    fn of_target(t: &TargetImage) -> Self {
        Self {
            bytes: t.bytes().to_vec(),
            mime: t.format().mime(),
        }
    }

    fn of_generated(g: &GeneratedImage) -> Self {
        let mime = match crate::types::validate_raster(g.bytes()) {
            Ok(f) => f.mime(),
            Err(_) => "image/png",
        };
        Self {
            bytes: g.bytes().to_vec(),
            mime,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VlmMessage {
    pub role: Role,
    pub text: String,
    pub image_attachments: Vec<Attachment>,
}

impl VlmMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            text: text.into(),
            image_attachments: Vec::new(),
        }
    }

    pub fn user(text: impl Into<String>, image_attachments: Vec<Attachment>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
            image_attachments,
        }
    }
}

const BUILTIN: &[(TemplateFamily, TemplateOp, &str)] = &[
    (TemplateFamily::Structured, TemplateOp::System, include_str!("../../templates/structured.system.txt")),
    (TemplateFamily::Structured, TemplateOp::Init, include_str!("../../templates/structured.init.txt")),
    (TemplateFamily::Structured, TemplateOp::Crossover, include_str!("../../templates/structured.crossover.txt")),
    (TemplateFamily::Structured, TemplateOp::CrossoverGrounded, include_str!("../../templates/structured.crossover_grounded.txt")),
    (TemplateFamily::Structured, TemplateOp::Mutation, include_str!("../../templates/structured.mutation.txt")),
    (TemplateFamily::SpatialEmphasis, TemplateOp::System, include_str!("../../templates/spatial.system.txt")),
    (TemplateFamily::SpatialEmphasis, TemplateOp::Init, include_str!("../../templates/spatial.init.txt")),
    (TemplateFamily::SpatialEmphasis, TemplateOp::Crossover, include_str!("../../templates/spatial.crossover.txt")),
    (TemplateFamily::SpatialEmphasis, TemplateOp::Mutation, include_str!("../../templates/spatial.mutation.txt")),
    (TemplateFamily::Minimal, TemplateOp::System, include_str!("../../templates/minimal.system.txt")),
    (TemplateFamily::Minimal, TemplateOp::Init, include_str!("../../templates/minimal.init.txt")),
    (TemplateFamily::Minimal, TemplateOp::Crossover, include_str!("../../templates/minimal.crossover.txt")),
    (TemplateFamily::Minimal, TemplateOp::Mutation, include_str!("../../templates/minimal.mutation.txt")),
];

/// Template texts keyed by `(family, operator)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    texts: BTreeMap<(TemplateFamily, TemplateOp), String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let texts = BUILTIN
            .iter()
            .map(|(f, op, text)| ((*f, *op), text.to_string()))
            .collect();
        Self { texts }
    }

    /// Built-ins overlaid with any `<family>.<operator>.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for family in [
            TemplateFamily::Structured,
            TemplateFamily::Minimal,
            TemplateFamily::SpatialEmphasis,
        ] {
            for op in TemplateOp::ALL {
                let path = dir.join(format!("{}.{}.txt", family.file_stem(), op.file_stem()));
                if !path.exists() {
                    continue;
                }
                let text = std::fs::read_to_string(&path).map_err(|e| TemplateError::Override {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
                log::info!("template override {}", path.display());
                set.texts.insert((family, op), text);
            }
        }
        Ok(set)
    }

    pub fn get(&self, family: TemplateFamily, op: TemplateOp) -> Option<&str> {
        self.texts.get(&(family, op)).map(String::as_str)
    }

    fn text(&self, family: TemplateFamily, op: TemplateOp) -> &str {
        self.get(family, op)
            .or_else(|| self.get(TemplateFamily::Structured, op))
            .expect("structured templates are always present")
    }

    fn system(&self, variant: TemplateVariant) -> VlmMessage {
        VlmMessage::system(self.text(variant.family, TemplateOp::System))
    }

    pub fn render_init(&self, n: usize, variant: TemplateVariant, target: &TargetImage) -> Vec<VlmMessage> {
        let n = n.to_string();
        let text = substitute(self.text(variant.family, TemplateOp::Init), &[("n", &n)]);
        vec![
            self.system(variant),
            VlmMessage::user(text, vec![Attachment::of_target(target)]),
        ]
    }

    pub fn render_crossover(
        &self,
        p1: &Prompt,
        p2: &Prompt,
        variant: TemplateVariant,
        target: &TargetImage,
        parent_images: Option<(&GeneratedImage, &GeneratedImage)>,
    ) -> Result<Vec<VlmMessage>, TemplateError> {
        let vars = [("prompt_1", p1.text()), ("prompt_2", p2.text())];
        let user = if variant.grounded_crossover {
            let (g1, g2) = parent_images.ok_or(TemplateError::GroundingImagesMissing)?;
            VlmMessage::user(
                substitute(self.text(variant.family, TemplateOp::CrossoverGrounded), &vars),
                vec![
                    Attachment::of_target(target),
                    Attachment::of_generated(g1),
                    Attachment::of_generated(g2),
                ],
            )
        } else {
            VlmMessage::user(
                substitute(self.text(variant.family, TemplateOp::Crossover), &vars),
                vec![Attachment::of_target(target)],
            )
        };
        Ok(vec![self.system(variant), user])
    }

    pub fn render_mutation(&self, p: &Prompt, variant: TemplateVariant, target: &TargetImage) -> Vec<VlmMessage> {
        let text = substitute(
            self.text(variant.family, TemplateOp::Mutation),
            &[("prompt", p.text())],
        );
        vec![
            self.system(variant),
            VlmMessage::user(text, vec![Attachment::of_target(target)]),
        ]
    }
}

/// Replaces `{name}` placeholders in one left-to-right pass; substituted
/// values are never rescanned. Unknown braces are copied through.
pub fn substitute(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 128);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

impl fmt::Display for TemplateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::WordPunctTokenizer;

    fn target() -> TargetImage {
        TargetImage::from_bytes(crate::backends::sim::tests_support::png_bytes(), "t").unwrap()
    }

    fn prompt(s: &str) -> Prompt {
        Prompt::new(s, &WordPunctTokenizer).unwrap()
    }

    fn generated(seed: u64) -> GeneratedImage {
        GeneratedImage::new(crate::backends::sim::tests_support::png_bytes(), seed, "h").unwrap()
    }

    #[test]
    fn substitution_is_single_pass() {
        assert_eq!(
            substitute("A {prompt_1} B {prompt_2} {x}", &[("prompt_1", "{prompt_2}"), ("prompt_2", "two")]),
            "A {prompt_2} B two {x}"
        );
        assert_eq!(substitute("{n}{n}", &[("n", "3")]), "33");
        assert_eq!(substitute("{ unclosed", &[("n", "3")]), "{ unclosed");
    }

    #[test]
    fn init_substitutes_n() {
        let set = TemplateSet::builtin();
        let msgs = set.render_init(10, TemplateVariant::plain(TemplateFamily::Structured), &target());
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[0].role, Role::System);
        assert!(msgs[0].image_attachments.is_empty());
        assert!(msgs[1].text.contains("Generate 10 diverse text-to-image prompts"));
        assert_eq!(msgs[1].image_attachments.len(), 1);

        let minimal = set.render_init(1, TemplateVariant::plain(TemplateFamily::Minimal), &target());
        assert!(minimal[1].text.starts_with("Generate 1 diverse"));
        assert!(minimal[0].text.starts_with("Generate text-to-image prompts based on images."));

        let spatial = set.render_init(10, TemplateVariant::plain(TemplateFamily::SpatialEmphasis), &target());
        assert!(spatial[1].text.contains("Describe the spatial layout"));
        assert!(spatial[0].text.contains("Pay attention to the spatial positioning"));
    }

    #[test]
    fn crossover_attachments() {
        let set = TemplateSet::builtin();
        let t = target();
        let (a, b) = (prompt("a red fox"), prompt("an orange fox"));
        let plain = set
            .render_crossover(&a, &b, TemplateVariant::plain(TemplateFamily::Structured), &t, None)
            .unwrap();
        assert_eq!(plain[1].image_attachments.len(), 1);
        assert!(plain[1].text.contains("Identify SHARED elements"));
        assert!(plain[1].text.contains("Prompt 1: a red fox\nPrompt 2: an orange fox"));

        let grounded = TemplateVariant::new(TemplateFamily::Structured, true).unwrap();
        assert_eq!(
            set.render_crossover(&a, &b, grounded, &t, None),
            Err(TemplateError::GroundingImagesMissing)
        );
        let (g1, g2) = (generated(1), generated(2));
        let msgs = set.render_crossover(&a, &b, grounded, &t, Some((&g1, &g2))).unwrap();
        assert_eq!(msgs[1].image_attachments.len(), 3);
        assert_eq!(msgs[1].image_attachments[0].bytes, t.bytes());
        assert!(msgs[1].text.contains("Image 1: REFERENCE"));

        let same = set
            .render_crossover(&a, &a, TemplateVariant::plain(TemplateFamily::Minimal), &t, None)
            .unwrap();
        assert!(same[1].text.contains("Prompt 1: a red fox\nPrompt 2: a red fox"));
    }

    #[test]
    fn grounding_only_for_structured() {
        assert_eq!(
            TemplateVariant::new(TemplateFamily::Minimal, true),
            Err(TemplateError::GroundingUnsupported)
        );
        assert!(TemplateVariant::new(TemplateFamily::SpatialEmphasis, false).is_ok());
    }

    #[test]
    fn mutation_markers() {
        let set = TemplateSet::builtin();
        let p = prompt("a fox");
        let t = target();
        let s = set.render_mutation(&p, TemplateVariant::plain(TemplateFamily::Structured), &t);
        assert!(s[1].text.contains("Apply mutations: Make 1-3 targeted changes"));
        assert!(s[1].text.contains("Current prompt to mutate: a fox"));
        let sp = set.render_mutation(&p, TemplateVariant::plain(TemplateFamily::SpatialEmphasis), &t);
        assert!(sp[1].text.contains("Check spatial accuracy"));
        let m = set.render_mutation(&p, TemplateVariant::plain(TemplateFamily::Minimal), &t);
        assert!(m[1].text.contains("Improve this prompt"));
        assert_eq!(m[1].image_attachments.len(), 1);
    }

    #[test]
    fn overrides_replace_single_entries() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("minimal.mutation.txt"), "Fix: {prompt}").unwrap();
        let set = TemplateSet::with_overrides(dir.path()).unwrap();
        let m = set.render_mutation(&prompt("x y"), TemplateVariant::plain(TemplateFamily::Minimal), &target());
        assert_eq!(m[1].text, "Fix: x y");
        assert_eq!(
            set.get(TemplateFamily::Structured, TemplateOp::Init),
            TemplateSet::builtin().get(TemplateFamily::Structured, TemplateOp::Init)
        );
    }
}
