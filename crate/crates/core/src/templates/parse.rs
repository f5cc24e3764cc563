//! Tolerant extraction of `<prompt>` spans from VLM output, and truncation.
//!
//! Model output is not reliably well-formed markup, so spans are found by
//! scanning rather than XML parsing. An opening tag is `<prompt` followed by
//! `>` or by whitespace, attribute text without `<`/`>`, and `>`. A span
//! runs to the next `</prompt>`; if another opening tag starts first, the
//! earlier one is abandoned.

use super::TemplateError;
use crate::tokenizer::Tokenizer;
use crate::types::Prompt;

const OPEN: &str = "<prompt";
const CLOSE: &str = "</prompt>";

struct Span<'a> {
    attrs: &'a str,
    content: &'a str,
}

/// Position of the next `<prompt` that is followed by `>` or whitespace.
fn next_open(text: &str, from: usize) -> Option<usize> {
    let mut at = from;
    while let Some(rel) = text[at..].find(OPEN) {
        let i = at + rel;
        match text[i + OPEN.len()..].chars().next() {
            Some(c) if c == '>' || c.is_whitespace() => return Some(i),
            _ => at = i + OPEN.len(),
        }
    }
    None
}

/// Returns the spans in document order and the number of abandoned tags.
fn scan(text: &str) -> (Vec<Span<'_>>, usize) {
    let mut spans = Vec::new();
    let mut abandoned = 0;
    let mut pos = 0;
    while let Some(open) = next_open(text, pos) {
        let after = open + OPEN.len();
        let Some(gt_rel) = text[after..].find(['<', '>']) else {
            abandoned += 1;
            break;
        };
        if text.as_bytes()[after + gt_rel] == b'<' {
            abandoned += 1;
            pos = after;
            continue;
        }
        let attrs = &text[after..after + gt_rel];
        let content_start = after + gt_rel + 1;
        let close = text[content_start..].find(CLOSE).map(|r| content_start + r);
        let nested = next_open(text, content_start);
        match (close, nested) {
            (None, _) => {
                abandoned += 1;
                pos = content_start;
            }
            (Some(c), Some(n)) if n < c => {
                abandoned += 1;
                pos = n;
            }
            (Some(c), _) => {
                spans.push(Span {
                    attrs,
                    content: &text[content_start..c],
                });
                pos = c + CLOSE.len();
            }
        }
    }
    (spans, abandoned)
}

/// Value of `probability="..."` (or single-quoted) inside a tag.
fn probability_attr(attrs: &str) -> Option<&str> {
    let mut rest = attrs;
    while let Some(i) = rest.find("probability") {
        let after = rest[i + "probability".len()..].trim_start();
        if let Some(v) = after.strip_prefix('=') {
            let v = v.trim_start();
            let quote = v.chars().next()?;
            if quote == '"' || quote == '\'' {
                let body = &v[1..];
                return body.find(quote).map(|end| &body[..end]);
            }
            return None;
        }
        rest = &rest[i + "probability".len()..];
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPopulation {
    /// Trimmed prompt texts with their stated probabilities, in document order.
    pub entries: Vec<(String, f64)>,
    /// Abandoned tags, empty spans and unparseable probabilities.
    pub warnings: usize,
}

/// Extracts up to `expected_n` `<prompt probability="x">text</prompt>`
/// entries. Probabilities that do not parse become 0.0; all are clamped to
/// [0, 1].
pub fn parse_population(response_text: &str, expected_n: usize) -> Result<ParsedPopulation, TemplateError> {
    let (spans, mut warnings) = scan(response_text);
    let mut entries = Vec::new();
    for span in spans {
        let content = span.content.trim();
        if content.is_empty() {
            warnings += 1;
            continue;
        }
        let probability = match probability_attr(span.attrs).map(|v| v.trim().parse::<f64>()) {
            Some(Ok(p)) if p.is_finite() => p.clamp(0.0, 1.0),
            _ => {
                warnings += 1;
                0.0
            }
        };
        entries.push((content.to_string(), probability));
    }
    if entries.is_empty() {
        return Err(TemplateError::NoPromptsFound);
    }
    if warnings > 0 {
        log::warn!("{warnings} malformed prompt tag(s) skipped or defaulted");
    }
    entries.truncate(expected_n);
    Ok(ParsedPopulation { entries, warnings })
}

/// Text of the last non-empty `<prompt>` span, trimmed. Reasoning models
/// often emit drafts before their final answer.
pub fn parse_single_prompt(response_text: &str) -> Result<String, TemplateError> {
    let (spans, _) = scan(response_text);
    spans
        .iter()
        .rev()
        .map(|s| s.content.trim())
        .find(|c| !c.is_empty())
        .map(str::to_string)
        .ok_or(TemplateError::NoPromptsFound)
}

/// Total token limit of the text encoder and how many of those slots are
/// taken by special tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenBudget {
    pub limit: usize,
    pub reserved: usize,
}

impl TokenBudget {
    pub fn new(limit: usize, reserved: usize) -> Result<Self, TemplateError> {
        if limit <= reserved {
            return Err(TemplateError::InvalidBudget { limit, reserved });
        }
        Ok(Self { limit, reserved })
    }

    pub fn max_content(&self) -> usize {
        self.limit - self.reserved
    }
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self {
            limit: 77,
            reserved: 2,
        }
    }
}

/// Keeps the longest prefix of whole tokens that fits the budget. Text that
/// already fits is returned unchanged.
pub fn truncate_prompt(
    text: &str,
    budget: TokenBudget,
    tokenizer: &dyn Tokenizer,
) -> Result<Prompt, TemplateError> {
    if text.trim().is_empty() {
        return Err(TemplateError::EmptyAfterTruncation);
    }
    let spans = tokenizer.token_spans(text);
    let max = budget.max_content();
    let kept = if spans.len() <= max {
        text
    } else {
        text[..spans[max - 1].end].trim_end()
    };
    Prompt::new(kept, tokenizer).map_err(|_| TemplateError::EmptyAfterTruncation)
}
