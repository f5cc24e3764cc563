//! Prompt tokenizers used for length accounting and truncation.
//!
//! The default tokenizer approximates a CLIP-style BPE count: every maximal
//! run of alphanumeric characters is one token and every other
//! non-whitespace character is a token of its own. Real BPE vocabularies
//! split long words further, so this count is a lower bound on theirs; a
//! closer tokenizer can be registered under its own id.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

/// Splits text into tokens, reported as byte ranges into the input.
pub trait Tokenizer: Send + Sync {
    fn id(&self) -> &str;
    fn token_spans(&self, text: &str) -> Vec<Range<usize>>;

    fn count(&self, text: &str) -> usize {
        self.token_spans(text).len()
    }
}

pub const DEFAULT_TOKENIZER: &str = "default";

#[derive(Debug, Default, Clone, Copy)]
pub struct WordPunctTokenizer;

impl Tokenizer for WordPunctTokenizer {
    fn id(&self) -> &str {
        DEFAULT_TOKENIZER
    }

    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut word_start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if c.is_alphanumeric() {
                if word_start.is_none() {
                    word_start = Some(i);
                }
                continue;
            }
            if let Some(s) = word_start.take() {
                spans.push(s..i);
            }
            if !c.is_whitespace() {
                spans.push(i..i + c.len_utf8());
            }
        }
        if let Some(s) = word_start {
            spans.push(s..text.len());
        }
        spans
    }
}

/// Tokenizers addressable by id.
#[derive(Clone)]
pub struct TokenizerRegistry {
    entries: BTreeMap<String, Arc<dyn Tokenizer>>,
}

impl Default for TokenizerRegistry {
    fn default() -> Self {
        let mut entries: BTreeMap<String, Arc<dyn Tokenizer>> = BTreeMap::new();
        entries.insert(DEFAULT_TOKENIZER.to_string(), Arc::new(WordPunctTokenizer));
        Self { entries }
    }
}

impl TokenizerRegistry {
    pub fn register(&mut self, tokenizer: Arc<dyn Tokenizer>) {
        self.entries.insert(tokenizer.id().to_string(), tokenizer);
    }

    pub fn get(&self, id: &str) -> Option<Arc<dyn Tokenizer>> {
        self.entries.get(id).cloned()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

pub fn default_tokenizer() -> Arc<dyn Tokenizer> {
    Arc::new(WordPunctTokenizer)
}
