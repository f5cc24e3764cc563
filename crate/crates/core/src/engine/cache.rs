//! Prompt-keyed fitness cache.
//!
//! Each distinct prompt text is evaluated at most once per run. Concurrent
//! lookups of the same text wait for the first evaluation instead of
//! starting their own; a failed evaluation leaves no entry behind.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use once_cell::sync::OnceCell;
use serde::{Deserialize, Serialize};

use crate::digest::prompt_digest;
use crate::types::FitnessRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub text: String,
    pub record: FitnessRecord,
    /// Generation in which the prompt was first evaluated.
    pub generation: u32,
}

#[derive(Debug, Default)]
pub struct FitnessCache {
    slots: Mutex<HashMap<String, Arc<OnceCell<CacheEntry>>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl FitnessCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a cache from persisted entries and counters.
    pub fn restore(entries: impl IntoIterator<Item = CacheEntry>, hits: u64, misses: u64) -> Self {
        let slots = entries
            .into_iter()
            .map(|e| (prompt_digest(&e.text), Arc::new(OnceCell::with_value(e))))
            .collect();
        Self {
            slots: Mutex::new(slots),
            hits: AtomicU64::new(hits),
            misses: AtomicU64::new(misses),
        }
    }

    fn slot(&self, digest: &str) -> Arc<OnceCell<CacheEntry>> {
        let mut slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        slots.entry(digest.to_string()).or_default().clone()
    }

    pub fn get(&self, text: &str) -> Option<FitnessRecord> {
        let slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        slots
            .get(&prompt_digest(text))
            .and_then(|c| c.get())
            .map(|e| e.record.clone())
    }

    /// Returns the cached record for `text`, or runs `evaluate` and stores
    /// its result. The flag is true when this call did the evaluation.
    pub fn get_or_evaluate<E>(
        &self,
        text: &str,
        generation: u32,
        evaluate: impl FnOnce() -> Result<FitnessRecord, E>,
    ) -> Result<(FitnessRecord, bool), E> {
        let cell = self.slot(&prompt_digest(text));
        let mut computed = false;
        let entry = cell.get_or_try_init(|| {
            computed = true;
            evaluate().map(|record| CacheEntry {
                text: text.to_string(),
                record,
                generation,
            })
        })?;
        if computed {
            self.misses.fetch_add(1, Ordering::SeqCst);
        } else {
            self.hits.fetch_add(1, Ordering::SeqCst);
        }
        Ok((entry.record.clone(), computed))
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.entries().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stored entries sorted by (generation, text).
    pub fn entries(&self) -> Vec<CacheEntry> {
        let slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        let mut out: Vec<CacheEntry> = slots.values().filter_map(|c| c.get().cloned()).collect();
        out.sort_by(|a, b| a.generation.cmp(&b.generation).then_with(|| a.text.cmp(&b.text)));
        out
    }
}
