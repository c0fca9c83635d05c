use std::collections::HashMap;
use std::sync::RwLock;

use super::MeasurementResult;
use crate::pattern::OffloadPattern;

/// Write-once store of measurements, shared between evaluation threads.
/// Entries are keyed by program digest and pattern key, so a second
/// measurement of the same pattern never replaces the first.
#[derive(Debug, Default)]
pub struct MeasurementCache {
    entries: RwLock<HashMap<(String, String), MeasurementResult>>,
}

impl MeasurementCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(pattern: &OffloadPattern) -> (String, String) {
        (pattern.program_digest.clone(), pattern.key())
    }

    pub fn lookup(&self, pattern: &OffloadPattern) -> Option<MeasurementResult> {
        let map = self.entries.read().unwrap_or_else(|e| e.into_inner());
        map.get(&Self::key(pattern)).cloned()
    }

    /// Stores `result` unless the pattern already has one. Returns whether it
    /// was stored.
    pub fn store(&self, pattern: &OffloadPattern, result: MeasurementResult) -> bool {
        let mut map = self.entries.write().unwrap_or_else(|e| e.into_inner());
        match map.entry(Self::key(pattern)) {
            std::collections::hash_map::Entry::Occupied(_) => false,
            std::collections::hash_map::Entry::Vacant(v) => {
                v.insert(result);
                true
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
