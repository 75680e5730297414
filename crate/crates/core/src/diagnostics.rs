use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Counted warnings collected while fitting and estimating.
///
/// Messages are aggregated by text so thousands of refits produce a compact
/// record; nothing is only printed to the console.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Diagnostics {
    counts: BTreeMap<String, u64>,
}

impl Diagnostics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warn_n(message, 1);
    }

    pub fn warn_n(&mut self, message: impl Into<String>, n: u64) {
        if n > 0 {
            *self.counts.entry(message.into()).or_insert(0) += n;
        }
    }

    pub fn merge(&mut self, other: &Diagnostics) {
        for (k, v) in &other.counts {
            self.warn_n(k.clone(), *v);
        }
    }

    pub fn extend<'a>(&mut self, messages: impl IntoIterator<Item = &'a String>) {
        for m in messages {
            self.warn(m.clone());
        }
    }

    /// Prefixes every message with `scope: `.
    pub fn scoped(&self, scope: &str) -> Diagnostics {
        Diagnostics {
            counts: self
                .counts
                .iter()
                .map(|(k, v)| (format!("{scope}: {k}"), *v))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, message: &str) -> u64 {
        self.counts.get(message).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
