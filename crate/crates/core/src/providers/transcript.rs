use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ProviderRole, TokenDistribution};

/// One model call as issued, successful or not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub role: ProviderRole,
    pub template: String,
    pub prompt: String,
    pub args: BTreeMap<String, String>,
    pub attachments: Vec<String>,
    pub response: Option<String>,
    pub distribution: Option<TokenDistribution>,
    pub cache_hit: bool,
    pub latency_ms: u64,
    pub retry_count: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Append-only call log for one task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: TranscriptEntry) -> usize {
        self.entries.push(entry);
        self.entries.len() - 1
    }

    /// Attaches a flag to the most recent call.
    pub fn flag_last(&mut self, flag: impl Into<String>) {
        if let Some(e) = self.entries.last_mut() {
            e.flags.push(flag.into());
        }
    }

    pub fn flag(&mut self, index: usize, flag: impl Into<String>) {
        if let Some(e) = self.entries.get_mut(index) {
            e.flags.push(flag.into());
        }
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cache_hits(&self) -> usize {
        self.entries.iter().filter(|e| e.cache_hit).count()
    }

    pub fn role_counts(&self) -> BTreeMap<ProviderRole, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.role).or_insert(0) += 1;
        }
        out
    }

    pub fn template_count(&self, template: &str) -> usize {
        self.entries.iter().filter(|e| e.template == template).count()
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.entries.iter().any(|e| e.flags.iter().any(|f| f == flag))
    }
}
