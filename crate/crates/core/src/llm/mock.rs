use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    check_request, request_fingerprint, Completion, DecodingParams, LlmError, LlmProvider,
    ProviderLimits, TokenAlternative, TokenPosition,
};
use crate::io::{read_jsonl, IoError};

/// One piece of a scripted completion. Plain text becomes a single
/// position with logprob 0; an alternatives list becomes a position whose
/// chosen token is the most likely alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segment {
    Text(String),
    Alternatives { alternatives: Vec<(String, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedCompletion {
    Text { text: String },
    Segments { segments: Vec<Segment> },
}

impl ScriptedCompletion {
    fn positions(&self) -> Result<Vec<TokenPosition>, String> {
        match self {
            ScriptedCompletion::Text { text } => Ok(vec![TokenPosition::single(text.clone(), 0.0)]),
            ScriptedCompletion::Segments { segments } => segments
                .iter()
                .map(|s| match s {
                    Segment::Text(t) => Ok(TokenPosition::single(t.clone(), 0.0)),
                    Segment::Alternatives { alternatives } => {
                        let mut alts: Vec<TokenAlternative> = alternatives
                            .iter()
                            .map(|(t, lp)| TokenAlternative::new(t.clone(), *lp))
                            .collect();
                        if alts.is_empty() {
                            return Err("empty alternatives list".to_string());
                        }
                        alts.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
                        Ok(TokenPosition {
                            chosen_token: alts[0].token.clone(),
                            alternatives: alts,
                        })
                    }
                })
                .collect(),
        }
    }
}

/// A fixture line. Either keyed by the exact request fingerprint, or by a
/// list of substrings that must all occur in the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    #[serde(default, rename = "match", skip_serializing_if = "Vec::is_empty")]
    pub matches: Vec<String>,
    pub completion: ScriptedCompletion,
}

struct Compiled {
    entry: FixtureEntry,
    positions: Vec<TokenPosition>,
}

/// Offline provider answering from scripted fixtures.
///
/// Lookup order: an entry whose fingerprint equals the request fingerprint,
/// otherwise the first substring rule (in file-name then line order) whose
/// every pattern occurs in the prompt. Read-only after load, so identical
/// requests always produce identical completions.
pub struct MockProvider {
    entries: Vec<Compiled>,
    limits: ProviderLimits,
}

impl MockProvider {
    pub fn new(entries: Vec<FixtureEntry>) -> Result<Self, IoError> {
        let entries = entries
            .into_iter()
            .enumerate()
            .map(|(i, entry)| {
                if entry.fingerprint.is_none() && entry.matches.is_empty() {
                    return Err(IoError::Invalid {
                        path: "<fixtures>".into(),
                        line: i + 1,
                        reason: "fixture needs a fingerprint or match patterns".into(),
                    });
                }
                let positions = entry.completion.positions().map_err(|reason| IoError::Invalid {
                    path: "<fixtures>".into(),
                    line: i + 1,
                    reason,
                })?;
                Ok(Compiled { entry, positions })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            entries,
            limits: ProviderLimits::default(),
        })
    }

    /// Loads every `*.jsonl` file in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Self, IoError> {
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(|e| IoError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        let mut entries = Vec::new();
        for f in files {
            entries.extend(read_jsonl::<FixtureEntry>(&f)?);
        }
        Self::new(entries)
    }

    pub fn with_limits(mut self, limits: ProviderLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&self, prompt: &str, fingerprint: &str) -> Option<&Compiled> {
        self.entries
            .iter()
            .find(|c| c.entry.fingerprint.as_deref() == Some(fingerprint))
            .or_else(|| {
                self.entries.iter().find(|c| {
                    !c.entry.matches.is_empty()
                        && c.entry.matches.iter().all(|m| prompt.contains(m.as_str()))
                })
            })
    }
}

impl LlmProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn limits(&self) -> ProviderLimits {
        self.limits
    }

    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<Completion, LlmError> {
        check_request(prompt, params)?;
        let fingerprint = request_fingerprint(prompt, params);
        let found = self.lookup(prompt, &fingerprint).ok_or_else(|| LlmError::FixtureMissing {
            fingerprint: fingerprint.clone(),
            prompt_head: prompt.chars().take(80).collect(),
        })?;
        let positions = found.positions.clone();
        Ok(Completion {
            full_text: positions.iter().map(|p| p.chosen_token.as_str()).collect(),
            positions,
            provider_name: self.name().to_string(),
            request_fingerprint: fingerprint,
        })
    }
}
