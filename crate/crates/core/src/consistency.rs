//! Mutually exclusive outcome sets.
//!
//! Probabilities of outcomes that cannot co-occur must not sum above one.
//! When they do, every member is scaled by the same factor, which keeps the
//! ranking and pairwise ratios intact. Sets summing to less than one are left
//! alone, since a set need not list every possible outcome.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::SourceHeadline;
use crate::llm::{LlmError, LlmProvider};
use crate::prompts::{self, field_value, EXCLUSIVITY};

#[derive(Debug, Error)]
pub enum ConsistencyError {
    #[error("event text must not be empty")]
    EmptyEvent,
    #[error(transparent)]
    Gateway(#[from] LlmError),
    #[error("exclusivity answer has no EXCLUSIVE line: {0:?}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSet {
    pub label: String,
    /// `(forecast_id, p_hat)` pairs.
    pub members: Vec<(String, f64)>,
}

impl OutcomeSet {
    pub fn violations(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.members.len() < 2 {
            v.push("at least two members");
        }
        let ids: HashSet<&str> = self.members.iter().map(|(id, _)| id.as_str()).collect();
        if ids.len() != self.members.len() {
            v.push("member ids distinct");
        }
        if self.members.iter().any(|(_, p)| !(0.0..=1.0).contains(p)) {
            v.push("all p_hat in [0,1]");
        }
        v
    }
}

/// Scales members proportionally when their sum exceeds one; otherwise
/// returns them unchanged. Output order matches input order.
pub fn renormalize(set: &OutcomeSet) -> Vec<(String, f64)> {
    let total: f64 = set.members.iter().map(|(_, p)| p).sum();
    if total <= 1.0 {
        return set.members.clone();
    }
    set.members
        .iter()
        .map(|(id, p)| (id.clone(), p / total))
        .collect()
}

/// Groups `(forecast_id, p_hat, set_label)` rows into outcome sets, one per
/// label, ordered by label. Labels with a single member are skipped.
pub fn group_by_label<'a, I>(rows: I) -> Vec<OutcomeSet>
where
    I: IntoIterator<Item = (&'a str, f64, Option<&'a str>)>,
{
    let mut groups: BTreeMap<&str, Vec<(String, f64)>> = BTreeMap::new();
    for (id, p, label) in rows {
        if let Some(label) = label {
            groups.entry(label).or_default().push((id.to_string(), p));
        }
    }
    groups
        .into_iter()
        .filter(|(_, m)| m.len() >= 2)
        .map(|(label, members)| OutcomeSet {
            label: label.to_string(),
            members,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusivity {
    pub is_exclusive: bool,
    pub set_label: Option<String>,
}

/// Asks the model whether the event is one outcome of a mutually exclusive
/// set, and if so which one.
pub fn detect_exclusive(
    llm: &dyn LlmProvider,
    event_text: &str,
    context: &[SourceHeadline],
) -> Result<Exclusivity, ConsistencyError> {
    if event_text.trim().is_empty() {
        return Err(ConsistencyError::EmptyEvent);
    }
    let headlines: Vec<&str> = context.iter().map(|h| h.headline.as_str()).collect();
    let prompt = EXCLUSIVITY.render(&[
        ("event", event_text.trim()),
        ("headlines", &prompts::bullet_list(&headlines)),
    ]);
    let completion = llm.complete(&prompt, &llm.deterministic_params())?;
    parse_exclusivity(&completion.full_text)
}

pub(crate) fn parse_exclusivity(text: &str) -> Result<Exclusivity, ConsistencyError> {
    let answer = field_value(text, "EXCLUSIVE").ok_or_else(|| ConsistencyError::Malformed(text.to_string()))?;
    let is_exclusive = matches!(answer.to_ascii_lowercase().as_str(), "yes" | "true" | "y");
    let set_label = field_value(text, "SET")
        .filter(|s| is_exclusive && !s.is_empty() && !s.eq_ignore_ascii_case("none"));
    Ok(Exclusivity {
        is_exclusive,
        set_label,
    })
}
