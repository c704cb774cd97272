//! Records shared by every stage of the pipeline.
//!
//! All types are plain immutable values with a canonical JSON form (one
//! object per record, snake_case field names). Nothing here performs I/O.
//! [`Validate`] reports broken invariants instead of failing, so callers can
//! decide whether a violation is fatal.

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Day-precision calendar date.
pub type Date = NaiveDate;

/// A violated invariant: which field, and the rule it breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: &'static str,
}

impl Violation {
    fn new(field: &'static str, rule: &'static str) -> Self {
        Self { field, rule }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Invariant checking for domain records. An empty report means valid.
pub trait Validate {
    fn validate(&self) -> Vec<Violation>;

    fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }
}

/// Lowercase, URL-safe slug: runs of non-alphanumeric characters collapse to
/// a single `-`, with no leading or trailing dash.
pub fn slugify(name: &str) -> String {
    let mut slug = String::with_capacity(name.len());
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            slug.push(c.to_ascii_lowercase());
        } else if !slug.is_empty() && !slug.ends_with('-') {
            slug.push('-');
        }
    }
    while slug.ends_with('-') {
        slug.pop();
    }
    slug
}

fn is_slug(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        && !s.starts_with('-')
        && !s.ends_with('-')
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Topic {
    pub name: String,
    pub slug: String,
}

impl Topic {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        let slug = slugify(&name);
        Self { name, slug }
    }

    /// Resolve a slug against the default taxonomy, falling back to a
    /// title-cased rendering of the slug itself.
    pub fn from_slug(slug: &str) -> Self {
        if let Some(name) = DEFAULT_TOPICS.iter().find(|n| slugify(n) == slug) {
            return Topic::new(*name);
        }
        let name = slug
            .split('-')
            .filter(|w| !w.is_empty())
            .map(|w| {
                let mut cs = w.chars();
                match cs.next() {
                    Some(first) => first.to_ascii_uppercase().to_string() + cs.as_str(),
                    None => String::new(),
                }
            })
            .collect::<Vec<_>>()
            .join(" ");
        Self {
            name,
            slug: slug.to_string(),
        }
    }
}

impl Validate for Topic {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.name.trim().is_empty() {
            v.push(Violation::new("name", "name non-empty"));
        }
        if !is_slug(&self.slug) {
            v.push(Violation::new("slug", "slug lowercase, URL-safe"));
        }
        v
    }
}

/// The fifteen topic names used as the reformulation taxonomy. Any category
/// outside this list maps to [`OTHER_CATEGORY`].
pub const DEFAULT_TOPICS: [&str; 15] = [
    "Automotive",
    "Climate Change",
    "Energy",
    "Technology",
    "Healthcare",
    "Finance",
    "Politics",
    "Retail",
    "Sports",
    "Entertainment",
    "Space",
    "Agriculture",
    "Education",
    "Real Estate",
    "Telecommunications",
];

pub const OTHER_CATEGORY: &str = "other";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrendRecord {
    pub summary: String,
    pub topic_tags: Vec<String>,
    pub source_count: u64,
    pub window_start: Date,
    pub window_end: Date,
}

impl Validate for TrendRecord {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.summary.trim().is_empty() {
            v.push(Violation::new("summary", "summary non-empty"));
        }
        if self.window_start > self.window_end {
            v.push(Violation::new("window_start", "window_start ≤ window_end"));
        }
        if self.topic_tags.iter().any(|t| !is_slug(t)) {
            v.push(Violation::new("topic_tags", "topic_tags are slugs"));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceHeadline {
    pub headline: String,
    pub published: Date,
    pub origin: String,
}

impl Validate for SourceHeadline {
    fn validate(&self) -> Vec<Violation> {
        if self.headline.trim().is_empty() {
            vec![Violation::new("headline", "headline non-empty")]
        } else {
            Vec::new()
        }
    }
}

/// A generated candidate event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastSpec {
    pub id: String,
    pub topic: String,
    pub title: String,
    pub description: String,
    pub timeframe_start: Date,
    pub timeframe_end: Date,
    pub created_at: Date,
    /// Summaries of the trends placed in the generation prompt.
    #[serde(default)]
    pub seed_trends: Vec<String>,
    /// `name@version` of the prompt template that produced this spec.
    #[serde(default)]
    pub prompt_template: Option<String>,
}

impl ForecastSpec {
    /// Deterministic identifier derived from the topic, title and timeframe.
    pub fn content_id(topic: &str, title: &str, start: Date, end: Date) -> String {
        let mut h = Sha256::new();
        for part in [topic, title, &start.to_string(), &end.to_string()] {
            h.update(part.as_bytes());
            h.update([0x1f]);
        }
        format!("fc-{}", &hex::encode(h.finalize())[..16])
    }
}

impl Validate for ForecastSpec {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.id.trim().is_empty() {
            v.push(Violation::new("id", "id non-empty"));
        }
        if !is_slug(&self.topic) {
            v.push(Violation::new("topic", "topic is a slug"));
        }
        if self.title.trim().is_empty() {
            v.push(Violation::new("title", "title non-empty"));
        }
        if self.description.trim().is_empty() {
            v.push(Violation::new("description", "description non-empty"));
        }
        if self.timeframe_start >= self.timeframe_end {
            v.push(Violation::new(
                "timeframe_start",
                "timeframe_start < timeframe_end",
            ));
        }
        if self.created_at > self.timeframe_end {
            v.push(Violation::new("created_at", "created_at ≤ timeframe_end"));
        }
        v
    }
}

/// One candidate probability and the logprob of the token that carried it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityGuess {
    pub value: f64,
    pub logprob: f64,
}

impl ProbabilityGuess {
    pub fn new(value: f64, logprob: f64) -> Self {
        Self { value, logprob }
    }
}

impl Validate for ProbabilityGuess {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        // NaN fails both comparisons and is reported once per bound.
        if !(self.value >= 0.0) {
            v.push(Violation::new("value", "value ≥ 0"));
        }
        if !(self.value <= 1.0) {
            v.push(Violation::new("value", "value ≤ 1"));
        }
        if !self.logprob.is_finite() {
            v.push(Violation::new("logprob", "logprob finite"));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub forecast_id: String,
    pub p_hat: f64,
    pub u_hat: f64,
    pub guesses: Vec<ProbabilityGuess>,
    pub positive_trends: Vec<String>,
    pub negative_trends: Vec<String>,
    pub estimated_at: Date,
    /// Source search returned nothing; the estimate rests on trends and
    /// background knowledge only.
    #[serde(default)]
    pub sources_empty: bool,
    /// Label of the mutually exclusive outcome set this event belongs to.
    #[serde(default)]
    pub exclusive_set: Option<String>,
}

impl Validate for EstimateResult {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.guesses.is_empty() {
            v.push(Violation::new("guesses", "guesses non-empty"));
        } else {
            let lo = self.guesses.iter().map(|g| g.value).fold(f64::INFINITY, f64::min);
            let hi = self.guesses.iter().map(|g| g.value).fold(f64::NEG_INFINITY, f64::max);
            // aggregate() output can sit a rounding error outside the hull
            let slack = 1e-12;
            if !(self.p_hat >= lo - slack && self.p_hat <= hi + slack) {
                v.push(Violation::new("p_hat", "min(guess values) ≤ p_hat ≤ max(guess values)"));
            }
            if self.guesses.iter().any(|g| !g.is_valid()) {
                v.push(Violation::new("guesses", "every guess valid"));
            }
        }
        if !(0.0..=1.0).contains(&self.p_hat) {
            v.push(Violation::new("p_hat", "p_hat in [0,1]"));
        }
        if !(self.u_hat >= 0.0) {
            v.push(Violation::new("u_hat", "u_hat ≥ 0"));
        }
        v
    }
}

/// Three-valued fact-check outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Happened,
    Inconclusive,
    DidNotHappen,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::Happened, Verdict::Inconclusive, Verdict::DidNotHappen];

    pub fn code(self) -> i8 {
        match self {
            Verdict::Happened => 1,
            Verdict::Inconclusive => 0,
            Verdict::DidNotHappen => -1,
        }
    }

    pub fn from_code(code: i8) -> Option<Verdict> {
        match code {
            1 => Some(Verdict::Happened),
            0 => Some(Verdict::Inconclusive),
            -1 => Some(Verdict::DidNotHappen),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Verdict::Happened => "Happened",
            Verdict::Inconclusive => "Inconclusive",
            Verdict::DidNotHappen => "DidNotHappen",
        }
    }

    pub fn from_label(label: &str) -> Option<Verdict> {
        Verdict::ALL.into_iter().find(|v| v.label() == label)
    }

    /// Binary outcome for Brier scoring; `None` for inconclusive checks.
    pub fn binary_outcome(self) -> Option<u8> {
        match self {
            Verdict::Happened => Some(1),
            Verdict::DidNotHappen => Some(0),
            Verdict::Inconclusive => None,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Whether an outcome resolves a forecast or screens it for validity at
/// creation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckPurpose {
    #[default]
    Resolution,
    Screening,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub forecast_id: String,
    pub verdict: Verdict,
    pub checked_at: Date,
    pub binary_outcome: Option<u8>,
    #[serde(default)]
    pub purpose: CheckPurpose,
    /// The model gave neither citations nor an explicit no-evidence marker.
    #[serde(default)]
    pub uncited: bool,
    /// Headlines the verdict cited.
    #[serde(default)]
    pub evidence: Vec<String>,
}

impl OutcomeRecord {
    pub fn new(forecast_id: impl Into<String>, verdict: Verdict, checked_at: Date) -> Self {
        Self {
            forecast_id: forecast_id.into(),
            verdict,
            checked_at,
            binary_outcome: verdict.binary_outcome(),
            purpose: CheckPurpose::Resolution,
            uncited: false,
            evidence: Vec::new(),
        }
    }
}

impl Validate for OutcomeRecord {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.forecast_id.trim().is_empty() {
            v.push(Violation::new("forecast_id", "forecast_id non-empty"));
        }
        if self.binary_outcome != self.verdict.binary_outcome() {
            v.push(Violation::new(
                "binary_outcome",
                "binary_outcome = 1 iff Happened, 0 iff DidNotHappen, absent iff Inconclusive",
            ));
        }
        v
    }
}
