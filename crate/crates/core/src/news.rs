//! Trend records and news headlines relevant to a topic or event query.
//!
//! Relevance defaults to TF-IDF cosine similarity, behind [`RelevanceScorer`]
//! so that an embedding-backed scorer can be swapped in for live use.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::domain::{Date, SourceHeadline, Topic, TrendRecord, Validate, Violation};
use crate::io::{read_jsonl, IoError};

pub const NEWS_KEY_ENV: &str = "FORESIGHT_NEWS_KEY";

#[derive(Debug, Error)]
pub enum NewsError {
    #[error("no records have been ingested")]
    EmptyStore,
    #[error("limit must be positive")]
    InvalidLimit,
    #[error("query must not be empty")]
    EmptyQuery,
    #[error("date range start {start} is after end {end}")]
    InvalidRange { start: Date, end: Date },
    #[error("{} record(s) failed validation: {}", .0.len(), describe_failures(.0))]
    ValidationFailed(Vec<(usize, Vec<Violation>)>),
    #[error("news provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

fn describe_failures(failures: &[(usize, Vec<Violation>)]) -> String {
    failures
        .iter()
        .map(|(i, vs)| {
            let rules: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
            format!("#{i} [{}]", rules.join("; "))
        })
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored<T> {
    pub item: T,
    /// In [0, 1].
    pub score: f64,
}

pub trait RelevanceScorer: Send + Sync {
    /// Relevance of each document to `query`, each in [0, 1].
    fn scores(&self, query: &str, docs: &[&str]) -> Vec<f64>;
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "in", "is", "it",
    "its", "of", "on", "or", "that", "the", "to", "was", "will", "with",
];

/// Lowercased alphanumeric runs, minus a short stopword list.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Cosine similarity of raw-count TF times smoothed IDF,
/// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, with IDF fitted on the
/// document set being ranked.
#[derive(Debug, Clone, Copy, Default)]
pub struct TfIdfScorer;

impl TfIdfScorer {
    fn weights(tokens: &[String], idf: &HashMap<&str, f64>, unseen_idf: f64) -> HashMap<String, f64> {
        let mut w: HashMap<String, f64> = HashMap::new();
        for t in tokens {
            *w.entry(t.clone()).or_default() += 1.0;
        }
        for (t, v) in w.iter_mut() {
            *v *= idf.get(t.as_str()).copied().unwrap_or(unseen_idf);
        }
        w
    }
}

impl RelevanceScorer for TfIdfScorer {
    fn scores(&self, query: &str, docs: &[&str]) -> Vec<f64> {
        let doc_tokens: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d)).collect();
        let n = docs.len() as f64;
        let mut df: HashMap<&str, usize> = HashMap::new();
        for toks in &doc_tokens {
            let uniq: HashSet<&str> = toks.iter().map(|s| s.as_str()).collect();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        let idf: HashMap<&str, f64> = df
            .iter()
            .map(|(t, c)| (*t, ((1.0 + n) / (1.0 + *c as f64)).ln() + 1.0))
            .collect();
        let unseen = (1.0 + n).ln() + 1.0;
        let q = Self::weights(&tokenize(query), &idf, unseen);
        let q_norm = q.values().map(|v| v * v).sum::<f64>().sqrt();
        doc_tokens
            .iter()
            .map(|toks| {
                let d = Self::weights(toks, &idf, unseen);
                let d_norm = d.values().map(|v| v * v).sum::<f64>().sqrt();
                if q_norm == 0.0 || d_norm == 0.0 {
                    return 0.0;
                }
                let dot: f64 = q.iter().map(|(t, w)| w * d.get(t).copied().unwrap_or(0.0)).sum();
                (dot / (q_norm * d_norm)).clamp(0.0, 1.0)
            })
            .collect()
    }
}

/// Ingested trend records, deduplicated on (summary, window).
pub struct TrendStore {
    records: Vec<TrendRecord>,
    seen: HashSet<(String, Date, Date)>,
    scorer: Box<dyn RelevanceScorer>,
}

impl Default for TrendStore {
    fn default() -> Self {
        Self::new()
    }
}

impl TrendStore {
    pub fn new() -> Self {
        Self::with_scorer(Box::new(TfIdfScorer))
    }

    pub fn with_scorer(scorer: Box<dyn RelevanceScorer>) -> Self {
        Self {
            records: Vec::new(),
            seen: HashSet::new(),
            scorer,
        }
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, NewsError> {
        let mut store = Self::new();
        store.ingest_trends(read_jsonl(path)?)?;
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TrendRecord] {
        &self.records
    }

    /// Validates the whole batch before ingesting any of it. Returns how
    /// many records were new.
    pub fn ingest_trends(&mut self, records: Vec<TrendRecord>) -> Result<usize, NewsError> {
        let failures: Vec<(usize, Vec<Violation>)> = records
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.validate()))
            .filter(|(_, v)| !v.is_empty())
            .collect();
        if !failures.is_empty() {
            return Err(NewsError::ValidationFailed(failures));
        }
        let mut added = 0;
        for r in records {
            if self.seen.insert((r.summary.clone(), r.window_start, r.window_end)) {
                self.records.push(r);
                added += 1;
            }
        }
        Ok(added)
    }

    /// Trends ranked for `topic`. A trend tagged with the topic's slug scores
    /// 1; others score by text similarity between the topic and the trend's
    /// summary plus tags. Zero-score trends are dropped. Ties go to the later
    /// `window_end`, then to the lexicographically smaller first tag, then
    /// summary.
    pub fn relevant_trends(&self, topic: &Topic, limit: usize) -> Result<Vec<Scored<TrendRecord>>, NewsError> {
        if limit == 0 {
            return Err(NewsError::InvalidLimit);
        }
        if self.records.is_empty() {
            return Err(NewsError::EmptyStore);
        }
        let query = format!("{} {}", topic.name, topic.slug.replace('-', " "));
        let docs: Vec<String> = self
            .records
            .iter()
            .map(|r| format!("{} {}", r.summary, r.topic_tags.join(" ").replace('-', " ")))
            .collect();
        let doc_refs: Vec<&str> = docs.iter().map(|s| s.as_str()).collect();
        let text_scores = self.scorer.scores(&query, &doc_refs);
        let mut ranked: Vec<Scored<TrendRecord>> = self
            .records
            .iter()
            .zip(text_scores)
            .map(|(r, s)| {
                let score = if r.topic_tags.contains(&topic.slug) { 1.0 } else { s };
                Scored { item: r.clone(), score }
            })
            .filter(|s| s.score > 0.0)
            .collect();
        ranked.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(b.item.window_end.cmp(&a.item.window_end))
                .then(a.item.topic_tags.first().cmp(&b.item.topic_tags.first()))
                .then(a.item.summary.cmp(&b.item.summary))
        });
        ranked.truncate(limit);
        Ok(ranked)
    }
}

pub trait HeadlineSource: Send + Sync {
    /// Headlines published within `[start, end]`, most relevant first.
    fn search_sources(
        &self,
        query: &str,
        start: Date,
        end: Date,
        limit: usize,
    ) -> Result<Vec<SourceHeadline>, NewsError>;
}

fn check_search(query: &str, start: Date, end: Date, limit: usize) -> Result<(), NewsError> {
    if query.trim().is_empty() {
        return Err(NewsError::EmptyQuery);
    }
    if start > end {
        return Err(NewsError::InvalidRange { start, end });
    }
    if limit == 0 {
        return Err(NewsError::InvalidLimit);
    }
    Ok(())
}

/// Offline headline search over a fixed corpus. Headlines with no term in
/// common with the query are not returned.
pub struct FixtureNews {
    headlines: Vec<SourceHeadline>,
    scorer: Box<dyn RelevanceScorer>,
}

impl FixtureNews {
    pub fn new(headlines: Vec<SourceHeadline>) -> Self {
        Self {
            headlines,
            scorer: Box::new(TfIdfScorer),
        }
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, NewsError> {
        let headlines: Vec<SourceHeadline> = read_jsonl(path)?;
        if let Some((i, v)) = headlines.iter().enumerate().find(|(_, h)| !h.is_valid()) {
            return Err(NewsError::ValidationFailed(vec![(i, v.validate())]));
        }
        Ok(Self::new(headlines))
    }

    pub fn len(&self) -> usize {
        self.headlines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.headlines.is_empty()
    }
}

impl HeadlineSource for FixtureNews {
    fn search_sources(
        &self,
        query: &str,
        start: Date,
        end: Date,
        limit: usize,
    ) -> Result<Vec<SourceHeadline>, NewsError> {
        check_search(query, start, end, limit)?;
        if self.headlines.is_empty() {
            return Err(NewsError::EmptyStore);
        }
        let docs: Vec<&str> = self.headlines.iter().map(|h| h.headline.as_str()).collect();
        let scores = self.scorer.scores(query, &docs);
        let mut hits: Vec<(f64, &SourceHeadline)> = scores
            .into_iter()
            .zip(&self.headlines)
            .filter(|(s, h)| *s > 0.0 && h.published >= start && h.published <= end)
            .collect();
        hits.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(b.1.published.cmp(&a.1.published))
                .then(a.1.headline.cmp(&b.1.headline))
        });
        Ok(hits.into_iter().take(limit).map(|(_, h)| h.clone()).collect())
    }
}

/// Live headline search: `GET {base_url}/search?q=&from=&to=&limit=`
/// answering `{"articles": [SourceHeadline, ...]}`.
pub struct HttpNews {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct SearchResponse {
    articles: Vec<SourceHeadline>,
}

impl HttpNews {
    pub fn new(base_url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into(),
            api_key: std::env::var(NEWS_KEY_ENV).ok(),
            agent,
        }
    }
}

impl HeadlineSource for HttpNews {
    fn search_sources(
        &self,
        query: &str,
        start: Date,
        end: Date,
        limit: usize,
    ) -> Result<Vec<SourceHeadline>, NewsError> {
        check_search(query, start, end, limit)?;
        let url = format!("{}/search", self.base_url.trim_end_matches('/'));
        let mut req = self
            .agent
            .get(url)
            .query("q", query)
            .query("from", start.to_string())
            .query("to", end.to_string())
            .query("limit", limit.to_string());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .call()
            .map_err(|e| NewsError::ProviderUnavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| NewsError::ProviderUnavailable(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(NewsError::ProviderUnavailable(format!("HTTP {status}: {body}")));
        }
        let parsed: SearchResponse = serde_json::from_str(&body)
            .map_err(|e| NewsError::ProviderUnavailable(format!("bad response: {e}")))?;
        let mut articles: Vec<SourceHeadline> = parsed
            .articles
            .into_iter()
            .filter(|h| h.is_valid() && h.published >= start && h.published <= end)
            .collect();
        articles.truncate(limit);
        Ok(articles)
    }
}
