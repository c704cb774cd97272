//! From a forecast to an estimate, in six sequential stages:
//!
//! 1. reformulate and categorise the event text
//! 2. rank trends relevant to the forecast's topic
//! 3. search headlines published in the 90 days before the forecast
//! 4. condense the headlines into key events
//! 5. ask whether the event belongs to a mutually exclusive outcome set
//! 6. prompt for a probability and aggregate the answer-token alternatives
//!
//! Each stage is exposed on its own; [`Pipeline::estimate`] is nothing but
//! their composition, and it records a trace of input and output hashes per
//! stage.

use std::fmt;

use chrono::Days;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::consistency::{detect_exclusive, ConsistencyError, Exclusivity};
use crate::domain::{Date, EstimateResult, ForecastSpec, SourceHeadline, Topic, Validate, DEFAULT_TOPICS, OTHER_CATEGORY};
use crate::estimator::{aggregate, extract_guesses, AnchorPolicy, EstimatorError};
use crate::llm::{LlmError, LlmProvider};
use crate::news::{HeadlineSource, NewsError, TrendStore};
use crate::prompts::{self, field_value, section_items, ESTIMATE, KEY_EVENTS, REFORMULATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Reformulate,
    Trends,
    Sources,
    KeyEvents,
    Exclusivity,
    Estimate,
}

impl Stage {
    pub fn step(self) -> u8 {
        match self {
            Stage::Validate => 0,
            Stage::Reformulate => 1,
            Stage::Trends => 2,
            Stage::Sources => 3,
            Stage::KeyEvents => 4,
            Stage::Exclusivity => 5,
            Stage::Estimate => 6,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Validate => "validate",
            Stage::Reformulate => "reformulate",
            Stage::Trends => "trends",
            Stage::Sources => "sources",
            Stage::KeyEvents => "key_events",
            Stage::Exclusivity => "exclusivity",
            Stage::Estimate => "estimate",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("invalid forecast: {0}")]
    InvalidSpec(String),
    #[error("query must not be empty")]
    EmptyQuery,
    #[error(transparent)]
    Gateway(#[from] LlmError),
    #[error(transparent)]
    News(#[from] NewsError),
    #[error(transparent)]
    Consistency(#[from] ConsistencyError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("unparseable model answer: {0:?}")]
    Malformed(String),
}

#[derive(Debug, Error)]
#[error("stage {step} ({stage}) failed: {source}", step = stage.step())]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: StageError,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<StageError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError {
            stage,
            source: e.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTrace {
    pub step: u8,
    pub stage: Stage,
    pub input_hash: String,
    pub output_hash: String,
}

fn short_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("trace value serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reformulation {
    pub event: String,
    pub category: String,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub trend_limit: usize,
    pub source_limit: usize,
    pub source_window_days: u64,
    pub max_key_events: usize,
    pub anchor: AnchorPolicy,
    pub categories: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            trend_limit: 5,
            source_limit: 20,
            source_window_days: 90,
            max_key_events: 10,
            anchor: AnchorPolicy::default(),
            categories: DEFAULT_TOPICS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimation {
    pub result: EstimateResult,
    pub reformulation: Reformulation,
    pub trace: Vec<StageTrace>,
}

pub struct Pipeline<'a> {
    pub llm: &'a dyn LlmProvider,
    pub trends: &'a TrendStore,
    pub news: &'a dyn HeadlineSource,
    pub config: PipelineConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(llm: &'a dyn LlmProvider, trends: &'a TrendStore, news: &'a dyn HeadlineSource) -> Self {
        Self {
            llm,
            trends,
            news,
            config: PipelineConfig::default(),
        }
    }

    /// Step 1. The category is one of the configured names, or `other`.
    pub fn reformulate(&self, query: &str) -> Result<Reformulation, StageError> {
        if query.trim().is_empty() {
            return Err(StageError::EmptyQuery);
        }
        let prompt = REFORMULATE.render(&[
            ("categories", &self.config.categories.join(", ")),
            ("query", query.trim()),
        ]);
        let text = self.llm.complete(&prompt, &self.llm.deterministic_params())?.full_text;
        let event = field_value(&text, "EVENT")
            .filter(|e| !e.is_empty())
            .ok_or_else(|| StageError::Malformed(text.clone()))?;
        let raw_category = field_value(&text, "CATEGORY").unwrap_or_default();
        let category = self
            .config
            .categories
            .iter()
            .find(|c| c.eq_ignore_ascii_case(&raw_category))
            .cloned()
            .unwrap_or_else(|| OTHER_CATEGORY.to_string());
        Ok(Reformulation { event, category })
    }

    /// Step 2. An empty trend store yields no trends rather than an error.
    pub fn relevant_trends(&self, topic_slug: &str) -> Result<Vec<String>, StageError> {
        match self.trends.relevant_trends(&Topic::from_slug(topic_slug), self.config.trend_limit) {
            Ok(ranked) => Ok(ranked.into_iter().map(|s| s.item.summary).collect()),
            Err(NewsError::EmptyStore) => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    /// Step 3 over `[as_of - window, as_of]`.
    pub fn search_sources(&self, event: &str, as_of: Date) -> Result<Vec<SourceHeadline>, StageError> {
        let start = as_of
            .checked_sub_days(Days::new(self.config.source_window_days))
            .unwrap_or(Date::MIN);
        match self.news.search_sources(event, start, as_of, self.config.source_limit) {
            Ok(h) => Ok(h),
            Err(NewsError::EmptyStore) => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    /// Step 4. No headlines means no model call.
    pub fn extract_key_events(&self, headlines: &[SourceHeadline]) -> Result<Vec<String>, StageError> {
        if headlines.is_empty() || self.config.max_key_events == 0 {
            return Ok(Vec::new());
        }
        let lines: Vec<String> = headlines
            .iter()
            .map(|h| format!("{} ({}, {})", h.headline, h.origin, h.published))
            .collect();
        let prompt = KEY_EVENTS.render(&[
            ("max", &self.config.max_key_events.to_string()),
            ("headlines", &prompts::bullet_list(&lines)),
        ]);
        let text = self.llm.complete(&prompt, &self.llm.deterministic_params())?.full_text;
        Ok(text
            .lines()
            .filter_map(|l| l.trim().strip_prefix("- "))
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .take(self.config.max_key_events)
            .collect())
    }

    /// Step 5.
    pub fn detect_exclusive(&self, event: &str, headlines: &[SourceHeadline]) -> Result<Exclusivity, StageError> {
        Ok(detect_exclusive(self.llm, event, headlines)?)
    }

    /// Step 6: prompt, extract guesses at the answer position, aggregate.
    pub fn estimate_probability(
        &self,
        spec: &ForecastSpec,
        event: &str,
        trends: &[String],
        key_events: &[String],
    ) -> Result<ProbabilityAnswer, StageError> {
        let prompt = ESTIMATE.render(&[
            ("event", event),
            ("start", &spec.timeframe_start.to_string()),
            ("end", &spec.timeframe_end.to_string()),
            ("today", &spec.created_at.to_string()),
            ("trends", &prompts::bullet_list(trends)),
            ("key_events", &prompts::bullet_list(key_events)),
        ]);
        let completion = self.llm.complete(&prompt, &self.llm.deterministic_params())?;
        let guesses = extract_guesses(&completion, &self.config.anchor)?;
        let agg = aggregate(&guesses)?;
        Ok(ProbabilityAnswer {
            p_hat: agg.p_hat,
            u_hat: agg.u_hat,
            guesses,
            supporting: section_items(&completion.full_text, "SUPPORTING"),
            opposing: section_items(&completion.full_text, "OPPOSING"),
        })
    }

    /// Runs stages 1 to 6 in order.
    pub fn estimate(&self, spec: &ForecastSpec) -> Result<Estimation, PipelineError> {
        if let Some(v) = spec.validate().first() {
            return Err(PipelineError {
                stage: Stage::Validate,
                source: StageError::InvalidSpec(v.to_string()),
            });
        }
        let mut trace = Vec::with_capacity(6);
        let mut record = |stage: Stage, input: String, output: String| {
            trace.push(StageTrace {
                step: stage.step(),
                stage,
                input_hash: input,
                output_hash: output,
            })
        };

        let reformulation = self.reformulate(&spec.title).at(Stage::Reformulate)?;
        record(Stage::Reformulate, short_hash(&spec.title), short_hash(&reformulation));

        let trends = self.relevant_trends(&spec.topic).at(Stage::Trends)?;
        record(Stage::Trends, short_hash(&spec.topic), short_hash(&trends));

        let sources = self
            .search_sources(&reformulation.event, spec.created_at)
            .at(Stage::Sources)?;
        record(
            Stage::Sources,
            short_hash(&(&reformulation.event, spec.created_at)),
            short_hash(&sources),
        );

        let key_events = self.extract_key_events(&sources).at(Stage::KeyEvents)?;
        record(Stage::KeyEvents, short_hash(&sources), short_hash(&key_events));

        let exclusivity = self
            .detect_exclusive(&reformulation.event, &sources)
            .at(Stage::Exclusivity)?;
        record(
            Stage::Exclusivity,
            short_hash(&reformulation.event),
            short_hash(&exclusivity),
        );

        let answer = self
            .estimate_probability(spec, &reformulation.event, &trends, &key_events)
            .at(Stage::Estimate)?;
        record(
            Stage::Estimate,
            short_hash(&(&reformulation.event, &trends, &key_events)),
            short_hash(&answer),
        );

        let result = EstimateResult {
            forecast_id: spec.id.clone(),
            p_hat: answer.p_hat,
            u_hat: answer.u_hat,
            guesses: answer.guesses,
            positive_trends: answer.supporting,
            negative_trends: answer.opposing,
            estimated_at: spec.created_at,
            sources_empty: sources.is_empty(),
            exclusive_set: exclusivity.set_label,
        };
        Ok(Estimation {
            result,
            reformulation,
            trace,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityAnswer {
    pub p_hat: f64,
    pub u_hat: f64,
    pub guesses: Vec<crate::domain::ProbabilityGuess>,
    pub supporting: Vec<String>,
    pub opposing: Vec<String>,
}
