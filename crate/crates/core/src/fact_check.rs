//! Three-valued verdicts on whether a forecast event happened.
//!
//! The verdict prompt lists numbered headlines and the model must cite the
//! numbers it relied on, or answer `EVIDENCE: NONE`. An answer with neither
//! is asked once more; if it still cites nothing it becomes Inconclusive and
//! is flagged `uncited`.
//!
//! While a forecast window is still open, "did not happen" only means "not
//! yet", so it is reported as Inconclusive unless the model states the event
//! can no longer occur.

use chrono::Days;
use thiserror::Error;

use crate::domain::{CheckPurpose, Date, ForecastSpec, OutcomeRecord, SourceHeadline, Validate, Verdict};
use crate::llm::{LlmError, LlmProvider};
use crate::news::{HeadlineSource, NewsError};
use crate::prompts::{self, field_value, FACT_CHECK, FORMAT_REMINDER};

#[derive(Debug, Error)]
pub enum FactCheckError {
    #[error("invalid forecast: {0}")]
    InvalidSpec(String),
    #[error("cannot check on {as_of}: the window opens on {start}")]
    WindowNotOpen { as_of: Date, start: Date },
    #[error("stage sources failed: {0}")]
    Sources(#[source] NewsError),
    #[error("stage verdict failed: {0}")]
    Gateway(#[source] LlmError),
    #[error("stage verdict failed: unparseable answer {0:?}")]
    Malformed(String),
}

/// A parsed verdict answer, before the open-window rule is applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerdictAnswer {
    pub verdict: Verdict,
    pub impossible: bool,
    /// 1-based source numbers. `None` when the answer cites nothing usable;
    /// `Some(vec![])` for an explicit `NONE`.
    pub citations: Option<Vec<usize>>,
}

/// Parses the three answer lines. Citations outside `1..=n_sources` make the
/// answer count as uncited.
pub fn parse_verdict(text: &str, n_sources: usize) -> Option<VerdictAnswer> {
    let raw = field_value(text, "VERDICT")?;
    let verdict = match raw.to_ascii_uppercase().replace([' ', '-'], "_").as_str() {
        "HAPPENED" => Verdict::Happened,
        "INCONCLUSIVE" => Verdict::Inconclusive,
        "DID_NOT_HAPPEN" | "DIDNOTHAPPEN" => Verdict::DidNotHappen,
        _ => return None,
    };
    let impossible = field_value(text, "IMPOSSIBLE")
        .map(|s| s.eq_ignore_ascii_case("yes"))
        .unwrap_or(false);
    let citations = field_value(text, "EVIDENCE").and_then(|e| {
        if e.eq_ignore_ascii_case("none") {
            return Some(Vec::new());
        }
        let nums: Option<Vec<usize>> = e
            .split(',')
            .map(|t| t.trim().trim_matches(['[', ']']).parse().ok())
            .collect();
        nums.filter(|n| !n.is_empty() && n.iter().all(|&i| (1..=n_sources).contains(&i)))
    });
    Some(VerdictAnswer {
        verdict,
        impossible,
        citations,
    })
}

pub struct FactChecker<'a> {
    pub llm: &'a dyn LlmProvider,
    pub news: &'a dyn HeadlineSource,
    pub source_limit: usize,
    /// How far back screening looks before `created_at`.
    pub screen_window_days: u64,
}

impl<'a> FactChecker<'a> {
    pub fn new(llm: &'a dyn LlmProvider, news: &'a dyn HeadlineSource) -> Self {
        Self {
            llm,
            news,
            source_limit: 20,
            screen_window_days: 90,
        }
    }

    /// Resolves `spec` on `as_of` from sources published in
    /// `[timeframe_start, min(as_of, timeframe_end)]`.
    pub fn check(&self, spec: &ForecastSpec, as_of: Date) -> Result<OutcomeRecord, FactCheckError> {
        validate(spec)?;
        if as_of < spec.timeframe_start {
            return Err(FactCheckError::WindowNotOpen {
                as_of,
                start: spec.timeframe_start,
            });
        }
        let end = as_of.min(spec.timeframe_end);
        self.run(spec, as_of, spec.timeframe_start, end, CheckPurpose::Resolution)
    }

    /// False when the event was already reported before the forecast was
    /// made. The record is returned too, tagged as a screening check.
    pub fn screen_validity(&self, spec: &ForecastSpec) -> Result<(bool, OutcomeRecord), FactCheckError> {
        validate(spec)?;
        let start = spec
            .created_at
            .checked_sub_days(Days::new(self.screen_window_days))
            .unwrap_or(Date::MIN);
        let record = self.run(spec, spec.created_at, start, spec.created_at, CheckPurpose::Screening)?;
        Ok((record.verdict != Verdict::Happened, record))
    }

    fn run(
        &self,
        spec: &ForecastSpec,
        as_of: Date,
        start: Date,
        end: Date,
        purpose: CheckPurpose,
    ) -> Result<OutcomeRecord, FactCheckError> {
        let sources = match self.news.search_sources(&spec.title, start, end, self.source_limit) {
            Ok(s) => s,
            Err(NewsError::EmptyStore) => Vec::new(),
            Err(e) => return Err(FactCheckError::Sources(e)),
        };
        let window_open = as_of < spec.timeframe_end;
        let prompt = render_prompt(spec, start, end, !window_open, purpose, &sources);
        let params = self.llm.deterministic_params();

        let mut answer = None;
        let mut last_text = String::new();
        for attempt in 0..2 {
            let p = if attempt == 0 {
                prompt.clone()
            } else {
                format!("{prompt}{FORMAT_REMINDER}")
            };
            last_text = self.llm.complete(&p, &params).map_err(FactCheckError::Gateway)?.full_text;
            answer = parse_verdict(&last_text, sources.len());
            if answer.as_ref().is_some_and(|a| a.citations.is_some()) {
                break;
            }
        }
        let answer = answer.ok_or(FactCheckError::Malformed(last_text))?;

        let (verdict, uncited, evidence) = match answer.citations {
            None => (Verdict::Inconclusive, true, Vec::new()),
            Some(cited) => {
                let verdict = if answer.verdict == Verdict::DidNotHappen && window_open && !answer.impossible {
                    Verdict::Inconclusive
                } else {
                    answer.verdict
                };
                let evidence = cited.iter().map(|&i| sources[i - 1].headline.clone()).collect();
                (verdict, false, evidence)
            }
        };
        let mut record = OutcomeRecord::new(spec.id.clone(), verdict, as_of);
        record.purpose = purpose;
        record.uncited = uncited;
        record.evidence = evidence;
        Ok(record)
    }
}

fn validate(spec: &ForecastSpec) -> Result<(), FactCheckError> {
    match spec.validate().first() {
        Some(v) => Err(FactCheckError::InvalidSpec(v.to_string())),
        None => Ok(()),
    }
}

fn render_prompt(
    spec: &ForecastSpec,
    start: Date,
    end: Date,
    closed: bool,
    purpose: CheckPurpose,
    sources: &[SourceHeadline],
) -> String {
    let lines: Vec<String> = sources
        .iter()
        .map(|h| format!("{} ({}, {})", h.headline, h.origin, h.published))
        .collect();
    let mode = match purpose {
        CheckPurpose::Resolution => "resolution",
        CheckPurpose::Screening => "screening",
    };
    FACT_CHECK.render(&[
        ("mode", mode),
        ("event", &spec.title),
        ("description", &spec.description),
        ("start", &start.to_string()),
        ("end", &end.to_string()),
        ("closed", if closed { "yes" } else { "no" }),
        ("sources", &prompts::numbered_list(&lines)),
    ])
}
