//! Candidate event generation from topic trends.
//!
//! The model answers in a rigid block format, one block per forecast:
//!
//! ```text
//! FORECAST 1
//! TITLE: Global EV sales pass 20 million units
//! DESCRIPTION: Annual battery-electric and plug-in hybrid sales exceed 20M.
//! START: 2024-03-01
//! END: 2024-12-31
//! ```
//!
//! Text before the first `FORECAST` line is ignored. Inside a block every
//! non-blank line must be one of the four fields, each exactly once.

use std::collections::HashSet;

use log::warn;
use thiserror::Error;

use crate::domain::{Date, ForecastSpec, Topic, Validate};
use crate::llm::{LlmError, LlmProvider};
use crate::news::{NewsError, TrendStore};
use crate::prompts::{self, FORECAST_GEN, FORMAT_REMINDER};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("generation output is empty")]
    EmptyInput,
    #[error("forecast count must be at least 1")]
    InvalidCount,
    #[error("malformed generation at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Gateway(#[from] LlmError),
    #[error(transparent)]
    News(#[from] NewsError),
}

fn malformed(line: usize, reason: impl Into<String>) -> GenerationError {
    GenerationError::Malformed {
        line,
        reason: reason.into(),
    }
}

/// The fields a model emits for one forecast.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedFields {
    pub title: String,
    pub description: String,
    pub timeframe_start: Date,
    pub timeframe_end: Date,
}

impl From<&ForecastSpec> for GeneratedFields {
    fn from(s: &ForecastSpec) -> Self {
        Self {
            title: s.title.clone(),
            description: s.description.clone(),
            timeframe_start: s.timeframe_start,
            timeframe_end: s.timeframe_end,
        }
    }
}

pub fn render_generation(forecasts: &[GeneratedFields]) -> String {
    let mut out = String::new();
    for (i, f) in forecasts.iter().enumerate() {
        out.push_str(&format!(
            "FORECAST {}\nTITLE: {}\nDESCRIPTION: {}\nSTART: {}\nEND: {}\n\n",
            i + 1,
            f.title,
            f.description,
            f.timeframe_start,
            f.timeframe_end
        ));
    }
    out
}

#[derive(Default)]
struct Partial {
    header_line: usize,
    title: Option<String>,
    description: Option<String>,
    start: Option<Date>,
    end: Option<Date>,
}

impl Partial {
    fn finish(self) -> Result<GeneratedFields, GenerationError> {
        let line = self.header_line;
        let missing = |name: &str| malformed(line, format!("forecast block is missing {name}"));
        Ok(GeneratedFields {
            title: self.title.ok_or_else(|| missing("TITLE"))?,
            description: self.description.ok_or_else(|| missing("DESCRIPTION"))?,
            timeframe_start: self.start.ok_or_else(|| missing("START"))?,
            timeframe_end: self.end.ok_or_else(|| missing("END"))?,
        })
    }
}

fn set_once<T>(slot: &mut Option<T>, value: T, line: usize, name: &str) -> Result<(), GenerationError> {
    if slot.is_some() {
        return Err(malformed(line, format!("duplicate {name}")));
    }
    *slot = Some(value);
    Ok(())
}

/// Parses every forecast block. Line numbers in errors are 1-based.
pub fn parse_generation(raw: &str) -> Result<Vec<GeneratedFields>, GenerationError> {
    if raw.trim().is_empty() {
        return Err(GenerationError::EmptyInput);
    }
    let mut done = Vec::new();
    let mut current: Option<Partial> = None;
    for (i, line) in raw.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "FORECAST" || line.starts_with("FORECAST ") {
            if let Some(p) = current.take() {
                done.push(p.finish()?);
            }
            current = Some(Partial {
                header_line: n,
                ..Default::default()
            });
            continue;
        }
        let Some(block) = current.as_mut() else {
            continue;
        };
        let (key, value) = line
            .split_once(':')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| malformed(n, format!("expected FIELD: value, got {line:?}")))?;
        if value.is_empty() {
            return Err(malformed(n, format!("{key} is empty")));
        }
        let date = || {
            value
                .parse::<Date>()
                .map_err(|e| malformed(n, format!("{key} is not a YYYY-MM-DD date: {e}")))
        };
        match key {
            "TITLE" => set_once(&mut block.title, value.to_string(), n, key)?,
            "DESCRIPTION" => set_once(&mut block.description, value.to_string(), n, key)?,
            "START" => set_once(&mut block.start, date()?, n, key)?,
            "END" => set_once(&mut block.end, date()?, n, key)?,
            other => return Err(malformed(n, format!("unknown field {other:?}"))),
        }
    }
    if let Some(p) = current.take() {
        done.push(p.finish()?);
    }
    if done.is_empty() {
        return Err(malformed(1, "no FORECAST block found"));
    }
    Ok(done)
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub specs: Vec<ForecastSpec>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationOptions {
    /// How many relevant trends go into the prompt.
    pub trend_count: usize,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self { trend_count: 8 }
    }
}

fn build_specs(
    raw: &str,
    topic: &Topic,
    n: usize,
    as_of: Date,
    seed_trends: &[String],
) -> Result<Vec<ForecastSpec>, GenerationError> {
    let fields = parse_generation(raw)?;
    if fields.len() < n {
        return Err(malformed(0, format!("expected {n} forecasts, got {}", fields.len())));
    }
    let mut ids = HashSet::new();
    let mut specs = Vec::with_capacity(n);
    for (i, f) in fields.into_iter().take(n).enumerate() {
        if f.timeframe_start < as_of {
            return Err(malformed(
                0,
                format!("forecast {} starts {} before {as_of}", i + 1, f.timeframe_start),
            ));
        }
        let spec = ForecastSpec {
            id: ForecastSpec::content_id(&topic.slug, &f.title, f.timeframe_start, f.timeframe_end),
            topic: topic.slug.clone(),
            title: f.title,
            description: f.description,
            timeframe_start: f.timeframe_start,
            timeframe_end: f.timeframe_end,
            created_at: as_of,
            seed_trends: seed_trends.to_vec(),
            prompt_template: Some(FORECAST_GEN.id()),
        };
        if let Some(v) = spec.validate().first() {
            return Err(malformed(0, format!("forecast {}: {v}", i + 1)));
        }
        if !ids.insert(spec.id.clone()) {
            return Err(malformed(0, format!("forecast {} duplicates an earlier one", i + 1)));
        }
        specs.push(spec);
    }
    Ok(specs)
}

/// Generates `n` forecasts for `topic` whose timeframes open on or after
/// `as_of`. A parse or validity failure is retried once with a format
/// reminder appended to the prompt.
pub fn generate_forecasts(
    llm: &dyn LlmProvider,
    trends: &TrendStore,
    topic: &Topic,
    n: usize,
    as_of: Date,
    options: GenerationOptions,
) -> Result<Generation, GenerationError> {
    if n == 0 {
        return Err(GenerationError::InvalidCount);
    }
    let mut warnings = Vec::new();
    let seed: Vec<String> = match trends.relevant_trends(topic, options.trend_count.max(1)) {
        Ok(ranked) => ranked.into_iter().map(|s| s.item.summary).collect(),
        Err(NewsError::EmptyStore) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    if seed.is_empty() {
        let msg = format!("no trends relevant to {:?}; generating from background knowledge", topic.slug);
        warn!("{msg}");
        warnings.push(msg);
    }
    let count = n.to_string();
    let as_of_s = as_of.to_string();
    let trends_s = prompts::bullet_list(&seed);
    let prompt = FORECAST_GEN.render(&[
        ("topic", &topic.name),
        ("as_of", &as_of_s),
        ("count", &count),
        ("trends", &trends_s),
    ]);
    let params = llm.deterministic_params();
    let first = llm.complete(&prompt, &params)?;
    let specs = match build_specs(&first.full_text, topic, n, as_of, &seed) {
        Ok(specs) => specs,
        Err(e @ (GenerationError::Malformed { .. } | GenerationError::EmptyInput)) => {
            warnings.push(format!("first generation rejected ({e}); retried with format reminder"));
            let retry = llm.complete(&format!("{prompt}{FORMAT_REMINDER}"), &params)?;
            build_specs(&retry.full_text, topic, n, as_of, &seed)?
        }
        Err(e) => return Err(e),
    };
    Ok(Generation { specs, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> Date {
        s.parse().unwrap()
    }

    const TWO: &str = "Here are the forecasts.\n\nFORECAST 1\nTITLE: EV sales pass 20M\nDESCRIPTION: Global EV sales exceed 20 million units.\nSTART: 2024-03-01\nEND: 2024-12-31\n\nFORECAST 2\nTITLE: Solid-state battery launch\nDESCRIPTION: A major automaker ships a solid-state battery car.\nSTART: 2024-04-01\nEND: 2024-10-31\n";

    #[test]
    fn parses_two_blocks() {
        let f = parse_generation(TWO).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[1].title, "Solid-state battery launch");
        assert_eq!(f[0].timeframe_end, d("2024-12-31"));
    }

    #[test]
    fn missing_timeframe_is_malformed() {
        let raw = "FORECAST 1\nTITLE: t\nDESCRIPTION: d\nSTART: 2024-03-01\n";
        match parse_generation(raw) {
            Err(GenerationError::Malformed { line, reason }) => {
                assert_eq!(line, 1);
                assert!(reason.contains("END"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reports_line_of_bad_date() {
        let raw = "FORECAST 1\nTITLE: t\nDESCRIPTION: d\nSTART: March\nEND: 2024-10-01\n";
        assert!(matches!(parse_generation(raw), Err(GenerationError::Malformed { line: 4, .. })));
    }

    #[test]
    fn rejects_unknown_and_duplicate_fields() {
        let raw = "FORECAST\nTITLE: t\nTITLE: u\n";
        assert!(matches!(parse_generation(raw), Err(GenerationError::Malformed { line: 3, .. })));
        let raw = "FORECAST\nTITLE: t\nNOTES: n\n";
        assert!(matches!(parse_generation(raw), Err(GenerationError::Malformed { line: 3, .. })));
        assert!(matches!(parse_generation("no blocks here"), Err(GenerationError::Malformed { .. })));
        assert!(matches!(parse_generation("  \n"), Err(GenerationError::EmptyInput)));
    }

    #[test]
    fn render_then_parse_is_identity() {
        let fields = parse_generation(TWO).unwrap();
        assert_eq!(parse_generation(&render_generation(&fields)).unwrap(), fields);
    }

    #[test]
    fn retroactive_forecasts_are_rejected() {
        let topic = Topic::new("Automotive");
        let err = build_specs(TWO, &topic, 2, d("2024-03-15"), &[]).unwrap_err();
        assert!(matches!(err, GenerationError::Malformed { .. }));
        let ok = build_specs(TWO, &topic, 1, d("2024-03-01"), &[]).unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(ok[0].created_at, d("2024-03-01"));
        assert_eq!(ok[0].prompt_template.as_deref(), Some("forecast_gen@v1"));
    }
}
