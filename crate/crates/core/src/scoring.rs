//! Brier scores, reliability bins, per-topic breakdowns and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("cannot score an empty set")]
    EmptySet,
    #[error("pair {index}: forecast {value} is outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },
    #[error("pair {index}: outcome must be 0 or 1")]
    InvalidOutcome { index: usize },
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("{path}: {reason}")]
    Write { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub label: String,
    /// `(forecast, outcome)` pairs.
    pub pairs: Vec<(f64, u8)>,
}

impl ScoredSet {
    pub fn new(label: impl Into<String>, pairs: Vec<(f64, u8)>) -> Self {
        Self {
            label: label.into(),
            pairs,
        }
    }

    fn check(&self) -> Result<(), ScoringError> {
        if self.pairs.is_empty() {
            return Err(ScoringError::EmptySet);
        }
        for (index, &(f, o)) in self.pairs.iter().enumerate() {
            if !(0.0..=1.0).contains(&f) {
                return Err(ScoringError::InvalidProbability { index, value: f });
            }
            if o > 1 {
                return Err(ScoringError::InvalidOutcome { index });
            }
        }
        Ok(())
    }
}

/// Mean squared difference between forecast and outcome.
pub fn brier(set: &ScoredSet) -> Result<f64, ScoringError> {
    set.check()?;
    let total: f64 = set
        .pairs
        .iter()
        .map(|&(f, o)| {
            let d = f - f64::from(o);
            d * d
        })
        .sum();
    Ok(total / set.pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    /// `None` for empty bins, as are the two fields below.
    pub mean_predicted: Option<f64>,
    pub conversion_rate: Option<f64>,
    pub mean_uncertainty: Option<f64>,
}

fn bin_edge(i: usize, n: usize) -> f64 {
    i as f64 / n as f64
}

/// Index of the bin holding `p`, consistent with the emitted edges: bin `i`
/// holds `edge(i) <= p < edge(i + 1)`, and the last bin also holds 1.0.
pub fn bin_index(p: f64, n_bins: usize) -> usize {
    let mut i = ((p * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1);
    while i > 0 && p < bin_edge(i, n_bins) {
        i -= 1;
    }
    while i + 1 < n_bins && p >= bin_edge(i + 1, n_bins) {
        i += 1;
    }
    i
}

/// Equal-width bins over `[0, 1]` from `(p, u, o)` records.
pub fn calibration_bins(records: &[(f64, f64, u8)], n_bins: usize) -> Result<Vec<CalibrationBin>, ScoringError> {
    if n_bins < 2 {
        return Err(ScoringError::TooFewBins(n_bins));
    }
    for (index, &(p, _, o)) in records.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(ScoringError::InvalidProbability { index, value: p });
        }
        if o > 1 {
            return Err(ScoringError::InvalidOutcome { index });
        }
    }
    let mut sums = vec![(0usize, 0.0, 0.0, 0.0); n_bins];
    for &(p, u, o) in records {
        let s = &mut sums[bin_index(p, n_bins)];
        s.0 += 1;
        s.1 += p;
        s.2 += f64::from(o);
        s.3 += u;
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(i, (count, sp, so, su))| {
            let mean = |s: f64| (count > 0).then(|| s / count as f64);
            CalibrationBin {
                low: bin_edge(i, n_bins),
                high: bin_edge(i + 1, n_bins),
                count,
                mean_predicted: mean(sp),
                conversion_rate: mean(so),
                mean_uncertainty: mean(su),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRow {
    pub topic: String,
    pub count: usize,
    pub mean_predicted: f64,
    pub conversion_rate: f64,
    /// Positive when the topic's events happened more often than predicted.
    pub gap: f64,
}

/// One row per topic, ordered by topic.
pub fn topic_breakdown(records: &[(String, f64, u8)]) -> Vec<TopicRow> {
    let mut by_topic: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
    for (topic, p, o) in records {
        let e = by_topic.entry(topic).or_default();
        e.0 += 1;
        e.1 += p;
        e.2 += f64::from(*o);
    }
    by_topic
        .into_iter()
        .map(|(topic, (count, sp, so))| {
            let mean_predicted = sp / count as f64;
            let conversion_rate = so / count as f64;
            TopicRow {
                topic: topic.to_string(),
                count,
                mean_predicted,
                conversion_rate,
                gap: conversion_rate - mean_predicted,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: String,
    pub n: usize,
    pub brier: f64,
}

/// Everything a report directory is rendered from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub bins: Vec<CalibrationBin>,
    pub topics: Vec<TopicRow>,
    pub scores: Vec<MethodScore>,
    /// `(reason, count)` of records left out of scoring.
    pub exclusions: Vec<(String, usize)>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), ScoringError> {
    fs::write(path, contents).map_err(|e| ScoringError::Write {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Vec<u8>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    fill(&mut w).expect("in-memory write");
    w.into_inner().expect("in-memory flush")
}

pub fn calibration_csv(bins: &[CalibrationBin]) -> Vec<u8> {
    csv_bytes(
        &["bin_low", "bin_high", "count", "mean_predicted", "conversion_rate", "mean_uncertainty"],
        |w| {
            for b in bins {
                w.write_record([
                    format!("{:.6}", b.low),
                    format!("{:.6}", b.high),
                    b.count.to_string(),
                    opt(b.mean_predicted),
                    opt(b.conversion_rate),
                    opt(b.mean_uncertainty),
                ])?;
            }
            Ok(())
        },
    )
}

pub fn topics_csv(rows: &[TopicRow]) -> Vec<u8> {
    csv_bytes(&["topic", "count", "mean_predicted", "conversion_rate", "gap"], |w| {
        for r in rows {
            w.write_record([
                r.topic.clone(),
                r.count.to_string(),
                format!("{:.6}", r.mean_predicted),
                format!("{:.6}", r.conversion_rate),
                format!("{:+.6}", r.gap),
            ])?;
        }
        Ok(())
    })
}

/// Brier scores are written to three decimals.
pub fn summary_csv(scores: &[MethodScore]) -> Vec<u8> {
    csv_bytes(&["method", "n", "brier"], |w| {
        for s in scores {
            w.write_record([s.method.clone(), s.n.to_string(), format!("{:.3}", s.brier)])?;
        }
        Ok(())
    })
}

/// Every ordered pair of methods scored on the same number of records,
/// with the absolute and relative Brier reduction of `method` against
/// `reference`.
pub fn improvement_csv(scores: &[MethodScore]) -> Vec<u8> {
    csv_bytes(&["method", "reference", "brier_delta", "relative_improvement"], |w| {
        for m in scores {
            for r in scores.iter().filter(|r| r.method != m.method && r.n == m.n) {
                let relative = if r.brier > 0.0 {
                    format!("{:.4}", (r.brier - m.brier) / r.brier)
                } else {
                    String::new()
                };
                w.write_record([
                    m.method.clone(),
                    r.method.clone(),
                    format!("{:.4}", r.brier - m.brier),
                    relative,
                ])?;
            }
        }
        Ok(())
    })
}

pub fn exclusions_csv(rows: &[(String, usize)]) -> Vec<u8> {
    csv_bytes(&["reason", "count"], |w| {
        for (reason, count) in rows {
            w.write_record([reason.clone(), count.to_string()])?;
        }
        Ok(())
    })
}

const SVG_SIZE: f64 = 480.0;
const SVG_MARGIN: f64 = 56.0;
const MAX_RADIUS: f64 = 28.0;

/// Reliability bubble chart: x is mean predicted probability, y the share
/// of events that happened, bubble area proportional to the bin count and
/// darker fill for higher mean uncertainty. Empty bins draw nothing.
pub fn calibration_svg(bins: &[CalibrationBin]) -> String {
    let plot = SVG_SIZE - 2.0 * SVG_MARGIN;
    let x = |v: f64| SVG_MARGIN + v * plot;
    let y = |v: f64| SVG_SIZE - SVG_MARGIN - v * plot;
    let max_count = bins.iter().map(|b| b.count).max().unwrap_or(0).max(1) as f64;
    let max_u = bins
        .iter()
        .filter_map(|b| b.mean_uncertainty)
        .fold(0.0, f64::max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#bbbbbb" stroke-dasharray="4 4"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let _ = writeln!(
        s,
        r##"<polyline points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="none" stroke="#333333"/>"##,
        x(0.0),
        y(1.0),
        x(0.0),
        y(0.0),
        x(1.0),
        y(0.0)
    );
    for t in 0..=5 {
        let v = t as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"#,
            x(v),
            y(0.0) + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            x(0.0) - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">mean predicted probability</text>"#,
        SVG_SIZE / 2.0,
        SVG_SIZE - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">share of events that happened</text>"#,
        SVG_SIZE / 2.0,
        SVG_SIZE / 2.0
    );
    for b in bins.iter().filter(|b| b.count > 0) {
        let (Some(p), Some(c)) = (b.mean_predicted, b.conversion_rate) else {
            continue;
        };
        let u = b.mean_uncertainty.unwrap_or(0.0);
        let lightness = if max_u > 0.0 { 88.0 - 58.0 * (u / max_u) } else { 88.0 };
        let r = MAX_RADIUS * (b.count as f64 / max_count).sqrt();
        let text = if lightness < 55.0 { "#ffffff" } else { "#000000" };
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="{r:.2}" fill="hsl(210,60%,{lightness:.1}%)" stroke="#1f3b57"/>"##,
            x(p),
            y(c)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="{text}">{}</text>"#,
            x(p),
            y(c) + 4.0,
            b.count
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the report files into `dir`, creating it if needed, and returns
/// their paths in write order.
pub fn emit_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>, ScoringError> {
    fs::create_dir_all(dir).map_err(|e| ScoringError::Write {
        path: dir.display().to_string(),
        reason: e.to_string(),
    })?;
    let files: [(&str, Vec<u8>); 6] = [
        ("calibration.csv", calibration_csv(&report.bins)),
        ("topics.csv", topics_csv(&report.topics)),
        ("summary.csv", summary_csv(&report.scores)),
        ("improvement.csv", improvement_csv(&report.scores)),
        ("exclusions.csv", exclusions_csv(&report.exclusions)),
        ("calibration.svg", calibration_svg(&report.bins).into_bytes()),
    ];
    let mut manifest = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = dir.join(name);
        write_file(&path, &bytes)?;
        manifest.push(path);
    }
    Ok(manifest)
}
