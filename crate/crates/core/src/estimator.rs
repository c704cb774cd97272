//! Probability guesses from token alternatives, and their aggregation.
//!
//! Every alternative token at the answer position is a guess `P_i` carrying
//! its logprob `w_i`. The estimate is the softmax-weighted mean of the
//! guesses and the uncertainty is their weighted standard deviation:
//!
//! ```text
//! p_hat = Σ e^{w_i} P_i / Σ e^{w_i}
//! u_hat = sqrt( Σ e^{w_i} (P_i - p_hat)² / Σ e^{w_i} )
//! ```
//!
//! The weights are self-normalising, so the top-k alternatives need not sum
//! to one. Logprobs are shifted by their maximum before exponentiation so
//! that very negative values do not underflow to an all-zero weight vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ProbabilityGuess;
use crate::llm::Completion;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("no token follows the {marker:?} marker")]
    AnchorNotFound { marker: String },
    #[error("answer position found but no alternative parses as a probability: {raw:?}")]
    NoParseableGuesses { raw: String },
    #[error("cannot aggregate an empty guess list")]
    EmptyGuessList,
    #[error("guess {index} has a non-finite logprob or out-of-range value")]
    InvalidGuess { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    /// Tokens are percentages in [0, 100].
    #[default]
    Percentage,
    /// Tokens are probabilities in [0, 1].
    UnitInterval,
}

/// Locates the answer position: the first non-blank token after `marker`.
/// The prompt template forces the model to write the number right there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorPolicy {
    pub marker: String,
    pub parse_mode: ParseMode,
}

impl Default for AnchorPolicy {
    fn default() -> Self {
        Self {
            marker: "Probability:".into(),
            parse_mode: ParseMode::Percentage,
        }
    }
}

/// Unsigned decimal, optionally followed by `%`, with surrounding whitespace.
fn parse_number(token: &str) -> Option<f64> {
    let t = token.trim();
    let t = t.strip_suffix('%').unwrap_or(t).trim_end();
    let mut parts = t.splitn(2, '.');
    let int = parts.next()?;
    let frac = parts.next();
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || frac.is_some_and(|f| !digits(f)) {
        return None;
    }
    t.parse().ok()
}

impl AnchorPolicy {
    /// Maps a token to a probability, or `None` if it is not a number in
    /// range for the parse mode.
    pub fn parse_token(&self, token: &str) -> Option<f64> {
        let x = parse_number(token)?;
        match self.parse_mode {
            ParseMode::Percentage if (0.0..=100.0).contains(&x) => Some(x / 100.0),
            ParseMode::UnitInterval if (0.0..=1.0).contains(&x) => Some(x),
            _ => None,
        }
    }

    /// Index of the answer position, if any.
    pub fn locate(&self, completion: &Completion) -> Option<usize> {
        let marker_end = completion.full_text.find(&self.marker)? + self.marker.len();
        let mut offset = 0;
        for (i, pos) in completion.positions.iter().enumerate() {
            let start = offset;
            offset += pos.chosen_token.len();
            if start >= marker_end && !pos.chosen_token.trim().is_empty() {
                return Some(i);
            }
        }
        None
    }
}

/// One guess per parseable alternative at the answer position.
///
/// Only the first token of a multi-token numeral is considered; each
/// alternative is parsed on its own, so `"1"` followed by `"00"` reads as 1%.
pub fn extract_guesses(
    completion: &Completion,
    policy: &AnchorPolicy,
) -> Result<Vec<ProbabilityGuess>, EstimatorError> {
    let idx = policy.locate(completion).ok_or_else(|| EstimatorError::AnchorNotFound {
        marker: policy.marker.clone(),
    })?;
    let guesses: Vec<ProbabilityGuess> = completion.positions[idx]
        .alternatives
        .iter()
        .filter(|a| a.logprob.is_finite())
        .filter_map(|a| policy.parse_token(&a.token).map(|v| ProbabilityGuess::new(v, a.logprob)))
        .collect();
    if guesses.is_empty() {
        return Err(EstimatorError::NoParseableGuesses {
            raw: completion.full_text.clone(),
        });
    }
    Ok(guesses)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub p_hat: f64,
    pub u_hat: f64,
}

/// Logprob-weighted mean and standard deviation of the guesses.
///
/// Guesses are summed in a canonical order so that the result does not
/// depend on input order, and `p_hat` is clamped to the guess hull to absorb
/// rounding.
pub fn aggregate(guesses: &[ProbabilityGuess]) -> Result<Aggregate, EstimatorError> {
    if guesses.is_empty() {
        return Err(EstimatorError::EmptyGuessList);
    }
    if let Some(index) = guesses
        .iter()
        .position(|g| !g.logprob.is_finite() || !(0.0..=1.0).contains(&g.value))
    {
        return Err(EstimatorError::InvalidGuess { index });
    }
    let mut sorted = guesses.to_vec();
    sorted.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.logprob.total_cmp(&b.logprob)));

    let lo = sorted[0].value;
    let hi = sorted[sorted.len() - 1].value;
    if lo == hi {
        return Ok(Aggregate { p_hat: lo, u_hat: 0.0 });
    }

    let max_w = sorted.iter().map(|g| g.logprob).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = sorted.iter().map(|g| (g.logprob - max_w).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mean = sorted.iter().zip(&weights).map(|(g, w)| w * g.value).sum::<f64>() / total;
    let p_hat = mean.clamp(lo, hi);
    let var = sorted
        .iter()
        .zip(&weights)
        .map(|(g, w)| w * (g.value - p_hat).powi(2))
        .sum::<f64>()
        / total;
    Ok(Aggregate {
        p_hat,
        u_hat: var.sqrt(),
    })
}
