//! Event forecasting from topic trends.
//!
//! A language model proposes candidate events for a topic ([`forecast_gen`]),
//! a six-stage pipeline estimates each event's probability by weighting every
//! numeric alternative at the answer position by its token probability
//! ([`pipeline`], [`estimator`]), outcomes are resolved from news sources
//! ([`fact_check`]), and the raw estimates are recalibrated with an
//! epsilon-SVR ([`calibration`]) and scored ([`scoring`]). Everything is
//! persisted in a hash-chained ledger ([`store`]).
//!
//! Model and news access go through the [`llm::LlmProvider`] and
//! [`news::HeadlineSource`] traits, with fixture-backed implementations for
//! offline runs.

pub mod calibration;
pub mod consistency;
pub mod domain;
pub mod estimator;
pub mod fact_check;
pub mod forecast_gen;
pub mod io;
pub mod llm;
pub mod news;
pub mod pipeline;
pub mod prompts;
pub mod scoring;
pub mod store;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/consistency.md")]
    mod consistency {}
    #[doc = include_str!("../../../book/src/fact-checking.md")]
    mod fact_checking {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/ledger.md")]
    mod ledger {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/fixtures.md")]
    mod fixtures {}
}
