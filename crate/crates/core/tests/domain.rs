use chrono::{Days, NaiveDate};
use foresight::domain::{
    slugify, CheckPurpose, Date, EstimateResult, ForecastSpec, OutcomeRecord, ProbabilityGuess, Topic, Validate,
    Verdict, DEFAULT_TOPICS,
};
use foresight::store::{CalibratedValue, CalibrationMethod, Payload, SplitRole};
use proptest::prelude::*;

fn date() -> impl Strategy<Value = Date> {
    (0u64..3000).prop_map(|d| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + Days::new(d))
}

fn text() -> impl Strategy<Value = String> {
    "[A-Za-z0-9][A-Za-z0-9 ,.;:!?'\"()/%&$-]{0,60}"
}

fn spec() -> impl Strategy<Value = ForecastSpec> {
    (text(), text(), date(), 1u64..400, 0u64..400, prop::collection::vec(text(), 0..4), any::<bool>()).prop_map(
        |(title, description, start, len, back, seed_trends, templated)| {
            let end = start + Days::new(len);
            ForecastSpec {
                id: ForecastSpec::content_id("energy", &title, start, end),
                topic: "energy".into(),
                title,
                description,
                timeframe_start: start,
                timeframe_end: end,
                created_at: start - Days::new(back),
                seed_trends,
                prompt_template: templated.then(|| "forecast_gen@v1".into()),
            }
        },
    )
}

fn estimate() -> impl Strategy<Value = EstimateResult> {
    (
        prop::collection::vec((0.0..=1.0f64, -20.0..=0.0f64), 1..10),
        date(),
        any::<bool>(),
        prop::option::of(text()),
        prop::collection::vec(text(), 0..3),
    )
        .prop_map(|(g, at, empty, set, trends)| {
            let guesses: Vec<ProbabilityGuess> = g.iter().map(|&(v, w)| ProbabilityGuess::new(v, w)).collect();
            let agg = foresight::estimator::aggregate(&guesses).unwrap();
            EstimateResult {
                forecast_id: "fc-0123456789abcdef".into(),
                p_hat: agg.p_hat,
                u_hat: agg.u_hat,
                guesses,
                positive_trends: trends.clone(),
                negative_trends: trends,
                estimated_at: at,
                sources_empty: empty,
                exclusive_set: set,
            }
        })
}

fn outcome() -> impl Strategy<Value = OutcomeRecord> {
    (0usize..3, date(), any::<bool>(), any::<bool>(), prop::collection::vec(text(), 0..3)).prop_map(
        |(v, at, screening, uncited, evidence)| {
            let mut o = OutcomeRecord::new("fc-0123456789abcdef", Verdict::ALL[v], at);
            o.purpose = if screening { CheckPurpose::Screening } else { CheckPurpose::Resolution };
            o.uncited = uncited;
            o.evidence = evidence;
            o
        },
    )
}

fn roundtrip<T: serde::Serialize + serde::de::DeserializeOwned>(v: &T) -> T {
    serde_json::from_str(&serde_json::to_string(v).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn specs_survive_serialization(s in spec()) {
        prop_assert!(s.is_valid());
        prop_assert_eq!(roundtrip(&s), s);
    }

    #[test]
    fn estimates_survive_serialization(e in estimate()) {
        prop_assert!(e.is_valid(), "{:?}", e.validate());
        prop_assert_eq!(roundtrip(&e), e);
    }

    #[test]
    fn outcomes_survive_serialization(o in outcome()) {
        prop_assert!(o.is_valid());
        prop_assert_eq!(roundtrip(&o), o);
    }

    #[test]
    fn payloads_survive_serialization(s in spec(), e in estimate(), o in outcome(), p in 0.0..=1.0f64) {
        let c = CalibratedValue {
            forecast_id: s.id.clone(),
            method: CalibrationMethod::Svr,
            probability: p,
            set_label: None,
            model_hash: Some("0f".repeat(32)),
            split: Some(SplitRole::Test),
        };
        for payload in [Payload::Forecast(s), Payload::Estimate(e), Payload::Outcome(o), Payload::Calibrated(c)] {
            prop_assert_eq!(roundtrip(&payload), payload);
        }
    }

    #[test]
    fn slugs_are_idempotent_and_url_safe(name in "[ -~]{0,40}") {
        let s = slugify(&name);
        prop_assert_eq!(slugify(&s), s.clone());
        prop_assert!(s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-'));
        prop_assert!(!s.starts_with('-') && !s.ends_with('-') && !s.contains("--"));
    }

    #[test]
    fn content_ids_depend_on_every_part(title in text(), start in date(), len in 1u64..100) {
        let end = start + Days::new(len);
        let id = ForecastSpec::content_id("energy", &title, start, end);
        prop_assert_eq!(&id, &ForecastSpec::content_id("energy", &title, start, end));
        prop_assert_ne!(&id, &ForecastSpec::content_id("finance", &title, start, end));
        prop_assert_ne!(&id, &ForecastSpec::content_id("energy", &title, start, end + Days::new(1)));
    }
}

#[test]
fn verdict_codes_and_outcomes() {
    for v in Verdict::ALL {
        assert_eq!(Verdict::from_code(v.code()), Some(v));
        assert_eq!(Verdict::from_label(v.label()), Some(v));
    }
    assert_eq!(Verdict::Happened.binary_outcome(), Some(1));
    assert_eq!(Verdict::DidNotHappen.binary_outcome(), Some(0));
    assert_eq!(Verdict::Inconclusive.binary_outcome(), None);
    assert_eq!(serde_json::to_string(&Verdict::DidNotHappen).unwrap(), "\"did_not_happen\"");
}

#[test]
fn default_topics_resolve_from_their_slugs() {
    assert_eq!(DEFAULT_TOPICS.len(), 15);
    for name in DEFAULT_TOPICS {
        let t = Topic::new(name);
        assert!(t.is_valid());
        assert_eq!(Topic::from_slug(&t.slug), t);
    }
    assert_eq!(Topic::from_slug("deep-sea-mining").name, "Deep Sea Mining");
}

#[test]
fn outcome_with_mismatched_binary_value_is_invalid() {
    let mut o = OutcomeRecord::new("fc-1", Verdict::Inconclusive, "2024-05-01".parse().unwrap());
    o.binary_outcome = Some(0);
    assert!(!o.is_valid());
}
