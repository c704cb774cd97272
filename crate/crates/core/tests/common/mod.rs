#![allow(dead_code)]

use std::path::{Path, PathBuf};

use foresight::calibration::Sample;
use foresight::domain::{Date, ForecastSpec, OutcomeRecord, ProbabilityGuess, SourceHeadline, Verdict};
use foresight::fact_check::{FactCheckError, FactChecker};
use foresight::io::read_jsonl;
use foresight::llm::{FixtureEntry, MockProvider, ScriptedCompletion};
use foresight::news::FixtureNews;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

/// Stated probability uniform on [0, 1], true event rate p^2, uncertainty
/// uniform on [0, 0.2] and unrelated to the outcome.
pub fn squared_benchmark(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p: f64 = rng.random();
            let u: f64 = rng.random::<f64>() * 0.2;
            let o = if rng.random::<f64>() < p * p { 1.0 } else { 0.0 };
            Sample::new(p, u, o)
        })
        .collect()
}

pub fn brier_of(pairs: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let v: Vec<f64> = pairs.into_iter().map(|(f, o)| (f - o) * (f - o)).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Double-double arithmetic, enough for an independent reference
/// evaluation of the weighted mean and standard deviation.
#[derive(Debug, Clone, Copy)]
pub struct Dd(pub f64, pub f64);

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick(hi: f64, lo: f64) -> Dd {
    let s = hi + lo;
    Dd(s, lo - (s - hi))
}

impl Dd {
    pub fn from(x: f64) -> Dd {
        Dd(x, 0.0)
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.0, o.0);
        quick(s, e + self.1 + o.1)
    }

    pub fn neg(self) -> Dd {
        Dd(-self.0, -self.1)
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = self.0 * o.0;
        let e = self.0.mul_add(o.0, -p);
        quick(p, e + self.0 * o.1 + self.1 * o.0)
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.0 / o.0;
        let r = self.sub(o.mul(Dd::from(q1)));
        let q2 = r.0 / o.0;
        let r = r.sub(o.mul(Dd::from(q2)));
        let q3 = r.0 / o.0;
        quick(q1, q2).add(Dd::from(q3))
    }

    pub fn sqrt(self) -> Dd {
        if self.0 <= 0.0 {
            return Dd::from(0.0);
        }
        let s = Dd::from(self.0.sqrt());
        s.add(self.sub(s.mul(s)).div(s.add(s)))
    }

    pub fn value(self) -> f64 {
        self.0 + self.1
    }
}

/// Weighted mean and standard deviation with weights `exp(logprob)`,
/// evaluated directly (no shift, input order) in double-double.
pub fn reference_aggregate(guesses: &[ProbabilityGuess]) -> (f64, f64) {
    let w: Vec<Dd> = guesses.iter().map(|g| Dd::from(g.logprob.exp())).collect();
    let total = w.iter().fold(Dd::from(0.0), |a, &x| a.add(x));
    let mean = guesses
        .iter()
        .zip(&w)
        .fold(Dd::from(0.0), |a, (g, &x)| a.add(x.mul(Dd::from(g.value))))
        .div(total);
    let var = guesses
        .iter()
        .zip(&w)
        .fold(Dd::from(0.0), |a, (g, &x)| {
            let d = Dd::from(g.value).sub(mean);
            a.add(x.mul(d.mul(d)))
        })
        .div(total);
    (mean.value(), var.sqrt().value())
}

/// 1 to 20 guesses, values in [0, 1], logprobs in [-10, 0]. Some sets
/// reuse values so that ties and equal-value sets occur.
pub fn random_guesses(rng: &mut ChaCha8Rng) -> Vec<ProbabilityGuess> {
    let n = rng.random_range(1..=20);
    let pool: Vec<f64> = (0..rng.random_range(1..=n)).map(|_| rng.random()).collect();
    let grid = rng.random_bool(0.3);
    (0..n)
        .map(|_| {
            let v = pool[rng.random_range(0..pool.len())];
            let v = if grid { (v * 100.0).round() / 100.0 } else { v };
            ProbabilityGuess::new(v, -10.0 * rng.random::<f64>())
        })
        .collect()
}

/// A hand-labelled fact-check scenario: the forecast, the headlines the
/// news source holds, the model's scripted answers (a second one serves
/// the format-reminder retry) and the expected verdict.
#[derive(Debug, Clone, Deserialize)]
pub struct FactCase {
    pub name: String,
    pub label: Verdict,
    pub topic: String,
    pub title: String,
    pub description: String,
    pub created_at: Date,
    pub timeframe_start: Date,
    pub timeframe_end: Date,
    pub as_of: Date,
    pub headlines: Vec<SourceHeadline>,
    pub answers: Vec<String>,
    pub evidence: Vec<String>,
}

impl FactCase {
    pub fn spec(&self) -> ForecastSpec {
        ForecastSpec {
            id: ForecastSpec::content_id(&self.topic, &self.title, self.timeframe_start, self.timeframe_end),
            topic: self.topic.clone(),
            title: self.title.clone(),
            description: self.description.clone(),
            timeframe_start: self.timeframe_start,
            timeframe_end: self.timeframe_end,
            created_at: self.created_at,
            seed_trends: Vec::new(),
            prompt_template: None,
        }
    }

    pub fn resolve(&self) -> Result<OutcomeRecord, FactCheckError> {
        let mut rules = Vec::new();
        if let Some(retry) = self.answers.get(1) {
            rules.push(text_rule(&["FORMAT REMINDER"], retry));
        }
        rules.push(text_rule(&["TASK: FACT_CHECK"], &self.answers[0]));
        let llm = MockProvider::new(rules).unwrap();
        let news = FixtureNews::new(self.headlines.clone());
        FactChecker::new(&llm, &news).check(&self.spec(), self.as_of)
    }
}

pub fn fact_cases() -> Vec<FactCase> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fact_check_cases.jsonl");
    read_jsonl(&path).unwrap()
}

pub fn text_rule(patterns: &[&str], text: &str) -> FixtureEntry {
    FixtureEntry {
        name: None,
        fingerprint: None,
        matches: patterns.iter().map(|s| s.to_string()).collect(),
        completion: ScriptedCompletion::Text { text: text.to_string() },
    }
}

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo")
}

pub fn fixed_clock() -> foresight::store::Clock {
    use std::sync::atomic::{AtomicI64, Ordering};
    let tick = AtomicI64::new(1_717_200_000);
    Box::new(move || chrono::DateTime::from_timestamp(tick.fetch_add(60, Ordering::Relaxed), 0).unwrap())
}

pub fn day(s: &str) -> Date {
    s.parse().unwrap()
}

/// A ledger of exactly 200 entries touching every entry kind: screened
/// invalid forecasts, inconclusive resolutions, reconciled exclusive sets,
/// calibrated values and re-estimates that supersede a reconciliation.
pub fn build_ledger(path: &Path) -> foresight::store::Ledger {
    use foresight::domain::{CheckPurpose, EstimateResult};
    use foresight::store::{CalibratedValue, CalibrationMethod, Ledger, Payload, SplitRole};

    let topics = ["energy", "finance", "space", "health"];
    let mut ledger = Ledger::open(path).unwrap().with_clock(fixed_clock());
    let mut ids = Vec::new();
    for i in 0..40u32 {
        let topic = topics[i as usize % 4];
        let title = format!("Event number {i} takes place");
        let (start, end) = (day("2024-03-01"), day("2024-06-30"));
        let spec = ForecastSpec {
            id: ForecastSpec::content_id(topic, &title, start, end),
            topic: topic.into(),
            title,
            description: format!("Description of event {i}."),
            timeframe_start: start,
            timeframe_end: end,
            created_at: day("2024-02-01"),
            seed_trends: vec![format!("trend {}", i % 5)],
            prompt_template: Some("forecast_gen@1".into()),
        };
        ids.push(spec.id.clone());
        ledger.append(Payload::Forecast(spec)).unwrap();
    }
    let estimate = |id: &str, i: u32, shift: f64| {
        let p = (f64::from(i % 10) * 0.1 + 0.05 + shift).min(1.0);
        EstimateResult {
            forecast_id: id.into(),
            p_hat: p,
            u_hat: 0.01 * f64::from(i % 6),
            guesses: vec![ProbabilityGuess::new(p, -0.2)],
            positive_trends: vec![],
            negative_trends: vec![],
            estimated_at: day("2024-02-01"),
            sources_empty: i.is_multiple_of(9),
            exclusive_set: (i % 10 < 3).then(|| format!("set {}", i / 10)),
        }
    };
    for (i, id) in ids.iter().enumerate() {
        let mut e = estimate(id, i as u32, 0.0);
        if e.exclusive_set.is_some() {
            e.p_hat = 0.5 + 0.1 * (i % 10) as f64;
            e.guesses = vec![ProbabilityGuess::new(e.p_hat, -0.2)];
        }
        ledger.append(Payload::Estimate(e)).unwrap();
    }
    assert_eq!(ledger.reconcile().unwrap().len(), 12);
    for (i, id) in ids.iter().enumerate() {
        let verdict = if i % 13 == 5 { Verdict::Happened } else { Verdict::DidNotHappen };
        let mut o = OutcomeRecord::new(id.clone(), verdict, day("2024-02-01"));
        o.purpose = CheckPurpose::Screening;
        ledger.append(Payload::Outcome(o)).unwrap();
    }
    for (i, id) in ids.iter().enumerate() {
        let verdict = match i % 7 {
            3 => Verdict::Inconclusive,
            0 | 2 | 5 => Verdict::Happened,
            _ => Verdict::DidNotHappen,
        };
        let checked = if i % 8 == 7 { "2024-09-01" } else { "2024-07-15" };
        ledger.append(Payload::Outcome(OutcomeRecord::new(id.clone(), verdict, day(checked)))).unwrap();
    }
    for (i, id) in ids.iter().enumerate().filter(|(i, _)| i % 2 == 0) {
        ledger
            .append(Payload::Calibrated(CalibratedValue {
                forecast_id: id.clone(),
                method: CalibrationMethod::Svr,
                probability: 0.3 + 0.01 * i as f64,
                set_label: None,
                model_hash: Some("ab".repeat(32)),
                split: Some(if i % 4 == 0 { SplitRole::Train } else { SplitRole::Test }),
            }))
            .unwrap();
    }
    for (i, id) in ids.iter().enumerate().take(8) {
        ledger.append(Payload::Estimate(estimate(id, i as u32, 0.02))).unwrap();
    }
    assert_eq!(ledger.len(), 200);
    ledger
}

pub const DEMO_TOPICS: [&str; 3] = ["Automotive", "Energy", "Climate Change"];

pub struct Demo {
    pub llm: MockProvider,
    pub trends: foresight::news::TrendStore,
    pub news: FixtureNews,
}

impl Demo {
    pub fn load() -> Demo {
        let dir = demo_dir();
        Demo {
            llm: MockProvider::load_dir(&dir.join("llm")).unwrap(),
            trends: foresight::news::TrendStore::load_jsonl(&dir.join("trends.jsonl")).unwrap(),
            news: FixtureNews::load_jsonl(&dir.join("headlines.jsonl")).unwrap(),
        }
    }

    pub fn specs(&self) -> Vec<ForecastSpec> {
        use foresight::domain::Topic;
        use foresight::forecast_gen::{generate_forecasts, GenerationOptions};
        let counts = [6, 5, 5];
        DEMO_TOPICS
            .iter()
            .zip(counts)
            .flat_map(|(t, n)| {
                generate_forecasts(&self.llm, &self.trends, &Topic::new(*t), n, day("2024-02-15"), GenerationOptions::default())
                    .unwrap()
                    .specs
            })
            .collect()
    }

    /// The `(token, logprob)` alternatives scripted for the estimate of
    /// `event`, read straight from the fixture file.
    pub fn scripted_alternatives(&self, event: &str) -> Vec<(String, f64)> {
        let entries: Vec<FixtureEntry> = read_jsonl(&demo_dir().join("llm/50_estimate.jsonl")).unwrap();
        let needle = format!("EVENT: {event}\n");
        let entry = entries.iter().find(|e| e.matches.contains(&needle)).unwrap();
        let ScriptedCompletion::Segments { segments } = &entry.completion else {
            panic!("estimate fixture without segments")
        };
        segments
            .iter()
            .find_map(|s| match s {
                foresight::llm::Segment::Alternatives { alternatives } => Some(alternatives.clone()),
                _ => None,
            })
            .unwrap()
    }
}
