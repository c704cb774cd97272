use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::anyhow;
use chrono::{DateTime, SubsecRound, Utc};
use foresight::calibration::{fit, split, Hyper, Sample, SplitSpec};
use foresight::domain::{Date, ForecastSpec, Topic, Verdict};
use foresight::fact_check::FactChecker;
use foresight::forecast_gen::{generate_forecasts, GenerationOptions};
use foresight::llm::{Gateway, HttpConfig, HttpProvider, LlmProvider, MockProvider};
use foresight::news::{FixtureNews, HeadlineSource, HttpNews, TrendStore};
use foresight::pipeline::{Estimation, Pipeline, PipelineError};
use foresight::scoring::{self, brier, MethodScore, Report, ScoredSet};
use foresight::store::{CalibratedValue, CalibrationMethod, Ledger, Payload, SplitRole};

use crate::config::Config;
use crate::exit::{Classify, CmdResult, Exit, Failure};
use crate::{Cli, Command};

const DEFAULT_LEDGER: &str = "ledger.jsonl";

struct Ctx {
    config: Config,
    ledger_path: PathBuf,
    mock: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CmdResult {
    let config = Config::resolve(cli.config.as_deref()).map_err(|e| Failure::new(Exit::Usage, e))?;
    let ledger_path = cli
        .ledger
        .or_else(|| config.ledger_path.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_LEDGER));
    let mock = cli.mock.or_else(|| config.mock_fixtures_dir.clone());
    let ctx = Ctx {
        config,
        ledger_path,
        mock,
    };
    match cli.command {
        Command::Generate { topic, count, as_of } => generate(&ctx, &topic, count, as_of),
        Command::Estimate {
            id,
            all_pending,
            trace,
            force,
            jobs,
        } => estimate(&ctx, id.as_deref(), all_pending, trace, force, jobs),
        Command::Reconcile => reconcile(&ctx),
        Command::Factcheck { as_of, screen } => factcheck(&ctx, as_of, screen),
        Command::Calibrate {
            seed,
            c,
            eps,
            gamma,
            model,
            as_of,
        } => calibrate(&ctx, seed, c, eps, gamma, model, as_of),
        Command::Report {
            out,
            scores,
            bins,
            as_of,
        } => report(&ctx, &out, scores.as_deref(), bins, as_of),
        Command::Status => status(&ctx),
    }
}

/// `SOURCE_DATE_EPOCH`, when set, pins ledger timestamps for reproducible
/// runs.
fn ledger_clock() -> Box<dyn Fn() -> DateTime<Utc> + Send + Sync> {
    match std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse::<i64>().ok())
        .and_then(|s| DateTime::from_timestamp(s, 0))
    {
        Some(t) => Box::new(move || t),
        None => Box::new(|| Utc::now().trunc_subsecs(0)),
    }
}

impl Ctx {
    fn ledger(&self) -> CmdResult<Ledger> {
        Ok(Ledger::open(&self.ledger_path)
            .map_err(Classify::fail)?
            .with_clock(ledger_clock()))
    }

    fn ledger_read(&self) -> CmdResult<Ledger> {
        Ledger::open_read_only(&self.ledger_path).map_err(Classify::fail)
    }

    fn ledger_dir(&self) -> PathBuf {
        self.ledger_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    }

    fn llm(&self) -> CmdResult<Box<dyn LlmProvider>> {
        if let Some(dir) = &self.mock {
            let mock = MockProvider::load_dir(&dir.join("llm")).map_err(Classify::fail)?;
            return Ok(Box::new(mock));
        }
        let (Some(url), Some(model)) = (&self.config.llm_base_url, &self.config.llm_model) else {
            return Err(Failure::usage(
                "no model configured: set llm_base_url and llm_model in the config file, or pass --mock",
            ));
        };
        let provider = HttpProvider::new(HttpConfig::new(url.clone(), model.clone()));
        Ok(Box::new(Gateway::new(Box::new(provider))))
    }

    fn news(&self) -> CmdResult<Box<dyn HeadlineSource>> {
        if let Some(dir) = &self.mock {
            let path = dir.join("headlines.jsonl");
            if !path.exists() {
                return Ok(Box::new(FixtureNews::new(Vec::new())));
            }
            return Ok(Box::new(FixtureNews::load_jsonl(&path).map_err(Classify::fail)?));
        }
        match &self.config.news_base_url {
            Some(url) => Ok(Box::new(HttpNews::new(url.clone()))),
            None => Err(Failure::usage(
                "no news source configured: set news_base_url in the config file, or pass --mock",
            )),
        }
    }

    fn trends(&self) -> CmdResult<TrendStore> {
        let path = match &self.mock {
            Some(dir) => Some(dir.join("trends.jsonl")).filter(|p| p.exists()),
            None => self.config.trends_path.clone(),
        };
        match path {
            Some(p) => TrendStore::load_jsonl(&p).map_err(Classify::fail),
            None => Ok(TrendStore::new()),
        }
    }
}

fn today() -> Date {
    Utc::now().date_naive()
}

fn generate(ctx: &Ctx, topic: &str, count: usize, as_of: Option<Date>) -> CmdResult {
    let topic = Topic::from_slug(topic);
    let mut ledger = ctx.ledger()?;
    let llm = ctx.llm()?;
    let trends = ctx.trends()?;
    let generation = generate_forecasts(
        llm.as_ref(),
        &trends,
        &topic,
        count,
        as_of.unwrap_or_else(today),
        GenerationOptions::default(),
    )
    .map_err(|e| e.fail().context("stage generate"))?;
    for w in &generation.warnings {
        eprintln!("warning: {w}");
    }
    let mut added = 0;
    for spec in generation.specs {
        if ledger.forecast(&spec.id).is_some() {
            eprintln!("warning: {} is already in the ledger; skipped", spec.id);
            continue;
        }
        println!("{}\t{}", spec.id, spec.title);
        ledger.append(Payload::Forecast(spec)).map_err(Classify::fail)?;
        added += 1;
    }
    println!("{added} generated");
    Ok(())
}

/// Applies `f` to every item on up to `jobs` threads; results keep input
/// order.
fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                results.lock().expect("no panics while held")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("no panics while held")
        .into_iter()
        .map(|r| r.expect("every index processed"))
        .collect()
}

fn write_trace(dir: &Path, est: &Estimation) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Failure::new(Exit::Storage, e))?;
    let path = dir.join(format!("{}.jsonl", est.result.forecast_id));
    let mut body = String::new();
    for t in &est.trace {
        body.push_str(&serde_json::to_string(t).expect("trace serializes"));
        body.push('\n');
    }
    fs::write(&path, body).map_err(|e| Failure::new(Exit::Storage, anyhow!("{}: {e}", path.display())))
}

fn estimate(
    ctx: &Ctx,
    id: Option<&str>,
    all_pending: bool,
    trace: bool,
    force: bool,
    jobs: Option<usize>,
) -> CmdResult {
    let mut ledger = ctx.ledger()?;
    let targets: Vec<ForecastSpec> = match id {
        Some(id) => {
            let state = ledger
                .forecast(id)
                .ok_or_else(|| Failure::usage(format!("unknown forecast id {id}")))?;
            if state.estimate.is_some() && !force {
                eprintln!("warning: {id} is already estimated; pass --force to re-estimate");
                println!("0 estimated");
                return Ok(());
            }
            vec![state.spec.clone()]
        }
        None => {
            debug_assert!(all_pending);
            ledger
                .forecasts()
                .filter(|s| force || s.estimate.is_none())
                .map(|s| s.spec.clone())
                .collect()
        }
    };
    if targets.is_empty() {
        println!("0 estimated");
        return Ok(());
    }
    let llm = ctx.llm()?;
    let trends = ctx.trends()?;
    let news = ctx.news()?;
    let pipeline = Pipeline::new(llm.as_ref(), &trends, news.as_ref());
    let jobs = jobs.or(ctx.config.jobs).unwrap_or(1);
    let results: Vec<Result<Estimation, PipelineError>> = parallel_map(&targets, jobs, |spec| pipeline.estimate(spec));

    let mut first_failure = None;
    let mut done = 0;
    for (spec, result) in targets.iter().zip(results) {
        match result {
            Ok(est) => {
                if trace {
                    write_trace(&ctx.ledger_dir().join("traces"), &est)?;
                }
                let r = &est.result;
                println!(
                    "{}\tp_hat={:.4}\tu_hat={:.4}{}",
                    r.forecast_id,
                    r.p_hat,
                    r.u_hat,
                    if r.sources_empty { "\t(no sources)" } else { "" }
                );
                ledger
                    .append(Payload::Estimate(est.result))
                    .map_err(Classify::fail)?;
                done += 1;
            }
            Err(e) => {
                eprintln!("error: {}: {e}", spec.id);
                first_failure.get_or_insert(e.fail().context(format!("estimating {}", spec.id)));
            }
        }
    }
    println!("{done} estimated");
    first_failure.map_or(Ok(()), Err)
}

fn reconcile(ctx: &Ctx) -> CmdResult {
    let mut ledger = ctx.ledger()?;
    let adjusted = ledger.reconcile().map_err(Classify::fail)?;
    for v in &adjusted {
        println!(
            "{}\t{}\tp={:.4}",
            v.forecast_id,
            v.set_label.as_deref().unwrap_or(""),
            v.probability
        );
    }
    println!("{} reconciled", adjusted.len());
    Ok(())
}

fn factcheck(ctx: &Ctx, as_of: Date, screen: bool) -> CmdResult {
    let mut ledger = ctx.ledger()?;
    let llm = ctx.llm()?;
    let news = ctx.news()?;
    let checker = FactChecker::new(llm.as_ref(), news.as_ref());

    if screen {
        let pending: Vec<ForecastSpec> = ledger
            .forecasts()
            .filter(|s| s.screening.is_none())
            .map(|s| s.spec.clone())
            .collect();
        let mut invalid = 0;
        for spec in &pending {
            let (valid, record) = checker
                .screen_validity(spec)
                .map_err(|e| e.fail().context(format!("screening {}", spec.id)))?;
            if !valid {
                invalid += 1;
                println!("{}\tinvalid: already happened before {}", spec.id, spec.created_at);
            }
            ledger.append(Payload::Outcome(record)).map_err(Classify::fail)?;
        }
        println!("{} screened, {invalid} invalid", pending.len());
    }

    let due: Vec<ForecastSpec> = ledger
        .forecasts()
        .filter(|s| s.is_valid() && s.spec.timeframe_start <= as_of)
        .filter(|s| match &s.resolution {
            None => true,
            Some((_, o)) => {
                let settled = o.verdict == Verdict::Happened
                    || (o.binary_outcome.is_some() && o.checked_at >= s.spec.timeframe_end);
                !settled && o.checked_at < as_of
            }
        })
        .map(|s| s.spec.clone())
        .collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for spec in &due {
        let record = checker
            .check(spec, as_of)
            .map_err(|e| e.fail().context(format!("checking {}", spec.id)))?;
        println!(
            "{}\t{}{}",
            spec.id,
            record.verdict,
            if record.uncited { "\t(uncited)" } else { "" }
        );
        *counts.entry(record.verdict.label()).or_default() += 1;
        ledger.append(Payload::Outcome(record)).map_err(Classify::fail)?;
    }
    let summary: Vec<String> = counts.iter().map(|(k, v)| format!("{k} {v}")).collect();
    println!("{} checked{}{}", due.len(), if summary.is_empty() { "" } else { ": " }, summary.join(", "));
    Ok(())
}

fn mean_brier(pairs: Vec<(f64, u8)>) -> f64 {
    brier(&ScoredSet::new("", pairs)).unwrap_or(f64::NAN)
}

fn calibrate(
    ctx: &Ctx,
    seed: u64,
    c: Option<f64>,
    eps: Option<f64>,
    gamma: Option<f64>,
    model_path: Option<PathBuf>,
    as_of: Option<Date>,
) -> CmdResult {
    let mut ledger = ctx.ledger()?;
    let dataset = ledger.calibration_dataset(as_of.unwrap_or(Date::MAX));
    println!(
        "{} usable records ({} inconclusive, {} invalid, {} unresolved excluded)",
        dataset.rows.len(),
        dataset.inconclusive,
        dataset.invalid,
        dataset.unresolved
    );
    let (train, test) = split(&dataset.rows, SplitSpec::new(seed)).map_err(Classify::fail)?;
    let defaults = Hyper::default();
    let hyper = Hyper {
        c: c.or(ctx.config.svr_c).unwrap_or(defaults.c),
        epsilon: eps.or(ctx.config.svr_epsilon).unwrap_or(defaults.epsilon),
        gamma: gamma.or(ctx.config.svr_gamma),
    };
    let samples: Vec<Sample> = train
        .iter()
        .map(|r| Sample::new(r.p_hat, r.u_hat, f64::from(r.outcome)))
        .collect();
    let model = fit(&samples, hyper).map_err(Classify::fail)?;

    println!("split\tn\traw_brier\tcalibrated_brier");
    for (name, rows) in [("train", &train), ("test", &test)] {
        let raw = mean_brier(rows.iter().map(|r| (r.p_hat, r.outcome)).collect());
        let cal = mean_brier(rows.iter().map(|r| (model.predict(r.p_hat, r.u_hat), r.outcome)).collect());
        println!("{name}\t{}\t{raw:.4}\t{cal:.4}", rows.len());
    }

    let path = model_path
        .or_else(|| ctx.config.model_path.clone())
        .unwrap_or_else(|| ctx.ledger_dir().join("svr_model.json"));
    model.save(&path).map_err(Classify::fail)?;
    println!("model written to {}", path.display());

    let mut appended = 0;
    for (role, rows) in [(SplitRole::Train, &train), (SplitRole::Test, &test)] {
        for r in rows.iter() {
            let probability = model.predict(r.p_hat, r.u_hat);
            let unchanged = ledger
                .forecast(&r.forecast_id)
                .and_then(|s| s.svr.as_ref())
                .is_some_and(|(_, v)| {
                    v.model_hash.as_deref() == Some(model.training_hash.as_str())
                        && v.probability == probability
                        && v.split == Some(role)
                });
            if unchanged {
                continue;
            }
            let value = CalibratedValue {
                forecast_id: r.forecast_id.clone(),
                method: CalibrationMethod::Svr,
                probability,
                set_label: None,
                model_hash: Some(model.training_hash.clone()),
                split: Some(role),
            };
            ledger.append(Payload::Calibrated(value)).map_err(Classify::fail)?;
            appended += 1;
        }
    }
    println!("{appended} calibrated values recorded");
    Ok(())
}

fn read_scores(path: &Path) -> CmdResult<Vec<MethodScore>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Failure::new(Exit::Storage, anyhow!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<Result<Vec<MethodScore>, _>>()
        .map_err(|e| Failure::new(Exit::Parse, anyhow!("{}: {e}", path.display())))
}

fn report(ctx: &Ctx, out: &Path, scores: Option<&Path>, bins: Option<usize>, as_of: Option<Date>) -> CmdResult {
    let ledger = ctx.ledger_read()?;
    let dataset = ledger.calibration_dataset(as_of.unwrap_or(Date::MAX));
    let rows = &dataset.rows;
    let n_bins = bins.or(ctx.config.calibration_bins).unwrap_or(scoring::DEFAULT_BINS);
    let bins = scoring::calibration_bins(
        &rows.iter().map(|r| (r.p_hat, r.u_hat, r.outcome)).collect::<Vec<_>>(),
        n_bins,
    )
    .map_err(|e| e.fail())?;
    let topics = scoring::topic_breakdown(&rows.iter().map(|r| (r.topic.clone(), r.p_hat, r.outcome)).collect::<Vec<_>>());

    let scores = match scores {
        Some(path) => read_scores(path)?,
        None => {
            let mut s = Vec::new();
            let mut push = |method: &str, pairs: Vec<(f64, u8)>| {
                if !pairs.is_empty() {
                    s.push(MethodScore {
                        method: method.into(),
                        n: pairs.len(),
                        brier: mean_brier(pairs),
                    });
                }
            };
            push("random", rows.iter().map(|r| (0.5, r.outcome)).collect());
            push("raw", rows.iter().map(|r| (r.p_hat, r.outcome)).collect());
            let held_out: Vec<(f64, f64, u8)> = rows
                .iter()
                .filter_map(|r| {
                    let (_, v) = ledger.forecast(&r.forecast_id)?.svr.as_ref()?;
                    (v.split == Some(SplitRole::Test)).then_some((r.p_hat, v.probability, r.outcome))
                })
                .collect();
            push("raw_test", held_out.iter().map(|&(p, _, o)| (p, o)).collect());
            push("calibrated_test", held_out.iter().map(|&(_, c, o)| (c, o)).collect());
            s
        }
    };

    let report = Report {
        bins,
        topics,
        scores,
        exclusions: vec![
            ("inconclusive".into(), dataset.inconclusive),
            ("invalid".into(), dataset.invalid),
            ("unresolved".into(), dataset.unresolved),
        ],
    };
    for path in scoring::emit_report(&report, out).map_err(|e| e.fail())? {
        println!("{}", path.display());
    }
    Ok(())
}

fn status(ctx: &Ctx) -> CmdResult {
    let ledger = ctx.ledger_read()?;
    for s in ledger.forecasts() {
        let p = s.probability().map(|p| format!("{p:.4}")).unwrap_or_else(|| "-".into());
        println!("{}\t{}\t{p}\t{}", s.spec.id, s.lifecycle(), s.spec.title);
    }
    Ok(())
}
