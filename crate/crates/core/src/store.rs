//! Append-only JSONL ledger of forecasts, estimates, outcomes and calibrated
//! values.
//!
//! Every line carries a hash over its content chained to the previous
//! line's hash, so editing, reordering or truncating entries is detected
//! when the ledger is opened. Each line must also be exactly the canonical
//! serialization of the entry it holds. Derived per-forecast state is
//! rebuilt by replaying entries in order through the same code path used
//! on append.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::consistency::{group_by_label, renormalize};
use crate::domain::{CheckPurpose, Date, EstimateResult, ForecastSpec, OutcomeRecord, Validate, Verdict};

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("ledger {path} is locked by another writer")]
    Locked { path: String },
    #[error("corrupt ledger at line {line}: {reason}")]
    CorruptLedger { line: usize, reason: String },
    #[error("unknown forecast id {0}")]
    UnknownForecastId(String),
    #[error("forecast {0} is already in the ledger")]
    DuplicateForecast(String),
    #[error("invalid {kind} payload: {reason}")]
    InvalidPayload { kind: EntryKind, reason: String },
    #[error("ledger was opened read-only")]
    ReadOnly,
}

fn io_err(path: &Path, source: io::Error) -> StoreError {
    StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Forecast,
    Estimate,
    Outcome,
    Calibrated,
}

impl std::fmt::Display for EntryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EntryKind::Forecast => "forecast",
            EntryKind::Estimate => "estimate",
            EntryKind::Outcome => "outcome",
            EntryKind::Calibrated => "calibrated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    /// Proportional scaling within a mutually exclusive set.
    Reconciled,
    /// Output of a fitted SVR model.
    Svr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedValue {
    pub forecast_id: String,
    pub method: CalibrationMethod,
    pub probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_label: Option<String>,
    /// Training hash of the model that produced the value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitRole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry_kind", content = "payload", rename_all = "snake_case")]
pub enum Payload {
    Forecast(ForecastSpec),
    Estimate(EstimateResult),
    Outcome(OutcomeRecord),
    Calibrated(CalibratedValue),
}

impl Payload {
    pub fn kind(&self) -> EntryKind {
        match self {
            Payload::Forecast(_) => EntryKind::Forecast,
            Payload::Estimate(_) => EntryKind::Estimate,
            Payload::Outcome(_) => EntryKind::Outcome,
            Payload::Calibrated(_) => EntryKind::Calibrated,
        }
    }

    pub fn forecast_id(&self) -> &str {
        match self {
            Payload::Forecast(f) => &f.id,
            Payload::Estimate(e) => &e.forecast_id,
            Payload::Outcome(o) => &o.forecast_id,
            Payload::Calibrated(c) => &c.forecast_id,
        }
    }

    fn check(&self) -> Result<(), StoreError> {
        let first = match self {
            Payload::Forecast(f) => f.validate().first().map(ToString::to_string),
            Payload::Estimate(e) => e.validate().first().map(ToString::to_string),
            Payload::Outcome(o) => o.validate().first().map(ToString::to_string),
            Payload::Calibrated(c) => {
                (!(0.0..=1.0).contains(&c.probability)).then(|| "probability in [0, 1]".to_string())
            }
        };
        match first {
            Some(reason) => Err(StoreError::InvalidPayload {
                kind: self.kind(),
                reason,
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub position: u64,
    #[serde(flatten)]
    pub payload: Payload,
    pub appended_at: DateTime<Utc>,
    pub entry_hash: String,
}

#[derive(Serialize)]
struct Hashed<'a> {
    position: u64,
    #[serde(flatten)]
    payload: &'a Payload,
    appended_at: &'a DateTime<Utc>,
}

fn entry_hash(prev: &str, position: u64, payload: &Payload, appended_at: &DateTime<Utc>) -> String {
    let body = serde_json::to_vec(&Hashed {
        position,
        payload,
        appended_at,
    })
    .expect("entry serializes");
    let mut h = Sha256::new();
    h.update(prev.as_bytes());
    h.update(b"\n");
    h.update(&body);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Generated,
    Estimated,
    Reconciled,
    Factchecked,
    Scored,
}

impl std::fmt::Display for Lifecycle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Lifecycle::Generated => "generated",
            Lifecycle::Estimated => "estimated",
            Lifecycle::Reconciled => "reconciled",
            Lifecycle::Factchecked => "factchecked",
            Lifecycle::Scored => "scored",
        })
    }
}

/// Latest entries of each kind for one forecast, with their positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastState {
    pub spec: ForecastSpec,
    pub estimate: Option<(u64, EstimateResult)>,
    pub reconciled: Option<(u64, CalibratedValue)>,
    pub svr: Option<(u64, CalibratedValue)>,
    pub resolution: Option<(u64, OutcomeRecord)>,
    pub screening: Option<(u64, OutcomeRecord)>,
}

impl ForecastState {
    /// False once screening found the event had already happened.
    pub fn is_valid(&self) -> bool {
        !matches!(&self.screening, Some((_, o)) if o.verdict == Verdict::Happened)
    }

    /// The reconciled probability when it postdates the latest estimate,
    /// otherwise the raw estimate.
    pub fn probability(&self) -> Option<f64> {
        let (est_pos, est) = self.estimate.as_ref()?;
        match &self.reconciled {
            Some((pos, c)) if pos > est_pos => Some(c.probability),
            _ => Some(est.p_hat),
        }
    }

    pub fn lifecycle(&self) -> Lifecycle {
        let conclusive = matches!(&self.resolution, Some((_, o)) if o.binary_outcome.is_some());
        if conclusive && self.svr.is_some() {
            Lifecycle::Scored
        } else if self.resolution.is_some() {
            Lifecycle::Factchecked
        } else if self.reconciled.is_some() {
            Lifecycle::Reconciled
        } else if self.estimate.is_some() {
            Lifecycle::Estimated
        } else {
            Lifecycle::Generated
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub forecast_id: String,
    pub topic: String,
    pub p_hat: f64,
    pub u_hat: f64,
    pub outcome: u8,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub rows: Vec<CalibrationRow>,
    /// Estimated forecasts whose latest resolution was Inconclusive.
    pub inconclusive: usize,
    /// Forecasts screened out because the event predated them.
    pub invalid: usize,
    /// Estimated forecasts with no resolution by the cutoff.
    pub unresolved: usize,
}

pub type Clock = Box<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub struct Ledger {
    path: PathBuf,
    entries: Vec<LedgerEntry>,
    state: BTreeMap<String, ForecastState>,
    writer: Option<File>,
    clock: Clock,
}

impl std::fmt::Debug for Ledger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ledger")
            .field("path", &self.path)
            .field("entries", &self.entries.len())
            .field("writable", &self.writer.is_some())
            .finish()
    }
}

impl Ledger {
    /// Opens or creates the ledger for appending, holding an exclusive lock
    /// until dropped.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        match file.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => {
                return Err(StoreError::Locked {
                    path: path.display().to_string(),
                })
            }
            Err(fs::TryLockError::Error(e)) => return Err(io_err(path, e)),
        }
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        let mut ledger = Self::replay(path, &bytes)?;
        ledger.writer = Some(file);
        Ok(ledger)
    }

    /// Reads and verifies the ledger under a shared lock. A missing file is
    /// an empty ledger.
    pub fn open_read_only(path: &Path) -> Result<Self, StoreError> {
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Self::replay(path, &[]),
            Err(e) => return Err(io_err(path, e)),
        };
        file.lock_shared().map_err(|e| io_err(path, e))?;
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        Self::replay(path, &bytes)
    }

    /// Verifies and replays raw ledger bytes.
    pub fn replay(path: &Path, bytes: &[u8]) -> Result<Self, StoreError> {
        let mut ledger = Ledger {
            path: path.to_path_buf(),
            entries: Vec::new(),
            state: BTreeMap::new(),
            writer: None,
            clock: Box::new(|| Utc::now().trunc_subsecs(0)),
        };
        if bytes.is_empty() {
            return Ok(ledger);
        }
        if bytes.last() != Some(&b'\n') {
            return Err(StoreError::CorruptLedger {
                line: bytes.split(|b| *b == b'\n').count(),
                reason: "last entry is not newline-terminated".into(),
            });
        }
        let mut prev = GENESIS_HASH.to_string();
        for (i, raw) in bytes[..bytes.len() - 1].split(|b| *b == b'\n').enumerate() {
            let line = i + 1;
            let corrupt = |reason: String| StoreError::CorruptLedger { line, reason };
            let text = std::str::from_utf8(raw).map_err(|e| corrupt(e.to_string()))?;
            let entry: LedgerEntry = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
            if entry.position != i as u64 {
                return Err(corrupt(format!("position {} out of sequence", entry.position)));
            }
            let expected = entry_hash(&prev, entry.position, &entry.payload, &entry.appended_at);
            if expected != entry.entry_hash {
                return Err(corrupt("hash mismatch".into()));
            }
            if serde_json::to_string(&entry).expect("entry serializes") != text {
                return Err(corrupt("entry is not in canonical form".into()));
            }
            ledger.apply(&entry).map_err(|e| corrupt(e.to_string()))?;
            prev = entry.entry_hash.clone();
            ledger.entries.push(entry);
        }
        Ok(ledger)
    }

    /// Replaces the timestamp source for appended entries.
    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn forecasts(&self) -> impl Iterator<Item = &ForecastState> {
        self.state.values()
    }

    pub fn forecast(&self, id: &str) -> Option<&ForecastState> {
        self.state.get(id)
    }

    fn check_reference(&self, payload: &Payload) -> Result<(), StoreError> {
        let id = payload.forecast_id();
        match (payload, self.state.contains_key(id)) {
            (Payload::Forecast(_), true) => Err(StoreError::DuplicateForecast(id.to_string())),
            (Payload::Forecast(_), false) => Ok(()),
            (_, true) => Ok(()),
            (_, false) => Err(StoreError::UnknownForecastId(id.to_string())),
        }
    }

    fn apply(&mut self, entry: &LedgerEntry) -> Result<(), StoreError> {
        self.check_reference(&entry.payload)?;
        let pos = entry.position;
        match &entry.payload {
            Payload::Forecast(f) => {
                self.state.insert(
                    f.id.clone(),
                    ForecastState {
                        spec: f.clone(),
                        estimate: None,
                        reconciled: None,
                        svr: None,
                        resolution: None,
                        screening: None,
                    },
                );
            }
            Payload::Estimate(e) => self.slot(&e.forecast_id).estimate = Some((pos, e.clone())),
            Payload::Outcome(o) => {
                let s = self.slot(&o.forecast_id);
                match o.purpose {
                    CheckPurpose::Resolution => s.resolution = Some((pos, o.clone())),
                    CheckPurpose::Screening => s.screening = Some((pos, o.clone())),
                }
            }
            Payload::Calibrated(c) => {
                let s = self.slot(&c.forecast_id);
                match c.method {
                    CalibrationMethod::Reconciled => s.reconciled = Some((pos, c.clone())),
                    CalibrationMethod::Svr => s.svr = Some((pos, c.clone())),
                }
            }
        }
        Ok(())
    }

    fn slot(&mut self, id: &str) -> &mut ForecastState {
        self.state.get_mut(id).expect("reference checked")
    }

    /// Appends one entry and returns its position.
    pub fn append(&mut self, payload: Payload) -> Result<u64, StoreError> {
        if self.writer.is_none() {
            return Err(StoreError::ReadOnly);
        }
        payload.check()?;
        self.check_reference(&payload)?;
        let position = self.entries.len() as u64;
        let prev = self.entries.last().map_or(GENESIS_HASH, |e| e.entry_hash.as_str());
        let appended_at = (self.clock)();
        let entry_hash = entry_hash(prev, position, &payload, &appended_at);
        let entry = LedgerEntry {
            position,
            payload,
            appended_at,
            entry_hash,
        };
        let mut line = serde_json::to_string(&entry).expect("entry serializes");
        line.push('\n');
        let file = self.writer.as_mut().expect("checked above");
        file.write_all(line.as_bytes())
            .and_then(|()| file.sync_data())
            .map_err(|e| io_err(&self.path, e))?;
        self.apply(&entry)?;
        self.entries.push(entry);
        Ok(position)
    }

    pub fn lifecycle(&self, id: &str) -> Result<Lifecycle, StoreError> {
        self.state
            .get(id)
            .map(ForecastState::lifecycle)
            .ok_or_else(|| StoreError::UnknownForecastId(id.to_string()))
    }

    /// Joins estimates with conclusive resolutions checked on or before
    /// `as_of`, leaving out forecasts screened invalid.
    pub fn calibration_dataset(&self, as_of: Date) -> Dataset {
        let mut d = Dataset::default();
        for s in self.state.values() {
            let Some((_, est)) = &s.estimate else {
                continue;
            };
            if !s.is_valid() {
                d.invalid += 1;
                continue;
            }
            match &s.resolution {
                Some((_, o)) if o.checked_at <= as_of => match o.binary_outcome {
                    Some(outcome) => d.rows.push(CalibrationRow {
                        forecast_id: s.spec.id.clone(),
                        topic: s.spec.topic.clone(),
                        p_hat: s.probability().expect("estimate present"),
                        u_hat: est.u_hat,
                        outcome,
                    }),
                    None => d.inconclusive += 1,
                },
                _ => d.unresolved += 1,
            }
        }
        d
    }

    pub fn dataset_for_calibration(&self, as_of: Date) -> Vec<CalibrationRow> {
        self.calibration_dataset(as_of).rows
    }

    /// Renormalizes every exclusive set whose latest estimates sum above
    /// one and appends a reconciled value for each member. Members whose
    /// current reconciled value is already up to date are skipped, so a
    /// second run appends nothing.
    pub fn reconcile(&mut self) -> Result<Vec<CalibratedValue>, StoreError> {
        let rows: Vec<(String, f64, String)> = self
            .state
            .values()
            .filter_map(|s| {
                let (_, e) = s.estimate.as_ref()?;
                Some((s.spec.id.clone(), e.p_hat, e.exclusive_set.clone()?))
            })
            .collect();
        let sets = group_by_label(rows.iter().map(|(id, p, l)| (id.as_str(), *p, Some(l.as_str()))));
        let mut appended = Vec::new();
        for set in sets {
            let total: f64 = set.members.iter().map(|(_, p)| p).sum();
            if total <= 1.0 {
                continue;
            }
            for (id, probability) in renormalize(&set) {
                let s = &self.state[&id];
                let est_pos = s.estimate.as_ref().map(|(p, _)| *p);
                let current = matches!(
                    &s.reconciled,
                    Some((pos, c)) if Some(*pos) > est_pos && c.probability == probability
                );
                if current {
                    continue;
                }
                let value = CalibratedValue {
                    forecast_id: id,
                    method: CalibrationMethod::Reconciled,
                    probability,
                    set_label: Some(set.label.clone()),
                    model_hash: None,
                    split: None,
                };
                self.append(Payload::Calibrated(value.clone()))?;
                appended.push(value);
            }
        }
        Ok(appended)
    }
}
