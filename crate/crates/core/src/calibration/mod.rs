//! Calibration of raw estimates against backtested outcomes.
//!
//! An epsilon-SVR with an RBF kernel maps the two raw values `(p_hat, u_hat)`
//! to a calibrated probability. Features are standardized with constants
//! stored in the model, so a saved model is self-contained.

mod svr;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Stopping tolerance on the maximal KKT violation.
pub const TOLERANCE: f64 = 1e-6;
/// One pass is `2l` pair updates for `l` training points.
pub const MAX_PASSES: usize = 10_000;
pub const MIN_RECORDS: usize = 4;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("need at least {min} records, got {got}")]
    TooFewRecords { got: usize, min: usize },
    #[error("split fraction must be 0.5, got {0}")]
    InvalidSplit(f64),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("training sample {index} is invalid: {reason}")]
    InvalidSample { index: usize, reason: &'static str },
    #[error("solver stopped after {iterations} updates with KKT residual {residual:e}")]
    NonConvergence { residual: f64, iterations: usize },
    #[error("model file {path}: {reason}")]
    ModelFile { path: String, reason: String },
}

/// One calibration example. `outcome` is normally 0 or 1, but any target
/// in `[0, 1]` is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub p_hat: f64,
    pub u_hat: f64,
    pub outcome: f64,
}

impl Sample {
    pub fn new(p_hat: f64, u_hat: f64, outcome: f64) -> Self {
        Self { p_hat, u_hat, outcome }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub fraction: f64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed, fraction: 0.5 }
    }
}

/// Shuffles with a seeded ChaCha8 generator and cuts in half; with an odd
/// count the extra record goes to the training half.
pub fn split<T: Clone>(records: &[T], spec: SplitSpec) -> Result<(Vec<T>, Vec<T>), CalibrationError> {
    if spec.fraction != 0.5 {
        return Err(CalibrationError::InvalidSplit(spec.fraction));
    }
    if records.len() < MIN_RECORDS {
        return Err(CalibrationError::TooFewRecords {
            got: records.len(),
            min: MIN_RECORDS,
        });
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = records.len().div_ceil(2);
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub c: f64,
    pub epsilon: f64,
    /// RBF bandwidth. `None` derives it from the standardized training
    /// features as `1 / (2 * variance)`.
    pub gamma: Option<f64>,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.05,
            gamma: None,
        }
    }
}

impl Hyper {
    fn check(&self) -> Result<(), CalibrationError> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(CalibrationError::InvalidHyper(format!("C must be positive, got {}", self.c)));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(CalibrationError::InvalidHyper(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        if let Some(g) = self.gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(CalibrationError::InvalidHyper(format!("gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    /// Standardized `(p_hat, u_hat)` of every point with a nonzero coefficient.
    pub support_vectors: Vec<[f64; 2]>,
    pub dual_coefficients: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    pub epsilon: f64,
    pub feature_means: [f64; 2],
    pub feature_scales: [f64; 2],
    pub training_hash: String,
    pub n_train: usize,
    pub solver: SolverStats,
}

impl SvrModel {
    pub fn violations(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.support_vectors.len() != self.dual_coefficients.len() {
            v.push("support_vectors and dual_coefficients same length");
        }
        if self.dual_coefficients.iter().any(|a| a.abs() > self.c + 1e-9) {
            v.push("|dual_coefficient| <= C");
        }
        if self.feature_scales.iter().any(|s| !(*s > 0.0)) {
            v.push("feature_scales > 0");
        }
        if !(self.gamma > 0.0) {
            v.push("gamma > 0");
        }
        v
    }

    /// Kernel expansion before clamping.
    pub fn decision(&self, p_hat: f64, u_hat: f64) -> f64 {
        let x = [
            (p_hat - self.feature_means[0]) / self.feature_scales[0],
            (u_hat - self.feature_means[1]) / self.feature_scales[1],
        ];
        self.support_vectors
            .iter()
            .zip(&self.dual_coefficients)
            .map(|(sv, a)| a * svr::rbf(sv, &x, self.gamma))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, p_hat: f64, u_hat: f64) -> f64 {
        self.decision(p_hat, u_hat).clamp(0.0, 1.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<(), CalibrationError> {
        fs::write(path, self.to_json()).map_err(|e| model_file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        let text = fs::read_to_string(path).map_err(|e| model_file(path, e))?;
        let model: SvrModel = serde_json::from_str(&text).map_err(|e| model_file(path, e))?;
        if let Some(v) = model.violations().first() {
            return Err(model_file(path, format!("violates {v}")));
        }
        Ok(model)
    }
}

fn model_file(path: &Path, e: impl ToString) -> CalibrationError {
    CalibrationError::ModelFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

pub fn predict(model: &SvrModel, p_hat: f64, u_hat: f64) -> f64 {
    model.predict(p_hat, u_hat)
}

fn training_hash(train: &[Sample]) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(train).expect("samples serialize")))
}

fn mean_and_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = var.sqrt();
    (mean, if scale > 0.0 { scale } else { 1.0 })
}

pub fn fit(train: &[Sample], hyper: Hyper) -> Result<SvrModel, CalibrationError> {
    hyper.check()?;
    if train.len() < 2 {
        return Err(CalibrationError::TooFewRecords {
            got: train.len(),
            min: 2,
        });
    }
    for (index, s) in train.iter().enumerate() {
        let reason = if !(0.0..=1.0).contains(&s.p_hat) {
            "p_hat outside [0, 1]"
        } else if !(s.u_hat.is_finite() && s.u_hat >= 0.0) {
            "u_hat negative or not finite"
        } else if !(0.0..=1.0).contains(&s.outcome) {
            "outcome outside [0, 1]"
        } else {
            continue;
        };
        return Err(CalibrationError::InvalidSample { index, reason });
    }

    let (mp, sp) = mean_and_scale(train.iter().map(|s| s.p_hat));
    let (mu, su) = mean_and_scale(train.iter().map(|s| s.u_hat));
    let points: Vec<[f64; 2]> = train
        .iter()
        .map(|s| [(s.p_hat - mp) / sp, (s.u_hat - mu) / su])
        .collect();
    let gamma = hyper.gamma.unwrap_or_else(|| {
        let all = points.iter().flat_map(|p| p.iter().copied());
        let n = (points.len() * 2) as f64;
        let mean = all.clone().sum::<f64>() / n;
        let var = all.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if var > 0.0 {
            1.0 / (2.0 * var)
        } else {
            0.5
        }
    });
    let targets: Vec<f64> = train.iter().map(|s| s.outcome).collect();

    let kernel = svr::Kernel::rbf(&points, gamma);
    let max_iter = MAX_PASSES * 2 * train.len();
    let sol = svr::solve(&kernel, &targets, hyper.c, hyper.epsilon, TOLERANCE, max_iter);
    if !sol.converged {
        return Err(CalibrationError::NonConvergence {
            residual: sol.residual,
            iterations: sol.iterations,
        });
    }

    let (support_vectors, dual_coefficients) = points
        .iter()
        .zip(&sol.coef)
        .filter(|(_, a)| **a != 0.0)
        .map(|(p, a)| (*p, *a))
        .unzip();
    Ok(SvrModel {
        support_vectors,
        dual_coefficients,
        bias: sol.bias,
        gamma,
        c: hyper.c,
        epsilon: hyper.epsilon,
        feature_means: [mp, mu],
        feature_scales: [sp, su],
        training_hash: training_hash(train),
        n_train: train.len(),
        solver: SolverStats {
            iterations: sol.iterations,
            residual: sol.residual,
        },
    })
}
