use std::fmt;

use foresight::calibration::CalibrationError;
use foresight::fact_check::FactCheckError;
use foresight::forecast_gen::GenerationError;
use foresight::io::IoError;
use foresight::news::NewsError;
use foresight::pipeline::{PipelineError, StageError};
use foresight::consistency::ConsistencyError;
use foresight::scoring::ScoringError;
use foresight::store::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Usage = 1,
    Gateway = 2,
    Parse = 3,
    Storage = 4,
    Insufficient = 5,
}

/// An error paired with the process exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl Failure {
    pub fn new(exit: Exit, error: impl Into<anyhow::Error>) -> Self {
        Self {
            exit,
            error: error.into(),
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Self::new(Exit::Usage, anyhow::anyhow!("{msg}"))
    }

    pub fn context(mut self, ctx: impl fmt::Display + Send + Sync + 'static) -> Self {
        self.error = self.error.context(ctx);
        self
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// Maps a library error to its exit status.
pub trait Classify: Into<anyhow::Error> {
    fn exit(&self) -> Exit;

    fn fail(self) -> Failure {
        let exit = self.exit();
        Failure::new(exit, self)
    }
}

impl Classify for StoreError {
    fn exit(&self) -> Exit {
        match self {
            StoreError::UnknownForecastId(_) => Exit::Usage,
            _ => Exit::Storage,
        }
    }
}

impl Classify for IoError {
    fn exit(&self) -> Exit {
        match self {
            IoError::Io { .. } => Exit::Storage,
            IoError::Invalid { .. } => Exit::Parse,
        }
    }
}

impl Classify for NewsError {
    fn exit(&self) -> Exit {
        match self {
            NewsError::Io(e) => e.exit(),
            NewsError::ValidationFailed(_) => Exit::Parse,
            NewsError::ProviderUnavailable(_) => Exit::Gateway,
            _ => Exit::Usage,
        }
    }
}

fn stage_exit(e: &StageError) -> Exit {
    match e {
        StageError::Gateway(_) | StageError::News(_) => Exit::Gateway,
        StageError::Consistency(ConsistencyError::Gateway(_)) => Exit::Gateway,
        _ => Exit::Parse,
    }
}

impl Classify for PipelineError {
    fn exit(&self) -> Exit {
        stage_exit(&self.source)
    }
}

impl Classify for GenerationError {
    fn exit(&self) -> Exit {
        match self {
            GenerationError::Gateway(_) | GenerationError::News(_) => Exit::Gateway,
            GenerationError::InvalidCount => Exit::Usage,
            GenerationError::Malformed { .. } | GenerationError::EmptyInput => Exit::Parse,
        }
    }
}

impl Classify for FactCheckError {
    fn exit(&self) -> Exit {
        match self {
            FactCheckError::Sources(_) | FactCheckError::Gateway(_) => Exit::Gateway,
            FactCheckError::WindowNotOpen { .. } => Exit::Usage,
            FactCheckError::InvalidSpec(_) | FactCheckError::Malformed(_) => Exit::Parse,
        }
    }
}

impl Classify for CalibrationError {
    fn exit(&self) -> Exit {
        match self {
            CalibrationError::TooFewRecords { .. } | CalibrationError::NonConvergence { .. } => Exit::Insufficient,
            CalibrationError::InvalidHyper(_) | CalibrationError::InvalidSplit(_) => Exit::Usage,
            CalibrationError::InvalidSample { .. } => Exit::Parse,
            CalibrationError::ModelFile { .. } => Exit::Storage,
        }
    }
}

impl Classify for ScoringError {
    fn exit(&self) -> Exit {
        match self {
            ScoringError::Write { .. } => Exit::Storage,
            ScoringError::EmptySet => Exit::Insufficient,
            _ => Exit::Parse,
        }
    }
}
