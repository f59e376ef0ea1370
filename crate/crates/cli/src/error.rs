use mobipose::bopt::BoError;
use mobipose::descriptor::DescriptorError;
use mobipose::harness::HarnessError;
use mobipose::metrics::MetricsError;
use mobipose::occupancy::OccupancyError;
use mobipose::scoring::ScoringError;
use mobipose::splat::SplatError;
use serde::Serialize;
use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// A command failure: a short machine-readable `error` plus free-form detail.
#[derive(Debug, Error)]
#[error("{error}: {detail}")]
pub struct CliError {
    pub error: String,
    pub detail: String,
    pub code: i32,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    detail: &'a str,
    code: i32,
}

impl CliError {
    pub fn config(error: impl Into<String>, detail: impl Into<String>) -> Self {
        Self { error: error.into(), detail: detail.into(), code: EXIT_CONFIG }
    }

    pub fn numerical(error: impl Into<String>, detail: impl Into<String>) -> Self {
        Self { error: error.into(), detail: detail.into(), code: EXIT_NUMERICAL }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorReport { error: &self.error, detail: &self.detail, code: self.code }).expect("plain strings")
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::config("io error", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::config("invalid json", e.to_string())
    }
}

impl From<BoError> for CliError {
    fn from(e: BoError) -> Self {
        match e {
            BoError::Config(_) => Self::config("invalid optimizer config", e.to_string()),
            BoError::Objective(s) => s.into(),
            BoError::Singular(_) | BoError::NoCandidates => Self::numerical("optimizer failed", e.to_string()),
        }
    }
}

impl From<ScoringError> for CliError {
    fn from(e: ScoringError) -> Self {
        match e {
            ScoringError::Descriptor(d) => d.into(),
            _ => Self::config("scoring failed", e.to_string()),
        }
    }
}

impl From<DescriptorError> for CliError {
    fn from(e: DescriptorError) -> Self {
        match e {
            DescriptorError::NotFound(_) => Self::config("dataset not found", e.to_string()),
            DescriptorError::Calibration(_) | DescriptorError::InvalidTau(_) => Self::numerical("descriptor calibration failed", e.to_string()),
            _ => Self::config("invalid dataset", e.to_string()),
        }
    }
}

impl From<SplatError> for CliError {
    fn from(e: SplatError) -> Self {
        Self::config("invalid scene", e.to_string())
    }
}

impl From<OccupancyError> for CliError {
    fn from(e: OccupancyError) -> Self {
        Self::config("invalid grid", e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::NonDecaying(_) => Self::numerical("decay fit failed", e.to_string()),
            _ => Self::config("invalid metrics input", e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Scene(e) => e.into(),
            HarnessError::Occupancy(e) => e.into(),
            HarnessError::Descriptor(e) => e.into(),
            HarnessError::Scoring(e) => e.into(),
            HarnessError::Optimizer(e) => e.into(),
            _ => Self::config("harness failed", e.to_string()),
        }
    }
}
