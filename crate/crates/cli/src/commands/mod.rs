//! Command implementations behind the CLI front end.

pub mod ablate;
pub mod evaluate;
pub mod generate;
pub mod reconstruct;
pub mod train;

use std::fmt;
use std::path::PathBuf;

use pulsefield_core::error::{DataError, FormatError, ModelError, TrainError};
use pulsefield_core::training::TrainRunError;

use crate::config::ExperimentConfig;

/// Resolved invocation: config with overrides applied plus the output root.
pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub resample: bool,
}

/// Error classes mapped onto exit codes: config 2, data 3, numeric 4.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config-error",
            CliError::Data(_) => "data-error",
            CliError::Numeric(_) => "numeric-error",
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (CliError::Config(m) | CliError::Data(m) | CliError::Numeric(m)) = self;
        write!(f, "{}: {m}", self.class())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainRunError> for CliError {
    fn from(e: TrainRunError) -> Self {
        match e {
            TrainRunError::Setup(inner) => inner.into(),
            TrainRunError::NonFinite { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

pub fn ensure_out_dir(ctx: &Ctx) -> Result<(), CliError> {
    std::fs::create_dir_all(&ctx.out)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", ctx.out.display())))
}
