//! CLI error type with the stable exit-code mapping.
//!
//! Exit codes are part of the tool's public contract:
//!
//! | code | meaning                                   |
//! |------|-------------------------------------------|
//! | 0    | success                                   |
//! | 2    | configuration / argument error            |
//! | 3    | I/O failure (missing files, bad formats)  |
//! | 4    | numeric failure (non-finite loss, …)      |
//! | 5    | checkpoint error                          |
//! | 6    | shape / dimension mismatch                |
//! | 7    | gradient-check failure                    |

use dtisynth_core::field::FieldError;
use dtisynth_core::gan::GanError;
use dtisynth_core::metrics::MetricsError;
use dtisynth_core::nn::NnError;
use dtisynth_core::phantom::PhantomError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{0}")]
    Shape(String),
    #[error("{0}")]
    Gradcheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Checkpoint(_) => 5,
            CliError::Shape(_) => 6,
            CliError::Gradcheck(_) => 7,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::Io(_) | FieldError::Format(_) => CliError::Io(e.to_string()),
            _ => CliError::Shape(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            NnError::Io(_) | NnError::Format(_) => CliError::Checkpoint(e.to_string()),
            _ => CliError::Shape(e.to_string()),
        }
    }
}

impl From<GanError> for CliError {
    fn from(e: GanError) -> Self {
        match e {
            GanError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            GanError::Checkpoint(_) => CliError::Checkpoint(e.to_string()),
            GanError::Config(_) => CliError::Config(e.to_string()),
            GanError::Spd(_) => CliError::Numeric(e.to_string()),
            GanError::Field(f) => f.into(),
            GanError::Nn(n) => n.into(),
            GanError::Shape(_) | GanError::Domain { .. } => CliError::Shape(e.to_string()),
        }
    }
}

impl From<PhantomError> for CliError {
    fn from(e: PhantomError) -> Self {
        match e {
            PhantomError::Field(f) => f.into(),
            // Bad FA/MD targets and geometry are configuration problems.
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Voxel { .. } => CliError::Numeric(e.to_string()),
            MetricsError::DimMismatch { .. } | MetricsError::WrongDomain { .. } => {
                CliError::Shape(e.to_string())
            }
            _ => CliError::Io(e.to_string()),
        }
    }
}
