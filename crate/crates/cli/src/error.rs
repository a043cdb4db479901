use std::fmt::Display;
use std::process::ExitCode;

use serde_json::json;
use utxo_cohort::chart::ChartError;
use utxo_cohort::engine::EngineError;
use utxo_cohort::export::ExportError;
use utxo_cohort::ingest::IngestError;
use utxo_cohort::series::SeriesError;
use utxo_cohort::store::StoreError;
use utxo_cohort::synth::ConfigError;

pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_IO: u8 = 3;

/// A failure reported as one JSON object on stderr.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn input(kind: &'static str, message: impl Display) -> Self {
        CliError { code: EXIT_INPUT, kind, message: message.to_string() }
    }

    pub fn io(message: impl Display) -> Self {
        CliError { code: EXIT_IO, kind: "io", message: message.to_string() }
    }

    pub fn check_failed(kind: &'static str, message: impl Display) -> Self {
        CliError { code: EXIT_CHECK_FAILED, kind, message: message.to_string() }
    }

    pub fn report(&self) -> ExitCode {
        eprintln!("{}", json!({"error": self.kind, "message": self.message, "exit_code": self.code}));
        ExitCode::from(self.code)
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { .. } | IngestError::Spill(_) => CliError::io(e),
            _ => CliError::input("ingest", e),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { .. } => CliError::io(e),
            StoreError::Sequencing { .. } => CliError::input("sequencing", e),
            StoreError::Locked(_) => CliError::input("locked", e),
            _ => CliError::input("store", e),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Store(s) => s.into(),
            other => CliError::input("engine", other),
        }
    }
}

impl From<ExportError> for CliError {
    fn from(e: ExportError) -> Self {
        match e {
            ExportError::Io { .. } => CliError::io(e),
            other => CliError::input("tables", other),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::io(e),
            other => CliError::input("config", other),
        }
    }
}

impl From<ChartError> for CliError {
    fn from(e: ChartError) -> Self {
        CliError::input("chart", e)
    }
}

impl From<SeriesError> for CliError {
    fn from(e: SeriesError) -> Self {
        CliError::input("series", e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e)
    }
}
