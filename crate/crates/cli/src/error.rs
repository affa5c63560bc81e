use std::fmt;
use std::path::Path;

use odor_core::analyze::AnalyzeError;
use odor_core::carve::CarveError;
use odor_core::dataset::{DatasetError, MetaGraph};
use odor_core::eval::EvalError;
use odor_core::fingerprint::FingerprintError;
use odor_core::gnn::GnnError;
use odor_core::smiles::SmilesError;
use odor_core::synth::SynthError;
use odor_core::tensor::CheckpointError;
use odor_core::train::TrainError;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Input,
    SearchFailure,
    Divergence,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Input => 2,
            ErrorKind::SearchFailure => 3,
            ErrorKind::Divergence => 4,
            ErrorKind::Internal => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
    pub details: Value,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Input, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Internal, message)
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::input(format!("{}: {err}", path.display())).with_details(json!({ "path": path.display().to_string() }))
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// Single-line JSON for stderr.
    pub fn to_json(&self) -> String {
        let mut v = json!({
            "error": self.kind,
            "exit_code": self.exit_code(),
            "message": self.message,
        });
        if !self.details.is_null() {
            v["details"] = self.details.clone();
        }
        v.to_string()
    }

    /// Names the labels of a failed carving search.
    pub fn from_carve(err: CarveError, mg: &MetaGraph) -> Self {
        match &err {
            CarveError::NoCoverageFound { iterations, deficits } => {
                let deficits: Vec<Value> = deficits
                    .iter()
                    .map(|(l, counts)| json!({ "label": mg.vocab.note(*l), "counts": counts }))
                    .collect();
                Self::new(ErrorKind::SearchFailure, err.to_string())
                    .with_details(json!({ "iterations": iterations, "deficits": deficits }))
            }
            _ => Self::input(err.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let details = match &e {
            DatasetError::Io { path, .. } => json!({ "path": path }),
            DatasetError::Format { line, .. } => json!({ "line": line }),
            DatasetError::NoOverlap => Value::Null,
        };
        CliError::input(e.to_string()).with_details(details)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { epoch } => {
                CliError::new(ErrorKind::Divergence, e.to_string()).with_details(json!({ "epoch": epoch }))
            }
            other => CliError::input(other.to_string()),
        }
    }
}

macro_rules! input_error {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::input(e.to_string())
            }
        })*
    };
}

input_error!(
    AnalyzeError,
    EvalError,
    FingerprintError,
    GnnError,
    SmilesError,
    SynthError,
    CheckpointError
);
