use serde::Serialize;
use thiserror::Error;

use countrate::{DataError, EstimationError, MetaError, NbError, SimError};

/// Process exit codes.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("row {row}, column '{column}': {message}")]
    Schema {
        /// 1-based data row (the header is row 0).
        row: usize,
        column: String,
        message: String,
    },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Schema { .. } | CliError::Data(_) | CliError::Io { .. } => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Schema { .. } => "schema",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
            CliError::Io { .. } => "io",
        }
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Payload<'a> {
            error: &'a str,
            message: String,
            exit_code: i32,
            #[serde(skip_serializing_if = "Option::is_none")]
            row: Option<usize>,
            #[serde(skip_serializing_if = "Option::is_none")]
            column: Option<&'a str>,
        }
        let (row, column) = match self {
            CliError::Schema { row, column, .. } => (Some(*row), Some(column.as_str())),
            _ => (None, None),
        };
        serde_json::to_string(&Payload {
            error: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
            row,
            column,
        })
        .unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind()))
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetaError> for CliError {
    fn from(e: MetaError) -> Self {
        match e {
            MetaError::DegenerateVariance => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Unachievable { .. } => CliError::Numerical(e.to_string()),
            SimError::UnknownCase(_) | SimError::Config { .. } | SimError::InvalidSpec(_) => {
                CliError::Usage(e.to_string())
            }
        }
    }
}

impl From<EstimationError> for CliError {
    fn from(e: EstimationError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<NbError> for CliError {
    fn from(e: NbError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_payload_carries_kind_and_code() {
        let e = CliError::Schema {
            row: 4,
            column: "events".into(),
            message: "bad".into(),
        };
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"], "schema");
        assert_eq!(v["exit_code"], EXIT_DATA);
        assert_eq!(v["row"], 4);
        let v: serde_json::Value =
            serde_json::from_str(&CliError::Usage("x".into()).to_json()).unwrap();
        assert_eq!(v["exit_code"], EXIT_USAGE);
        assert!(v.get("row").is_none());
        let unachievable = SimError::Unachievable {
            target: 0.99,
            max_achievable: 0.9,
        };
        assert_eq!(CliError::from(unachievable).exit_code(), EXIT_NUMERICAL);
    }
}
