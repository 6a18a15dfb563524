use std::path::Path;

use refvid_bench::BenchError;
use refvid_curation::CurationError;
use thiserror::Error;

/// Command failures, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration file, flag or schema violation.
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    /// Inputs that parse but break a contract: malformed records, shape
    /// mismatches, undefined metrics.
    #[error("{0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Contract(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Contract(_) => "contract",
        }
    }

    /// Single-line JSON form written to stderr.
    pub fn to_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "code": self.exit_code(), "message": self.to_string() }).to_string()
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<refvid_core::Error> for CliError {
    fn from(e: refvid_core::Error) -> Self {
        use refvid_core::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Contract(other.to_string()),
        }
    }
}

impl From<CurationError> for CliError {
    fn from(e: CurationError) -> Self {
        match e {
            CurationError::Config(m) => CliError::Config(m),
            CurationError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Contract(other.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(m) => CliError::Config(m),
            BenchError::Io(e) => CliError::Io(e.to_string()),
            BenchError::Csv(e) if e.is_io_error() => CliError::Io(e.to_string()),
            other => CliError::Contract(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_lines_are_single_line_json() {
        let e = CliError::Config("model.d_model: invalid type\nsecond line".into());
        let line = e.to_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"], "config");
        assert_eq!(v["code"], 2);
    }

    #[test]
    fn library_errors_map_to_exit_codes() {
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(CliError::from(refvid_core::Error::Io(io)).exit_code(), 3);
        assert_eq!(
            CliError::from(refvid_core::Error::Config("x".into())).exit_code(),
            2
        );
        assert_eq!(
            CliError::from(refvid_core::Error::Checkpoint("x".into())).exit_code(),
            4
        );
        let bad = CurationError::Validation {
            id: "v1".into(),
            detail: "x".into(),
        };
        assert_eq!(CliError::from(bad).exit_code(), 4);
        assert_eq!(
            CliError::from(BenchError::Config("x".into())).exit_code(),
            2
        );
    }
}
