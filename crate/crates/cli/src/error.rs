// SPDX-License-Identifier: MIT OR Apache-2.0

use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    /// A flag combination or input file that parses but cannot be used.
    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] valuelens::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use valuelens::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Core(E::Divergence(_) | E::NonFinite(_)) => EXIT_DIVERGED,
            CliError::Core(_) => EXIT_INPUT,
        }
    }

    pub fn kind(&self) -> &'static str {
        use valuelens::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Input(_) => "input",
            CliError::Core(e) => match e {
                E::Shape(_) => "shape",
                E::Index(_) => "index",
                E::Contract(_) => "contract",
                E::InvalidArgument(_) => "invalid_argument",
                E::NonFinite(_) => "non_finite",
                E::Divergence(_) => "divergence",
                E::TokenizerMismatch(_) => "tokenizer_mismatch",
                E::ArchitectureMismatch(_) => "architecture_mismatch",
                E::Config(_) => "config",
                E::Checkpoint(c) => c.code(),
                E::Io { .. } => "io",
                E::Json(_) => "json",
            },
        }
    }

    /// One-line JSON for stderr.
    pub fn to_line(&self) -> String {
        json!({"error": self.kind(), "code": self.exit_code(), "message": self.to_string()}).to_string()
    }
}

pub type CliResult<T> = Result<T, CliError>;
