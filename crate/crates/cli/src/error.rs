use std::path::PathBuf;

use thiserror::Error;

use crate::config::Diagnostic;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n{}", render(.0))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Core(#[from] cps_core::Error),
    #[error("cannot write {what}: {message}")]
    Output { what: String, message: String },
    #[error("cannot configure the thread pool: {0}")]
    Threads(String),
}

fn render(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    pub(crate) fn output(what: impl Into<String>, err: impl std::fmt::Display) -> Self {
        CliError::Output { what: what.into(), message: err.to_string() }
    }
}
