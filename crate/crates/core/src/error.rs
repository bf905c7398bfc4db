use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("graph contains a directed cycle: {}", fmt_cycle(.0))]
    Cycle(Vec<usize>),

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

fn fmt_cycle(nodes: &[usize]) -> String {
    let mut parts: Vec<String> = nodes.iter().map(|n| n.to_string()).collect();
    if let Some(first) = nodes.first() {
        parts.push(first.to_string());
    }
    parts.join(" -> ")
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
