use thiserror::Error;

pub type Result<T> = std::result::Result<T, RfnError>;

#[derive(Debug, Error)]
pub enum RfnError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{what} index {index} out of range (len {len})")]
    Bounds {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("unknown category label '{label}' (vocabulary: {vocabulary})")]
    Vocabulary { label: String, vocabulary: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("divergence in {what}: {detail}")]
    Divergence { what: String, detail: String },

    #[error("parse error in {source_name}: {message}")]
    Parse {
        source_name: String,
        message: String,
    },

    #[error("referential error: {0}")]
    Referential(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RfnError {
    pub fn contract(msg: impl Into<String>) -> Self {
        RfnError::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        RfnError::Config(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        RfnError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, RfnError::Divergence { .. })
    }
}
