use std::io;

use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    /// Bad invocation or config; maps to exit code 1.
    #[error("usage: {0}")]
    Usage(String),
    #[error("variant `{variant}`: {source}")]
    Variant {
        variant: String,
        #[source]
        source: invlab_core::Error,
    },
    #[error(transparent)]
    Core(#[from] invlab_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub fn usage(msg: impl Into<String>) -> Self {
        LabError::Usage(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        LabError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Usage(_) => 1,
            _ => 2,
        }
    }
}

pub(crate) trait VariantContext<T> {
    fn in_variant(self, name: &str) -> Result<T>;
}

impl<T> VariantContext<T> for std::result::Result<T, invlab_core::Error> {
    fn in_variant(self, name: &str) -> Result<T> {
        self.map_err(|source| LabError::Variant {
            variant: name.to_string(),
            source,
        })
    }
}
