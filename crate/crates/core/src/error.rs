use thiserror::Error;

use crate::config::ConfigError;
use crate::entropy::EntropyError;
use crate::graph::GraphError;
use crate::index::IndexError;
use crate::providers::ProviderError;
use crate::store::StoreError;
use crate::tree::TreeError;

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Provider,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Provider => 4,
            ErrorKind::Internal => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Provider => "provider",
            ErrorKind::Internal => "internal",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Graph(_) | Error::Store(_) | Error::Data(_) => ErrorKind::Data,
            Error::Entropy(e) => match e {
                EntropyError::InvalidParams(_) => ErrorKind::Usage,
                _ => ErrorKind::Data,
            },
            Error::Tree(_) => ErrorKind::Data,
            Error::Index(IndexError::ZeroK) => ErrorKind::Usage,
            Error::Index(_) => ErrorKind::Data,
            Error::Provider(_) => ErrorKind::Provider,
            Error::Config(_) | Error::Usage(_) => ErrorKind::Usage,
            Error::Stage { source, .. } => source.kind(),
            Error::Io { .. } => ErrorKind::Data,
        }
    }

    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
