use std::path::PathBuf;

use crate::datasets::DatasetError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no finite order in RDP curve")]
    NoFiniteOrder,

    #[error("non-finite reward input: val_loss={val_loss}, epsilon={epsilon}")]
    NonFiniteReward { val_loss: f64, epsilon: f64 },

    #[error("no successful trials")]
    NoOkRecords,

    #[error("baseline unavailable: no grid ledger among the inputs")]
    BaselineUnavailable,

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),

    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
