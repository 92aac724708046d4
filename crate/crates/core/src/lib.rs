//! Temporal knowledge graph extrapolation by matching historical
//! structures of a query against those of every candidate entity.
//!
//! The pipeline, bottom to top:
//!
//! * [`data`] parses quadruple datasets and adds inverse facts.
//! * [`history`] extracts query, candidate and background structures.
//! * [`model`] encodes them and scores every candidate.
//! * [`train`] runs timestamp-ordered training, filtered evaluation and
//!   checkpointing.
//! * [`autodiff`] is the small tensor tape all of the above runs on.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

use std::path::PathBuf;

use thiserror::Error;

pub mod autodiff;
pub mod data;
pub mod history;
pub mod model;
pub mod run;
pub mod synth;
pub mod train;

pub use autodiff::GraphError;
pub use data::DataError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("config: {0}")]
    Config(String),
    #[error("model: {0}")]
    Model(String),
    #[error("non-finite loss at epoch {epoch}, timestamp {timestamp}")]
    NonFiniteLoss { epoch: usize, timestamp: usize },
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
