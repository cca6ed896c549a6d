//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records operations as they are evaluated; [`Graph::backward`]
//! walks the tape in reverse. Networks keep their weights in a [`ParamSet`],
//! bind them onto a fresh graph per step and update them with [`Adam`].

mod archive;
pub mod conv;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use archive::{read_archive, write_archive, ArchiveEntry, Manifest};
pub use graph::{Grads, Graph, Var};
pub use optim::Adam;
pub use params::ParamSet;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("archive error: {0}")]
    Archive(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
