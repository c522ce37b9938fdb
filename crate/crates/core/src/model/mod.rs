//! The convolutional classifier: configuration, parameters, forward pass,
//! prediction and checkpoints.

mod checkpoint;
mod config;
mod forward;
mod network;
mod params;
mod predict;
mod suite;


pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use config::ModelConfig;
pub use forward::{build_logits, ForwardOutput, Model};
pub use network::{apply_block, embed_inputs, BatchInput, Block, Example, ShapeTrace};
pub use params::{Init, ModelParameters, EMBEDDING};
pub use predict::{predict_topk, topk_indices};
pub use suite::{gradient_suite, SuiteReport, SuiteScale};

use crate::autodiff::AutodiffError;
use crate::certificate::CertificateError;
use crate::icd10::Icd10Error;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("parameter {0} is missing")]
    MissingParameter(String),
    #[error("parameter {name} has shape {found:?}, expected {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    NotACheckpoint,
    #[error("checkpoint format version {found} is not supported (expected {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("checkpoint truncated: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checkpoint arrays do not match the configuration: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error(transparent)]
    Icd10(#[from] Icd10Error),
}
