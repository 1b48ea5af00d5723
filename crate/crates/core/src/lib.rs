//! Knowledge-base autoencoder feedback for RIS phase-shift matrices.
//!
//! The base station derives the capacity-optimal phase shifts of a
//! reconfigurable intelligent surface, compresses them with a convolutional
//! encoder, replaces each feature vector by the index of its nearest entry in
//! a learned codebook and sends only those indices. The surface looks the
//! codewords up in its copy of the codebook and decodes them back into a
//! phase matrix.
//!
//! - [`tensor`]: dense tensors, the layer kinds, reverse-mode gradients, Adam
//!   and the cosine schedule.
//! - [`channel`]: synthetic cascaded channels, optimal phases, datasets.
//! - [`codebook`]: the shared knowledge base and the index bitstream.
//! - [`models`]: PSFNet / PSFNet-H encoder and decoder networks.
//! - [`pipeline`]: training, evaluation, compression and decompression.

pub mod channel;
pub mod codebook;
pub mod dataset;
pub mod error;
pub mod io;
pub mod models;
pub mod pipeline;
pub mod tensor;

pub use channel::{ChannelConfig, ChannelRealization, PhaseDomain, PhaseShiftMatrix};
pub use codebook::{Codebook, FeedbackBitstream, IndexVector};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use models::{Model, ModelConfig, Variant};
pub use tensor::{Dims, LayerKind, LayerParams, Tensor4};
