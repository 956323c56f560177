//! Monaural speaker separation trained with source-contrastive estimation.
//!
//! A BLSTM maps a normalized mixture spectrogram to one embedding vector per
//! time-frequency bin. During training those embeddings are pulled towards a
//! learned per-speaker vector for the bin's loudest speaker and pushed away
//! from the other speakers in the mix. At inference the speaker table is
//! discarded: the bin embeddings are clustered with k-means and each cluster
//! becomes a binary mask over the mixture STFT.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod nn;
pub mod sce;
pub mod separate;

pub use error::{Error, Result};
