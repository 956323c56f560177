//! Recurrent and dense layers, weight initialization and the Adam optimizer.

mod dense;
mod init;
mod lstm;
mod optim;

pub use dense::{dense_forward, DenseConv};
pub use init::{glorot_limit, uniform_glorot};
pub use lstm::{blstm_forward, lstm_step, BlstmLayer, LstmCellParams};
pub use optim::{clip_grad_norm, grad_norm, AdamConfig, AdamState};
