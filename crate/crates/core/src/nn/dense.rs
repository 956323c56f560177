use rand::Rng;

use super::init::uniform_glorot;
use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Time-distributed linear layer, stored as a width-1 convolution filter
/// `[1 × D_in × F·E]`, whose output is reshaped to `[.. × F × E]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseConv {
    pub w: Tensor,
    pub bias: Tensor,
    bins: usize,
    embed: usize,
}

impl DenseConv {
    pub fn zeros(input: usize, bins: usize, embed: usize) -> Self {
        DenseConv {
            w: Tensor::zeros([1, input, bins * embed]).with_grad(),
            bias: Tensor::zeros([bins * embed]).with_grad(),
            bins,
            embed,
        }
    }

    pub fn init(input: usize, bins: usize, embed: usize, rng: &mut impl Rng) -> Self {
        DenseConv {
            w: uniform_glorot([1, input, bins * embed], input, bins * embed, rng).with_grad(),
            bias: Tensor::zeros([bins * embed]).with_grad(),
            bins,
            embed,
        }
    }

    /// Rebuilds the layer from stored tensors.
    pub fn from_parts(w: Tensor, bias: Tensor, bins: usize, embed: usize) -> Result<Self> {
        let ws = w.shape();
        if ws.len() != 3 || ws[0] != 1 || ws[2] != bins * embed || bias.shape() != [bins * embed] {
            return Err(Error::shape("dense_conv parts", ws, bias.shape()));
        }
        Ok(DenseConv { w, bias, bins, embed })
    }

    pub fn input_width(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn embed_dim(&self) -> usize {
        self.embed
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![(format!("{prefix}.w"), &self.w), (format!("{prefix}.bias"), &self.bias)]
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{prefix}.w"), &mut self.w),
            (format!("{prefix}.bias"), &mut self.bias),
        ]
    }
}

/// `[.. × D_in] → [.. × F × E]`, linear, applied identically at every step.
pub fn dense_forward(tape: &mut Tape, d: &DenseConv, r: Var) -> Result<Var> {
    let shape = tape.shape(r).to_vec();
    let d_in = d.input_width();
    if shape.last() != Some(&d_in) {
        return Err(Error::shape("dense_forward", &shape, d.w.shape()));
    }
    let lead = &shape[..shape.len() - 1];
    let rows: usize = lead.iter().product();
    let flat = tape.reshape(r, [rows, d_in])?;
    let w = tape.leaf(&d.w);
    let w = tape.reshape(w, [d_in, d.bins * d.embed])?;
    let bias = tape.leaf(&d.bias);
    let y = tape.matmul(flat, w)?;
    let y = tape.add(y, bias)?;
    let mut out_shape = lead.to_vec();
    out_shape.extend([d.bins, d.embed]);
    tape.reshape(y, out_shape)
}
