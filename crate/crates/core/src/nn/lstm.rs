use rand::Rng;

use super::init::uniform_glorot;
use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Weights of one LSTM cell. Gate rows are stacked in the order
/// input, forget, cell, output; the order is part of the checkpoint format.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    /// `[4H × D]`
    pub w_x: Tensor,
    /// `[4H × H]`
    pub w_h: Tensor,
    /// `[4H]`
    pub b: Tensor,
}

impl LstmCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCellParams {
            w_x: Tensor::zeros([4 * hidden, input]).with_grad(),
            w_h: Tensor::zeros([4 * hidden, hidden]).with_grad(),
            b: Tensor::zeros([4 * hidden]).with_grad(),
        }
    }

    /// Glorot-uniform weights, zero bias except the forget gate at 1.0.
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w_x = uniform_glorot([4 * hidden, input], input, 4 * hidden, rng);
        let w_h = uniform_glorot([4 * hidden, hidden], hidden, 4 * hidden, rng);
        let b = Tensor::from_fn([4 * hidden], |i| {
            if (hidden..2 * hidden).contains(&i) {
                1.0
            } else {
                0.0
            }
        });
        LstmCellParams {
            w_x: w_x.with_grad(),
            w_h: w_h.with_grad(),
            b: b.with_grad(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_x.shape()[1]
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{prefix}.w_x"), &self.w_x),
            (format!("{prefix}.w_h"), &self.w_h),
            (format!("{prefix}.b"), &self.b),
        ]
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{prefix}.w_x"), &mut self.w_x),
            (format!("{prefix}.w_h"), &mut self.w_h),
            (format!("{prefix}.b"), &mut self.b),
        ]
    }
}

/// Gate nonlinearities and state update from pre-activations `[B × 4H]`.
fn cell_update(tape: &mut Tape, gates: Var, c_prev: Var, hidden: usize) -> Result<(Var, Var)> {
    let i = tape.slice(gates, 1, 0..hidden)?;
    let f = tape.slice(gates, 1, hidden..2 * hidden)?;
    let g = tape.slice(gates, 1, 2 * hidden..3 * hidden)?;
    let o = tape.slice(gates, 1, 3 * hidden..4 * hidden)?;
    let i = tape.sigmoid(i)?;
    let f = tape.sigmoid(f)?;
    let g = tape.tanh(g)?;
    let o = tape.sigmoid(o)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let squashed = tape.tanh(c)?;
    let h = tape.mul(o, squashed)?;
    Ok((h, c))
}

/// One LSTM time step on `x_t: [B × D]` with state `[B × H]`.
pub fn lstm_step(
    tape: &mut Tape,
    p: &LstmCellParams,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let hidden = p.hidden();
    let xs = tape.shape(x_t).to_vec();
    if xs.len() != 2 || xs[1] != p.input() {
        return Err(Error::shape("lstm_step input", &xs, p.w_x.shape()));
    }
    let batch = xs[0];
    for s in [h_prev, c_prev] {
        if tape.shape(s) != [batch, hidden] {
            return Err(Error::shape("lstm_step state", tape.shape(s), &[batch, hidden]));
        }
    }
    let w_x = tape.leaf(&p.w_x);
    let w_h = tape.leaf(&p.w_h);
    let b = tape.leaf(&p.b);
    let w_xt = tape.transpose(w_x)?;
    let w_ht = tape.transpose(w_h)?;
    let gx = tape.matmul(x_t, w_xt)?;
    let gh = tape.matmul(h_prev, w_ht)?;
    let gates = tape.add(gx, gh)?;
    let gates = tape.add(gates, b)?;
    cell_update(tape, gates, c_prev, hidden)
}

/// Runs one cell over a time-major sequence `[T × B × D]`, returning the
/// per-step hidden states indexed by time (already un-reversed).
fn scan(tape: &mut Tape, p: &LstmCellParams, x_tm: Var, reverse: bool) -> Result<Vec<Var>> {
    let shape = tape.shape(x_tm).to_vec();
    let (steps, batch, input) = (shape[0], shape[1], shape[2]);
    let hidden = p.hidden();
    let flat = tape.reshape(x_tm, [steps * batch, input])?;
    let w_x = tape.leaf(&p.w_x);
    let w_h = tape.leaf(&p.w_h);
    let b = tape.leaf(&p.b);
    let w_xt = tape.transpose(w_x)?;
    let w_ht = tape.transpose(w_h)?;
    let proj = tape.matmul(flat, w_xt)?;
    let proj = tape.add(proj, b)?;

    let mut h = tape.constant(Tensor::zeros([batch, hidden]));
    let mut c = tape.constant(Tensor::zeros([batch, hidden]));
    let mut out = vec![h; steps];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    };
    for (n, t) in order.enumerate() {
        let gx = tape.slice(proj, 0, t * batch..(t + 1) * batch)?;
        // initial state is zero, so the recurrent product vanishes
        let gates = if n == 0 {
            gx
        } else {
            let gh = tape.matmul(h, w_ht)?;
            tape.add(gx, gh)?
        };
        (h, c) = cell_update(tape, gates, c, hidden)?;
        out[t] = h;
    }
    Ok(out)
}

/// Bidirectional LSTM layer; output width is twice the per-direction size.
#[derive(Clone, Debug, PartialEq)]
pub struct BlstmLayer {
    pub forward: LstmCellParams,
    pub backward: LstmCellParams,
}

impl BlstmLayer {
    pub fn init(input: usize, hidden_per_direction: usize, rng: &mut impl Rng) -> Self {
        BlstmLayer {
            forward: LstmCellParams::init(input, hidden_per_direction, rng),
            backward: LstmCellParams::init(input, hidden_per_direction, rng),
        }
    }

    pub fn output_width(&self) -> usize {
        self.forward.hidden() + self.backward.hidden()
    }

    pub fn input_width(&self) -> usize {
        self.forward.input()
    }

    /// Time-major forward pass: `[T × B × D] → [T × B × 2H]`.
    pub fn forward_time_major(&self, tape: &mut Tape, x_tm: Var) -> Result<Var> {
        let shape = tape.shape(x_tm).to_vec();
        if shape.len() != 3 || shape[2] != self.input_width() {
            return Err(Error::shape(
                "blstm input",
                &shape,
                &[0, 0, self.input_width()],
            ));
        }
        if shape[0] == 0 {
            return Err(Error::invalid("blstm needs at least one time step"));
        }
        let fwd = scan(tape, &self.forward, x_tm, false)?;
        let bwd = scan(tape, &self.backward, x_tm, true)?;
        let fwd = tape.stack(&fwd)?;
        let bwd = tape.stack(&bwd)?;
        tape.concat(&[fwd, bwd], 2)
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut v = self.forward.named_params(&format!("{prefix}.fwd"));
        v.extend(self.backward.named_params(&format!("{prefix}.bwd")));
        v
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut v = self.forward.named_params_mut(&format!("{prefix}.fwd"));
        v.extend(self.backward.named_params_mut(&format!("{prefix}.bwd")));
        v
    }
}

/// Batch-major BLSTM: `[B × T × D] → [B × T × 2H]`, zero initial state.
pub fn blstm_forward(tape: &mut Tape, layer: &BlstmLayer, x: Var) -> Result<Var> {
    if tape.shape(x).len() != 3 {
        return Err(Error::shape("blstm input", tape.shape(x), &[0, 0, layer.input_width()]));
    }
    let x_tm = tape.permute(x, &[1, 0, 2])?;
    let y_tm = layer.forward_time_major(tape, x_tm)?;
    tape.permute(y_tm, &[1, 0, 2])
}
