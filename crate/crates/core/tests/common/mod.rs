//! Independent f64 reference implementations and finite-difference helpers
//! shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sce_core::autograd::Tensor;
use sce_core::nn::LstmCellParams;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

pub fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.iter().map(|&v| v as f32).collect()).unwrap()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `log σ(x)` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖a − b‖ / max(‖b‖, 1e-12)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

/// Central differences of `f` at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// LSTM cell weights in f64, gate order input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct Cell64 {
    pub input: usize,
    pub hidden: usize,
    pub w_x: Vec<f64>,
    pub w_h: Vec<f64>,
    pub b: Vec<f64>,
}

impl Cell64 {
    pub fn from_params(p: &LstmCellParams) -> Self {
        Cell64 {
            input: p.w_x.shape()[1],
            hidden: p.w_h.shape()[1],
            w_x: to_f64(p.w_x.data()),
            w_h: to_f64(p.w_h.data()),
            b: to_f64(p.b.data()),
        }
    }

    /// One step for a batch of rows: `x [B × D]`, state `[B × H]`.
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (d, hd) = (self.input, self.hidden);
        let batch = x.len() / d;
        let mut h_out = vec![0.0; batch * hd];
        let mut c_out = vec![0.0; batch * hd];
        for r in 0..batch {
            let xr = &x[r * d..(r + 1) * d];
            let hr = &h[r * hd..(r + 1) * hd];
            let pre = |g: usize, j: usize| {
                let row = g * hd + j;
                dot(&self.w_x[row * d..(row + 1) * d], xr) + dot(&self.w_h[row * hd..(row + 1) * hd], hr) + self.b[row]
            };
            for j in 0..hd {
                let i = sigmoid(pre(0, j));
                let f = sigmoid(pre(1, j));
                let g = pre(2, j).tanh();
                let o = sigmoid(pre(3, j));
                let cn = f * c[r * hd + j] + i * g;
                c_out[r * hd + j] = cn;
                h_out[r * hd + j] = o * cn.tanh();
            }
        }
        (h_out, c_out)
    }

    /// Hidden states of a scan over `x [T × D]` for one sequence, indexed by time.
    pub fn scan(&self, x: &[f64], steps: usize, reverse: bool) -> Vec<Vec<f64>> {
        let d = self.input;
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut out = vec![Vec::new(); steps];
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for t in order {
            (h, c) = self.step(&x[t * d..(t + 1) * d], &h, &c);
            out[t] = h.clone();
        }
        out
    }
}

/// Bidirectional layer on `x [B × T × D]`, returning `[B × T × (Hf + Hb)]`.
pub fn blstm64(fwd: &Cell64, bwd: &Cell64, x: &[f64], batch: usize, steps: usize) -> Vec<f64> {
    let d = fwd.input;
    let width = fwd.hidden + bwd.hidden;
    let mut out = vec![0.0; batch * steps * width];
    for b in 0..batch {
        let seq = &x[b * steps * d..(b + 1) * steps * d];
        let f = fwd.scan(seq, steps, false);
        let r = bwd.scan(seq, steps, true);
        for t in 0..steps {
            let o = &mut out[(b * steps + t) * width..(b * steps + t + 1) * width];
            o[..fwd.hidden].copy_from_slice(&f[t]);
            o[fwd.hidden..].copy_from_slice(&r[t]);
        }
    }
    out
}

/// Time-distributed linear map: `x [rows × D]`, `w [D × K]`, `bias [K]`.
pub fn dense64(x: &[f64], w: &[f64], bias: &[f64], d: usize) -> Vec<f64> {
    let k = bias.len();
    let rows = x.len() / d;
    let mut out = vec![0.0; rows * k];
    for r in 0..rows {
        for j in 0..k {
            out[r * k + j] = bias[j] + (0..d).map(|i| x[r * d + i] * w[i * k + j]).sum::<f64>();
        }
    }
    out
}

/// Summed contrastive loss `−1/(M·B) Σ log σ(Y · v_i·v_o)`.
/// `v_i [B × N × E]`, `v_o [B × M × E]`, `y [B × N × M]`.
pub fn sce_loss64(v_i: &[f64], v_o: &[f64], y: &[f64], batch: usize, m: usize, e: usize) -> f64 {
    let n = v_i.len() / (batch * e);
    let mut total = 0.0;
    for b in 0..batch {
        for i in 0..n {
            let vi = &v_i[(b * n + i) * e..(b * n + i + 1) * e];
            for s in 0..m {
                let vo = &v_o[(b * m + s) * e..(b * m + s + 1) * e];
                total += log_sigmoid(y[(b * n + i) * m + s] * dot(vi, vo));
            }
        }
    }
    -total / (m * batch) as f64
}

pub type Params64 = BTreeMap<String, Vec<f64>>;

/// Full pipeline in f64: stacked BLSTMs, dense layer, gathered speaker
/// vectors and the summed loss. Parameters are looked up by checkpoint name.
pub fn pipeline_loss64(
    params: &Params64,
    layers: usize,
    features: &[f64],
    labels: &[f64],
    speakers: &[usize],
    dims: (usize, usize, usize, usize),
) -> f64 {
    let (batch, steps, m, e) = dims;
    let cell = |name: &str| {
        let w_x = params[&format!("{name}.w_x")].clone();
        let w_h = params[&format!("{name}.w_h")].clone();
        let b = params[&format!("{name}.b")].clone();
        let hidden = b.len() / 4;
        Cell64 {
            input: w_x.len() / (4 * hidden),
            hidden,
            w_x,
            w_h,
            b,
        }
    };
    let mut r = features.to_vec();
    for l in 1..=layers {
        r = blstm64(&cell(&format!("r{l}.fwd")), &cell(&format!("r{l}.bwd")), &r, batch, steps);
    }
    let bias = &params["dense.bias"];
    let d = params["dense.w"].len() / bias.len();
    let v_i = dense64(&r, &params["dense.w"], bias, d);
    let table = &params["speakers"];
    let v_o: Vec<f64> = speakers.iter().flat_map(|&s| table[s * e..(s + 1) * e].to_vec()).collect();
    sce_loss64(&v_i, &v_o, labels, batch, m, e)
}

/// Random one-hot ±1 labels, `rows × m`.
pub fn one_hot_labels(rows: usize, m: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut y = vec![-1.0; rows * m];
    for r in 0..rows {
        y[r * m + rng.random_range(0..m)] = 1.0;
    }
    y
}
pub mod grad;
