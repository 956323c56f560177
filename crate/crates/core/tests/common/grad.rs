//! Finite-difference gradient checks of the network layers against the f64
//! reference path. Each check returns the worst norm-wise relative error.

use rand::Rng;
use sce_core::autograd::{Tape, Tensor};
use sce_core::nn::{blstm_forward, dense_forward, lstm_step, BlstmLayer, DenseConv, LstmCellParams};
use sce_core::sce::{batch_from_tensors, loss_gradients, ModelConfig, SceModel};

use super::*;

pub const STEP: f64 = 1e-3;

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)).with_grad()
}

fn random_cell(input: usize, hidden: usize, rng: &mut impl Rng) -> LstmCellParams {
    LstmCellParams {
        w_x: random_tensor(&[4 * hidden, input], rng),
        w_h: random_tensor(&[4 * hidden, hidden], rng),
        b: random_tensor(&[4 * hidden], rng),
    }
}

/// Worst error over `(analytic, numeric)` pairs, plus the forward mismatch.
#[derive(Clone, Debug)]
pub struct Report {
    pub grad_err: f64,
    pub forward_err: f64,
}

fn worst(pairs: &[(Vec<f64>, Vec<f64>)], forward_err: f64) -> Report {
    Report {
        grad_err: pairs.iter().map(|(a, n)| rel_err(a, n)).fold(0.0, f64::max),
        forward_err,
    }
}

fn grad_or_zero(g: Option<&[f32]>, n: usize) -> Vec<f64> {
    g.map(to_f64).unwrap_or_else(|| vec![0.0; n])
}

pub fn lstm_step_check(seed: u64) -> Report {
    let mut rng = rng(seed);
    let (batch, d, h) = (2, 3, 2);
    let p = random_cell(d, h, &mut rng);
    let x = random_tensor(&[batch, d], &mut rng);
    let h0 = random_tensor(&[batch, h], &mut rng);
    let c0 = random_tensor(&[batch, h], &mut rng);
    let proj = uniform(2 * batch * h, -1.0, 1.0, &mut rng);

    let mut tape = Tape::new();
    let (xv, hv, cv) = (tape.leaf(&x), tape.leaf(&h0), tape.leaf(&c0));
    let (h1, c1) = lstm_step(&mut tape, &p, xv, hv, cv).unwrap();
    let both = tape.concat(&[h1, c1], 1).unwrap();
    let r = tape.constant(Tensor::new([batch, 2 * h], proj.iter().map(|&v| v as f32).collect()).unwrap());
    let weighted = tape.mul(both, r).unwrap();
    let loss = tape.sum(weighted).unwrap();
    tape.backward(loss).unwrap();

    let cell = Cell64::from_params(&p);
    let (x64, h64, c64) = (to_f64(x.data()), to_f64(h0.data()), to_f64(c0.data()));
    let objective = |cell: &Cell64, x: &[f64], hh: &[f64], cc: &[f64]| {
        let (hn, cn) = cell.step(x, hh, cc);
        let mut out = 0.0;
        for row in 0..batch {
            out += dot(&hn[row * h..(row + 1) * h], &proj[row * 2 * h..row * 2 * h + h]);
            out += dot(&cn[row * h..(row + 1) * h], &proj[row * 2 * h + h..(row + 1) * 2 * h]);
        }
        out
    };
    let forward_err = (objective(&cell, &x64, &h64, &c64) - tape.value(loss).item().unwrap() as f64).abs();
    let mut pairs = Vec::new();
    pairs.push((
        grad_or_zero(tape.grad(xv), x.len()),
        central_diff(|v| objective(&cell, v, &h64, &c64), &x64, STEP),
    ));
    pairs.push((
        grad_or_zero(tape.grad(hv), h0.len()),
        central_diff(|v| objective(&cell, &x64, v, &c64), &h64, STEP),
    ));
    pairs.push((
        grad_or_zero(tape.grad(cv), c0.len()),
        central_diff(|v| objective(&cell, &x64, &h64, v), &c64, STEP),
    ));
    for (which, t) in [(0, &p.w_x), (1, &p.w_h), (2, &p.b)] {
        let base = to_f64(t.data());
        let numeric = central_diff(
            |v| {
                let mut c = cell.clone();
                match which {
                    0 => c.w_x = v.to_vec(),
                    1 => c.w_h = v.to_vec(),
                    _ => c.b = v.to_vec(),
                }
                objective(&c, &x64, &h64, &c64)
            },
            &base,
            STEP,
        );
        pairs.push((grad_or_zero(tape.grad_of(t), t.len()), numeric));
    }
    worst(&pairs, forward_err)
}

pub fn blstm_check(seed: u64) -> Report {
    let mut rng = rng(seed);
    let (batch, steps, d, h) = (2, 3, 3, 2);
    let layer = BlstmLayer {
        forward: random_cell(d, h, &mut rng),
        backward: random_cell(d, h, &mut rng),
    };
    let x = random_tensor(&[batch, steps, d], &mut rng);
    let proj = uniform(batch * steps * 2 * h, -1.0, 1.0, &mut rng);

    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let y = blstm_forward(&mut tape, &layer, xv).unwrap();
    let r = tape.constant(tensor(&[batch, steps, 2 * h], &proj));
    let weighted = tape.mul(y, r).unwrap();
    let loss = tape.sum(weighted).unwrap();
    tape.backward(loss).unwrap();

    let cells = [Cell64::from_params(&layer.forward), Cell64::from_params(&layer.backward)];
    let x64 = to_f64(x.data());
    let objective = |cells: &[Cell64; 2], x: &[f64]| dot(&blstm64(&cells[0], &cells[1], x, batch, steps), &proj);
    let forward_err = (objective(&cells, &x64) - tape.value(loss).item().unwrap() as f64).abs();
    let mut pairs = vec![(
        grad_or_zero(tape.grad(xv), x.len()),
        central_diff(|v| objective(&cells, v), &x64, STEP),
    )];
    for (dir, p) in [(0, &layer.forward), (1, &layer.backward)] {
        for (which, t) in [(0, &p.w_x), (1, &p.w_h), (2, &p.b)] {
            let numeric = central_diff(
                |v| {
                    let mut c = cells.clone();
                    match which {
                        0 => c[dir].w_x = v.to_vec(),
                        1 => c[dir].w_h = v.to_vec(),
                        _ => c[dir].b = v.to_vec(),
                    }
                    objective(&c, &x64)
                },
                &to_f64(t.data()),
                STEP,
            );
            pairs.push((grad_or_zero(tape.grad_of(t), t.len()), numeric));
        }
    }
    worst(&pairs, forward_err)
}

pub fn dense_check(seed: u64) -> Report {
    let mut rng = rng(seed);
    let (batch, steps, d, bins, e) = (2, 3, 4, 3, 2);
    let layer = DenseConv::from_parts(
        random_tensor(&[1, d, bins * e], &mut rng),
        random_tensor(&[bins * e], &mut rng),
        bins,
        e,
    )
    .unwrap();
    let x = random_tensor(&[batch, steps, d], &mut rng);
    let proj = uniform(batch * steps * bins * e, -1.0, 1.0, &mut rng);

    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let y = dense_forward(&mut tape, &layer, xv).unwrap();
    let r = tape.constant(tensor(&[batch, steps, bins, e], &proj));
    let weighted = tape.mul(y, r).unwrap();
    let loss = tape.sum(weighted).unwrap();
    tape.backward(loss).unwrap();

    let (x64, w64, b64) = (to_f64(x.data()), to_f64(layer.w.data()), to_f64(layer.bias.data()));
    let objective = |x: &[f64], w: &[f64], b: &[f64]| dot(&dense64(x, w, b, d), &proj);
    let forward_err = (objective(&x64, &w64, &b64) - tape.value(loss).item().unwrap() as f64).abs();
    let pairs = vec![
        (
            grad_or_zero(tape.grad(xv), x.len()),
            central_diff(|v| objective(v, &w64, &b64), &x64, STEP),
        ),
        (
            grad_or_zero(tape.grad_of(&layer.w), layer.w.len()),
            central_diff(|v| objective(&x64, v, &b64), &w64, STEP),
        ),
        (
            grad_or_zero(tape.grad_of(&layer.bias), layer.bias.len()),
            central_diff(|v| objective(&x64, &w64, v), &b64, STEP),
        ),
    ];
    worst(&pairs, forward_err)
}

/// Micro configuration `B=1, T=2, F=3, E=2, H=4`, two layers, three
/// speakers of which two are in the mix.
pub fn pipeline_check(seed: u64) -> Report {
    let mut rng = rng(seed);
    let cfg = ModelConfig {
        frames: 2,
        bins: 3,
        embed_dim: 2,
        hidden: 4,
        layers: 2,
        batch: 1,
        speakers: 3,
        ..ModelConfig::default()
    };
    let mut model = SceModel::seeded(cfg, seed).unwrap();
    for (_, p) in model.named_params_mut() {
        *p = random_tensor(p.shape(), &mut rng);
    }
    let (b, t, f, m, e) = (1, 2, 3, 2, 2);
    let features = uniform(b * t * f, 0.0, 1.0, &mut rng);
    let labels = one_hot_labels(b * t * f, m, &mut rng);
    let speakers = vec![2, 0];
    let batch = batch_from_tensors(&tensor(&[b, t, f], &features), &tensor(&[b, t, f, m], &labels), speakers.clone())
        .unwrap();
    let (loss, grads) = loss_gradients(&model, &batch).unwrap();

    let params: Params64 = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, to_f64(t.data())))
        .collect();
    let objective = |p: &Params64| pipeline_loss64(p, 2, &features, &labels, &speakers, (b, t, m, e));
    let forward_err = (objective(&params) - loss as f64).abs();
    let mut pairs = Vec::new();
    for ((name, _), g) in model.named_params().into_iter().zip(grads) {
        let numeric = central_diff(
            |v| {
                let mut p = params.clone();
                p.insert(name.clone(), v.to_vec());
                objective(&p)
            },
            &params[&name],
            STEP,
        );
        pairs.push((to_f64(&g), numeric));
    }
    worst(&pairs, forward_err)
}
