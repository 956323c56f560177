//! Randomized invariants across the pipeline.

mod common;

use std::path::PathBuf;
use std::sync::OnceLock;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use sce_core::autograd::{Tape, Tensor};
use sce_core::config::RunConfig;
use sce_core::corpus::{compute_labels, Corpus, Gender, MixType, Split, SpeakerRegistry, SplitSpec};
use sce_core::corpus::synth::{toy_band_speakers, write_corpus, SynthConfig};
use sce_core::dsp::{deemphasis, istft, normalize_input, preemphasis, stft, DspConfig, StftConfig, Waveform};
use sce_core::eval::{best_permutation_sdr, si_sdr};
use sce_core::nn::{blstm_forward, AdamConfig, AdamState};
use sce_core::sce::{
    batch_from_tensors, batch_loss, loss_gradients, sce_loss_value, train_step, LossNorm, ModelConfig, SceModel,
};
use sce_core::separate::{kmeans, masks_from_clusters, reconstruct, KMeansConfig};

fn signal(len: usize, seed: u64) -> Waveform {
    let mut r = rng(seed);
    Waveform::new((0..len).map(|_| r.random_range(-1.0f32..1.0)).collect(), 10_000)
}

fn f32_tensor(shape: &[usize], lo: f32, hi: f32, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(lo..hi))
}

fn random_labels(rows: usize, m: usize, seed: u64) -> Tensor {
    tensor(&[rows, m], &one_hot_labels(rows, m, &mut rng(seed)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn broadcast_backward_is_reduction_sum(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let a = f32_tensor(&[rows, cols], -2.0, 2.0, seed).with_grad();
        let b = f32_tensor(&[cols], -2.0, 2.0, seed ^ 1).with_grad();
        let r = f32_tensor(&[rows, cols], -1.0, 1.0, seed ^ 2);
        for mul in [false, true] {
            let mut tape = Tape::new();
            let (av, bv) = (tape.leaf(&a), tape.leaf(&b));
            let out = if mul { tape.mul(av, bv).unwrap() } else { tape.add(av, bv).unwrap() };
            let rv = tape.constant(r.clone());
            let w = tape.mul(out, rv).unwrap();
            let l = tape.sum(w).unwrap();
            tape.backward(l).unwrap();
            let gb = tape.grad(bv).unwrap();
            for c in 0..cols {
                let expect: f64 = (0..rows)
                    .map(|i| {
                        let up = r.data()[i * cols + c] as f64;
                        if mul { up * a.data()[i * cols + c] as f64 } else { up }
                    })
                    .sum();
                prop_assert!((gb[c] as f64 - expect).abs() < 1e-5 * (1.0 + expect.abs()));
            }
        }
    }

    #[test]
    fn preemphasis_round_trip(len in 1usize..2000, a in 0.0f32..0.99, seed in any::<u64>()) {
        let w = signal(len, seed);
        let back = deemphasis(&preemphasis(&w, a), a);
        for (x, y) in w.samples.iter().zip(&back.samples) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_preserves_order(bins in 2usize..60, seed in any::<u64>()) {
        let mags = f32_tensor(&[2 * bins], 0.0, 50.0, seed).into_data();
        let f = normalize_input(&mags, 2, bins);
        let n = f.values.len();
        for i in 0..n {
            for j in 0..n {
                if mags[i] <= mags[j] {
                    prop_assert!(f.values[i] <= f.values[j]);
                }
            }
        }
    }

    #[test]
    fn split_is_disjoint_and_covers_every_speaker(counts in proptest::collection::vec(3usize..20, 1..6), seed in any::<u64>()) {
        let entries = counts
            .iter()
            .enumerate()
            .map(|(s, &n)| {
                let files = (0..n).map(|k| PathBuf::from(format!("{s}/{s}-{k}.wav"))).collect();
                (s.to_string(), Gender::Female, files)
            })
            .collect();
        let reg = SpeakerRegistry::from_entries("/", entries).unwrap();
        let split = SplitSpec::new(&reg, [0.8, 0.1, 0.1], seed).unwrap();
        for spk in reg.speakers() {
            let mut seen: Vec<&PathBuf> = Vec::new();
            for part in [Split::Train, Split::Validate, Split::Test] {
                let files = split.utterances(spk.index, part);
                prop_assert!(!files.is_empty());
                seen.extend(files);
            }
            let total = seen.len();
            seen.sort();
            seen.dedup();
            prop_assert_eq!(seen.len(), total);
            prop_assert_eq!(total, spk.utterances.len());
        }
    }

    #[test]
    fn labels_are_one_hot(bins in 1usize..200, m in 2usize..4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let sources: Vec<Vec<f32>> = (0..m)
            .map(|_| (0..bins).map(|_| if r.random_bool(0.2) { 0.0 } else { r.random_range(0.0f32..1.0) }).collect())
            .collect();
        let refs: Vec<&[f32]> = sources.iter().map(Vec::as_slice).collect();
        let y = compute_labels(&refs).unwrap();
        for (bin, row) in y.chunks(m).enumerate() {
            prop_assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            prop_assert!(row.iter().all(|&v| v == 1.0 || v == -1.0));
            let winner = row.iter().position(|&v| v == 1.0).unwrap();
            prop_assert!(sources.iter().all(|s| s[bin] <= sources[winner][bin]));
        }
    }

    #[test]
    fn loss_is_invariant_to_speaker_permutation(
        b in 1usize..3, t in 1usize..4, f in 1usize..5, e in 1usize..5, three in any::<bool>(), seed in any::<u64>()
    ) {
        let m = if three { 3 } else { 2 };
        let v_i = f32_tensor(&[b, t, f, e], -2.0, 2.0, seed);
        let v_o = f32_tensor(&[b, m, e], -2.0, 2.0, seed ^ 1);
        let y = random_labels(b * t * f, m, seed ^ 2).reshape([b, t, f, m]).unwrap();
        let perm: Vec<usize> = if three { vec![2, 0, 1] } else { vec![1, 0] };
        let pv_o = Tensor::from_fn([b, m, e], |i| {
            let (bb, rest) = (i / (m * e), i % (m * e));
            v_o.data()[bb * m * e + perm[rest / e] * e + rest % e]
        });
        let py = Tensor::from_fn([b, t, f, m], |i| y.data()[i - i % m + perm[i % m]]);
        let base = sce_loss_value(&v_i, &v_o, &y, LossNorm::Sum).unwrap();
        let permuted = sce_loss_value(&v_i, &pv_o, &py, LossNorm::Sum).unwrap();
        prop_assert!(((base - permuted) as f64).abs() < 1e-6 * (1.0 + base.abs() as f64));
    }

    #[test]
    fn per_bin_loss_is_nonnegative(e in 1usize..6, m in 2usize..4, seed in any::<u64>()) {
        let v_i = f32_tensor(&[1, 1, 1, e], -3.0, 3.0, seed);
        let v_o = f32_tensor(&[1, m, e], -3.0, 3.0, seed ^ 1);
        let y = random_labels(1, m, seed ^ 2).reshape([1, 1, 1, m]).unwrap();
        let l = sce_loss_value(&v_i, &v_o, &y, LossNorm::Mean).unwrap();
        prop_assert!(l >= 0.0);
        let zero = sce_loss_value(&Tensor::zeros([1, 1, 1, e]), &v_o, &y, LossNorm::Mean).unwrap();
        prop_assert!((zero as f64 - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn stft_is_linear(len in 256usize..1500, seed in any::<u64>()) {
        let cfg = StftConfig { window: 256, hop: 128 };
        let (a, b) = (signal(len, seed), signal(len, seed ^ 1));
        let sum = Waveform::new(a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect(), a.sample_rate);
        let (sa, sb, ss) = (stft(&a, cfg).unwrap(), stft(&b, cfg).unwrap(), stft(&sum, cfg).unwrap());
        let (ca, cb, cs) = (sa.to_complex(), sb.to_complex(), ss.to_complex());
        let scale = cs.iter().map(|c| c.norm()).fold(0.0f32, f32::max);
        for ((x, y), z) in ca.iter().zip(&cb).zip(&cs) {
            prop_assert!((x + y - z).norm() <= 1e-5 * scale);
        }
    }

    #[test]
    fn si_sdr_is_scale_invariant(len in 16usize..400, alpha in prop_oneof![-100.0f32..-0.01, 0.01f32..100.0], seed in any::<u64>()) {
        let s = signal(len, seed).samples;
        let est: Vec<f32> = signal(len, seed ^ 1).samples.iter().zip(&s).map(|(n, x)| x + 0.3 * n).collect();
        let scaled: Vec<f32> = est.iter().map(|v| alpha * v).collect();
        let a = si_sdr(&est, &s).unwrap();
        let b = si_sdr(&scaled, &s).unwrap();
        prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn best_permutation_ignores_estimate_order(k in 2usize..5, m_three in any::<bool>(), seed in any::<u64>()) {
        let m = if m_three { 3.min(k) } else { 2 };
        let len = 64;
        let refs: Vec<Vec<f32>> = (0..m).map(|i| signal(len, seed ^ i as u64).samples).collect();
        let ests: Vec<Vec<f32>> = (0..k).map(|i| signal(len, seed ^ (100 + i as u64)).samples).collect();
        let rr: Vec<&[f32]> = refs.iter().map(Vec::as_slice).collect();
        let ee: Vec<&[f32]> = ests.iter().map(Vec::as_slice).collect();
        let rev: Vec<&[f32]> = ee.iter().rev().copied().collect();
        let a = best_permutation_sdr(&ee, &rr).unwrap();
        let b = best_permutation_sdr(&rev, &rr).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!((mean(&a.sdr_db) - mean(&b.sdr_db)).abs() < 1e-9);
        let mut da = a.sdr_db.clone();
        let mut db = b.sdr_db.clone();
        da.sort_by(f64::total_cmp);
        db.sort_by(f64::total_cmp);
        prop_assert_eq!(da, db);
    }

    #[test]
    fn kmeans_inertia_never_increases(n in 4usize..80, dim in 1usize..5, k in 1usize..5, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let pts: Vec<f32> = f32_tensor(&[n, dim], -5.0, 5.0, seed).into_data();
        let a = kmeans(&pts, dim, k, &mut rng(seed), KMeansConfig::default()).unwrap();
        for w in a.history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-9, "{:?}", a.history);
        }
        let again = kmeans(&pts, dim, k, &mut rng(seed), KMeansConfig::default()).unwrap();
        prop_assert_eq!(a, again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stft_interior_round_trip(seed in any::<u64>(), hop_half in any::<bool>()) {
        let window = 512;
        let hop = if hop_half { 256 } else { 128 };
        let w = signal(10_000, seed);
        let back = istft(&stft(&w, StftConfig { window, hop }).unwrap());
        prop_assert_eq!(back.samples.len(), w.samples.len());
        let range = window..w.samples.len() - window;
        let a = to_f64(&w.samples[range.clone()]);
        let b = to_f64(&back.samples[range]);
        prop_assert!(rel_err(&b, &a) < 1e-5);
    }

    #[test]
    fn masks_partition_the_mixture(k in 1usize..4, seed in any::<u64>()) {
        let dsp = DspConfig { window: 256, hop: 128, ..DspConfig::default() };
        let x = stft(&preemphasis(&signal(3000, seed), dsp.preemphasis), dsp.stft()).unwrap();
        let n = x.frames * x.bins;
        let emb: Vec<f32> = f32_tensor(&[n, 3], -1.0, 1.0, seed ^ 1).into_data();
        let assign = kmeans(&emb, 3, k, &mut rng(seed), KMeansConfig::default()).unwrap();
        let masks = masks_from_clusters(&assign);
        for bin in 0..n {
            prop_assert_eq!(masks.iter().map(|m| m[bin]).sum::<f32>(), 1.0);
        }
        let whole = reconstruct(&x, &vec![1.0; n], dsp.preemphasis).unwrap();
        let mut sum = vec![0.0f64; whole.len()];
        for m in &masks {
            let part = reconstruct(&x, m, dsp.preemphasis).unwrap();
            for (s, v) in sum.iter_mut().zip(&part.samples) {
                *s += *v as f64;
            }
        }
        let scale = whole.samples.iter().fold(0.0f32, |a, v| a.max(v.abs())) as f64;
        for (s, v) in sum.iter().zip(&whole.samples) {
            prop_assert!((s - *v as f64).abs() <= 1e-5 * scale.max(1.0));
        }
    }
}

fn tiny_model(speakers: usize, seed: u64) -> SceModel {
    let cfg = ModelConfig {
        frames: 3,
        bins: 5,
        embed_dim: 3,
        hidden: 6,
        layers: 2,
        batch: 2,
        speakers,
        ..ModelConfig::default()
    };
    SceModel::seeded(cfg, seed).unwrap()
}

fn tiny_batch(speaker_indices: Vec<usize>, seed: u64) -> sce_core::corpus::Batch {
    let b = speaker_indices.len() / 2;
    let features = f32_tensor(&[b, 3, 5], 0.0, 1.0, seed);
    let labels = random_labels(b * 15, 2, seed ^ 1).reshape([b, 3, 5, 2]).unwrap();
    batch_from_tensors(&features, &labels, speaker_indices).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn absent_speakers_get_zero_gradient(seed in any::<u64>(), a in 0usize..6, b in 0usize..6) {
        prop_assume!(a != b);
        let model = tiny_model(6, seed);
        let batch = tiny_batch(vec![a, b, b, a], seed);
        let (_, grads) = loss_gradients(&model, &batch).unwrap();
        let idx = model.named_params().iter().position(|(n, _)| n == "speakers").unwrap();
        let g = &grads[idx];
        for s in 0..6 {
            let row = &g[s * 3..(s + 1) * 3];
            if s == a || s == b {
                prop_assert!(row.iter().any(|&v| v != 0.0));
            } else {
                prop_assert!(row.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn one_step_lowers_the_loss(seed in any::<u64>()) {
        let mut lr = 1e-4;
        let mut lowered = false;
        for _ in 0..6 {
            let mut model = tiny_model(4, seed);
            let batch = tiny_batch(vec![0, 1, 2, 3], seed);
            let before = batch_loss(&model, &batch).unwrap();
            let mut adam = AdamState::new(AdamConfig { lr, ..AdamConfig::default() }, model.params_mut().into_iter().map(|p| &*p));
            train_step(&mut model, &mut adam, &batch, 5.0).unwrap();
            if batch_loss(&model, &batch).unwrap() < before {
                lowered = true;
                break;
            }
            lr /= 2.0;
        }
        prop_assert!(lowered);
    }

    #[test]
    fn fixed_seed_gives_identical_models_and_outputs(seed in any::<u64>()) {
        let (a, b) = (tiny_model(3, seed), tiny_model(3, seed));
        prop_assert_eq!(&a, &b);
        let x = f32_tensor(&[1, 4, 5], 0.0, 1.0, seed);
        prop_assert_eq!(a.encoder.embed_tensor(&x).unwrap(), b.encoder.embed_tensor(&x).unwrap());
        let batch = tiny_batch(vec![0, 1], seed);
        prop_assert_eq!(loss_gradients(&a, &batch).unwrap(), loss_gradients(&b, &batch).unwrap());
    }
}

#[test]
fn loss_stays_finite_at_large_margins() {
    for d in [80.0f32, -80.0] {
        let v_i = Tensor::full([1, 1, 1, 1], 8.0);
        let v_o = Tensor::new([1, 2, 1], vec![d / 8.0, -d / 8.0]).unwrap();
        let y = Tensor::new([1, 1, 1, 2], vec![1.0, -1.0]).unwrap();
        let l = sce_loss_value(&v_i, &v_o, &y, LossNorm::Sum).unwrap();
        assert!(l.is_finite());
        let expect = if d > 0.0 { 0.0 } else { 80.0 };
        assert!((l - expect).abs() < 1e-3, "{l}");
    }
}

#[test]
fn default_blstm_width_is_600() {
    let cfg = ModelConfig {
        speakers: 1,
        ..ModelConfig::default()
    };
    let model = SceModel::seeded(cfg, 0).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros([1, 2, 257]));
    let mut h = x;
    for layer in &model.encoder.layers {
        h = blstm_forward(&mut tape, layer, h).unwrap();
        assert_eq!(tape.shape(h), [1, 2, 600]);
    }
}

#[test]
fn config_defaults_match_published_values() {
    let c = RunConfig::default();
    assert_eq!((c.model.frames, c.model.batch, c.model.hidden), (40, 256, 600));
    assert_eq!((c.dsp.window, c.dsp.hop, c.dsp.preemphasis), (512, 256, 0.95));
    assert_eq!(c.dsp.bins(), 257);
    let text = RunConfig::default_toml_annotated();
    assert!(text.contains("# paper-unstated"));
    assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
}

fn band_corpus() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| {
        let root = tempfile::tempdir().unwrap().keep();
        let cfg = SynthConfig {
            sample_rate: 10_000,
            utterances: 4,
            seconds: 0.6,
            level: 0.1,
        };
        let meta = write_corpus(&root, &toy_band_speakers(), &cfg, 5).unwrap();
        let dsp = DspConfig {
            window: 256,
            hop: 128,
            ..DspConfig::default()
        };
        Corpus::open(&root, &meta, dsp, [0.5, 0.25, 0.25], 0).unwrap()
    })
}

fn gender(corpus: &Corpus, s: usize) -> Gender {
    corpus.registry.get(s).unwrap().gender
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn batches_respect_gender_constraints(seed in any::<u64>(), which in 0usize..5) {
        let corpus = band_corpus();
        let mix_type = MixType::ALL[which];
        let batch = corpus.sample_batch(Split::Train, mix_type, 3, 8, &mut rng(seed)).unwrap();
        let m = mix_type.speakers();
        prop_assert_eq!(batch.speakers, m);
        for row in batch.labels.chunks(m) {
            prop_assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
        }
        for mix in batch.speaker_indices.chunks(m) {
            let mut g: Vec<Gender> = mix.iter().map(|&s| gender(corpus, s)).collect();
            g.sort_by_key(|g| *g == Gender::Male);
            let distinct = mix.iter().all(|s| mix.iter().filter(|t| *t == s).count() == 1);
            prop_assert!(distinct);
            match mix_type {
                MixType::Ff => prop_assert_eq!(g, vec![Gender::Female; 2]),
                MixType::Mm => prop_assert_eq!(g, vec![Gender::Male; 2]),
                MixType::Fm => prop_assert_eq!(g, vec![Gender::Female, Gender::Male]),
                _ => {}
            }
        }
    }
}
