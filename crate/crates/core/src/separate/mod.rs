//! Inference: embed a mixture, cluster the bin embeddings and turn each
//! cluster into a binary mask over the mixture STFT.

mod kmeans;

pub use kmeans::{kmeans, ClusterAssignment, KMeansConfig};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tensor;
use crate::dsp::{deemphasis, istft, normalize_input, read_wav, DspConfig, Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::sce::Encoder;

/// `(Ŷ + 1) / 2` for each cluster: `K` masks of `N` bins.
pub fn masks_from_clusters(assign: &ClusterAssignment) -> Vec<Vec<f32>> {
    let y = assign.signed_labels();
    (0..assign.k)
        .map(|k| {
            y.chunks(assign.k)
                .map(|row| (row[k] + 1.0) / 2.0)
                .collect()
        })
        .collect()
}

/// `M` masks from a `N × M` ±1 label array.
pub fn masks_from_labels(labels: &[f32], m: usize) -> Vec<Vec<f32>> {
    (0..m)
        .map(|c| labels.chunks(m).map(|row| (row[c] + 1.0) / 2.0).collect())
        .collect()
}

/// Masks the mixture magnitude, keeps its phase, inverts and undoes the
/// preemphasis.
pub fn reconstruct(x: &Spectrogram, mask: &[f32], preemphasis: f32) -> Result<Waveform> {
    let masked = x.masked(mask)?;
    Ok(deemphasis(&istft(&masked), preemphasis))
}

#[derive(Clone, Debug)]
pub struct SeparationResult {
    pub waveforms: Vec<Waveform>,
    pub spectrograms: Vec<Spectrogram>,
    pub assignment: ClusterAssignment,
}

/// Separates an already analyzed (preemphasized) mixture into `k` sources.
/// Only the input-embedding network is consulted.
pub fn separate_spectrogram(
    encoder: &Encoder,
    x: &Spectrogram,
    k: usize,
    clustering: KMeansConfig,
    dsp: &DspConfig,
    seed: u64,
) -> Result<SeparationResult> {
    if x.bins != encoder.bins() {
        return Err(Error::invalid(format!(
            "mixture has {} frequency bins but the model expects {}",
            x.bins,
            encoder.bins()
        )));
    }
    let feat = normalize_input(&x.magnitude, x.frames, x.bins);
    let v = encoder.embed_tensor(&Tensor::new([1, x.frames, x.bins], feat.values)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment = kmeans(v.data(), encoder.embed_dim(), k, &mut rng, clustering)?;
    let mut waveforms = Vec::with_capacity(k);
    let mut spectrograms = Vec::with_capacity(k);
    for mask in masks_from_clusters(&assignment) {
        let s = x.masked(&mask)?;
        waveforms.push(deemphasis(&istft(&s), dsp.preemphasis));
        spectrograms.push(s);
    }
    Ok(SeparationResult {
        waveforms,
        spectrograms,
        assignment,
    })
}

/// Resamples, analyzes and separates a waveform.
pub fn separate_waveform(
    encoder: &Encoder,
    w: &Waveform,
    k: usize,
    clustering: KMeansConfig,
    dsp: &DspConfig,
    seed: u64,
) -> Result<SeparationResult> {
    let x = dsp.analyze(w)?;
    separate_spectrogram(encoder, &x, k, clustering, dsp, seed)
}

pub fn separate_file(
    encoder: &Encoder,
    wav: impl AsRef<Path>,
    k: usize,
    clustering: KMeansConfig,
    dsp: &DspConfig,
    seed: u64,
) -> Result<SeparationResult> {
    separate_waveform(encoder, &read_wav(wav)?, k, clustering, dsp, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn masks_partition_bins() {
        let assign = ClusterAssignment {
            k: 3,
            dim: 1,
            labels: vec![0, 2, 1, 2],
            centroids: vec![0.0; 3],
            inertia: 0.0,
            history: vec![0.0],
            iterations: 0,
        };
        let masks = masks_from_clusters(&assign);
        assert_eq!(masks[0], vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(masks[2], vec![0.0, 1.0, 0.0, 1.0]);
        for i in 0..4 {
            assert_eq!(masks.iter().map(|m| m[i]).sum::<f32>(), 1.0);
        }
    }

    #[test]
    fn identity_and_zero_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Waveform::new((0..4000).map(|_| rng.random_range(-0.5..0.5)).collect(), 10_000);
        let dsp = DspConfig::default();
        let x = dsp.analyze(&w).unwrap();
        let ones = reconstruct(&x, &vec![1.0; x.magnitude.len()], dsp.preemphasis).unwrap();
        let (mut err, mut energy) = (0f64, 0f64);
        for i in 512..3500 {
            err += (ones.samples[i] as f64 - w.samples[i] as f64).powi(2);
            energy += (w.samples[i] as f64).powi(2);
        }
        assert!((err / energy).sqrt() < 1e-5, "{}", (err / energy).sqrt());
        let zeros = reconstruct(&x, &vec![0.0; x.magnitude.len()], dsp.preemphasis).unwrap();
        assert!(zeros.samples.iter().all(|&s| s == 0.0));
        assert!(reconstruct(&x, &[1.0], dsp.preemphasis).is_err());
    }
}
