//! Waveform front end: resampling, preemphasis, STFT/ISTFT, feature
//! normalization and 16-bit PCM WAV I/O.

mod filter;
mod normalize;
mod resample;
mod stft;
mod wav;

pub use filter::{deemphasis, preemphasis};
pub use normalize::{normalize_input, NormalizedFeature};
pub use resample::resample;
pub use stft::{hann_window, istft, stft, Spectrogram, StftConfig};
pub use wav::{read_wav, write_wav};

use rustfft::num_complex::Complex32;
use serde::{Deserialize, Serialize};

/// Mono audio at a fixed sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Front-end settings shared by training and inference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub preemphasis: f32,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            sample_rate: 10_000,
            window: 512,
            hop: 256,
            preemphasis: 0.95,
        }
    }
}

impl DspConfig {
    /// One-sided bin count `window / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig {
            window: self.window,
            hop: self.hop,
        }
    }

    /// Number of samples covering `frames` STFT frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            self.window + (frames - 1) * self.hop
        }
    }

    /// Resample to the processing rate, preemphasize, and analyze.
    pub fn analyze(&self, w: &Waveform) -> crate::Result<Spectrogram> {
        let w = resample(w, self.sample_rate)?;
        stft(&preemphasis(&w, self.preemphasis), self.stft())
    }

    /// Inverse of the analysis chain at the processing rate.
    pub fn synthesize(&self, s: &Spectrogram) -> Waveform {
        deemphasis(&istft(s), self.preemphasis)
    }
}

pub(crate) fn polar(mag: f32, phase: f32) -> Complex32 {
    Complex32::from_polar(mag, phase)
}
