use std::f64::consts::PI;

use rustfft::num_complex::Complex32;
use rustfft::FftPlanner;

use super::{polar, Waveform};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()) as f32)
        .collect()
}

/// One-sided complex spectrogram stored as magnitude and phase
/// (`frames × bins`, row-major by frame).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub magnitude: Vec<f32>,
    pub phase: Vec<f32>,
    pub window: usize,
    pub hop: usize,
    pub sample_rate: u32,
    /// Length of the analyzed waveform; ISTFT output is trimmed to it.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn from_complex(
        values: &[Complex32],
        frames: usize,
        config: StftConfig,
        sample_rate: u32,
        signal_len: usize,
    ) -> Self {
        let bins = config.window / 2 + 1;
        debug_assert_eq!(values.len(), frames * bins);
        Spectrogram {
            frames,
            bins,
            magnitude: values.iter().map(|c| c.norm()).collect(),
            phase: values.iter().map(|c| c.arg()).collect(),
            window: config.window,
            hop: config.hop,
            sample_rate,
            signal_len,
        }
    }

    pub fn to_complex(&self) -> Vec<Complex32> {
        self.magnitude
            .iter()
            .zip(&self.phase)
            .map(|(&m, &p)| polar(m, p))
            .collect()
    }

    pub fn config(&self) -> StftConfig {
        StftConfig {
            window: self.window,
            hop: self.hop,
        }
    }

    fn check_compatible(&self, other: &Spectrogram) -> Result<()> {
        if self.frames != other.frames
            || self.bins != other.bins
            || self.window != other.window
            || self.hop != other.hop
        {
            return Err(Error::shape(
                "spectrogram",
                &[self.frames, self.bins, self.window, self.hop],
                &[other.frames, other.bins, other.window, other.hop],
            ));
        }
        Ok(())
    }

    /// Elementwise complex sum.
    pub fn add(&self, other: &Spectrogram) -> Result<Spectrogram> {
        self.check_compatible(other)?;
        let sum: Vec<Complex32> = self
            .to_complex()
            .iter()
            .zip(other.to_complex())
            .map(|(a, b)| a + b)
            .collect();
        Ok(Spectrogram::from_complex(
            &sum,
            self.frames,
            self.config(),
            self.sample_rate,
            self.signal_len.max(other.signal_len),
        ))
    }

    /// Multiplies magnitudes by a real mask, keeping the phase.
    pub fn masked(&self, mask: &[f32]) -> Result<Spectrogram> {
        if mask.len() != self.magnitude.len() {
            return Err(Error::shape(
                "mask",
                &[self.frames, self.bins],
                &[mask.len()],
            ));
        }
        let mut out = self.clone();
        for (m, &k) in out.magnitude.iter_mut().zip(mask) {
            *m *= k;
        }
        Ok(out)
    }
}

/// Hann-windowed one-sided STFT. The final partial frame is zero-padded,
/// so `frames = ceil((len − window) / hop) + 1`.
pub fn stft(w: &Waveform, config: StftConfig) -> Result<Spectrogram> {
    let StftConfig { window, hop } = config;
    if !window.is_power_of_two() || hop == 0 || hop > window {
        return Err(Error::invalid(format!(
            "stft needs a power-of-two window and 0 < hop <= window (window {window}, hop {hop})"
        )));
    }
    let len = w.samples.len();
    if len < window {
        return Err(Error::invalid(format!(
            "waveform of {len} samples is shorter than one {window}-sample window"
        )));
    }
    let frames = (len - window).div_ceil(hop) + 1;
    let bins = window / 2 + 1;
    let win = hann_window(window);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(window);
    let mut buf = vec![Complex32::new(0.0, 0.0); window];
    let mut scratch = vec![Complex32::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let x = w.samples.get(start + i).copied().unwrap_or(0.0);
            *b = Complex32::new(x * win[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram::from_complex(
        &out,
        frames,
        config,
        w.sample_rate,
        len,
    ))
}

/// Window power below this fraction of its peak is clamped when
/// normalizing, so the thinly covered edge samples of a modified spectrogram
/// stay bounded.
const NORM_FLOOR: f64 = 1e-2;

/// Weighted overlap-add inverse with a Hann synthesis window, normalized
/// by the accumulated analysis·synthesis window power at each sample.
pub fn istft(s: &Spectrogram) -> Waveform {
    let n = s.window;
    let win = hann_window(n);
    let padded = if s.frames == 0 {
        0
    } else {
        n + (s.frames - 1) * s.hop
    };
    let mut acc = vec![0f64; padded];
    let mut norm = vec![0f64; padded];
    let ifft = FftPlanner::<f32>::new().plan_fft_inverse(n);
    let mut buf = vec![Complex32::new(0.0, 0.0); n];
    let mut scratch = vec![Complex32::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let spec = s.to_complex();
    for f in 0..s.frames {
        let row = &spec[f * s.bins..(f + 1) * s.bins];
        buf[..s.bins].copy_from_slice(row);
        // DC and Nyquist bins of a real signal are real
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for k in 1..n / 2 {
            buf[n - k] = row[k].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = f * s.hop;
        for i in 0..n {
            let w = win[i] as f64;
            acc[start + i] += buf[i].re as f64 / n as f64 * w;
            norm[start + i] += w * w;
        }
    }
    let floor = NORM_FLOOR * norm.iter().copied().fold(0.0, f64::max);
    let samples = acc
        .iter()
        .zip(&norm)
        .take(s.signal_len)
        .map(|(&a, &w)| if w > 0.0 { (a / w.max(floor)) as f32 } else { 0.0 })
        .collect();
    Waveform::new(samples, s.sample_rate)
}
