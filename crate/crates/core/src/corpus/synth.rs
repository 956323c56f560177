//! Synthetic corpora for tests and toy experiments.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::Gender;
use crate::dsp::{write_wav, Waveform};
use crate::error::{Error, Result};

/// Spectral character of a synthetic speaker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Voice {
    /// Noise shaped by a Gaussian spectral envelope.
    Band { center_hz: f64, width_hz: f64 },
    /// Harmonic source with a gliding pitch around `f0_hz` and random
    /// vowel-like formants.
    Harmonic { f0_hz: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpeaker {
    pub id: String,
    pub gender: Gender,
    pub voice: Voice,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub utterances: usize,
    pub seconds: f64,
    /// RMS level of voiced segments.
    pub level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate: 16_000,
            utterances: 10,
            seconds: 2.0,
            level: 0.1,
        }
    }
}

/// On/off envelope of syllable-like bursts with 10 ms raised-cosine ramps.
fn syllable_envelope(n: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut env = vec![0.0; n];
    let ramp = (0.01 * rate) as usize;
    let mut pos = (rng.random_range(0.0..0.1) * rate) as usize;
    while pos < n {
        let on = (rng.random_range(0.12..0.35) * rate) as usize;
        let end = (pos + on).min(n);
        let level = 10f64.powf(rng.random_range(-10.0..3.0) / 20.0);
        for (i, e) in env[pos..end].iter_mut().enumerate() {
            let from_start = i;
            let to_end = end - pos - 1 - i;
            let edge = from_start.min(to_end);
            *e = level
                * if edge >= ramp {
                    1.0
                } else {
                    0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
                };
        }
        pos = end + (rng.random_range(0.04..0.15) * rate) as usize;
    }
    env
}

fn band_noise(n: usize, rate: f64, center: f64, width: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut spec: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    for (k, c) in spec.iter_mut().enumerate() {
        let bin = if k <= n / 2 { k } else { n - k };
        let f = bin as f64 * rate / n as f64;
        *c *= (-0.5 * ((f - center) / width).powi(2)).exp();
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    spec.iter().map(|c| c.re).collect()
}

const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
];

fn harmonic(n: usize, rate: f64, f0: f64, env: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let nyquist = 0.45 * rate;
    let mut out = vec![0.0; n];
    let mut phase = 0.0f64;
    let mut i = 0;
    let shift = match f0 {
        f if f > 160.0 => 1.15,
        _ => 1.0,
    };
    while i < n {
        // a voiced stretch runs while the envelope is non-zero
        if env[i] == 0.0 {
            i += 1;
            continue;
        }
        let mut end = i;
        while end < n && env[end] > 0.0 {
            end += 1;
        }
        let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
        let formants = vowel.map(|f| f * shift * rng.random_range(0.92..1.08));
        let start_f0 = f0 * rng.random_range(0.85..1.15);
        let end_f0 = f0 * rng.random_range(0.85..1.15);
        let len = (end - i) as f64;
        for (j, o) in out[i..end].iter_mut().enumerate() {
            let pitch = start_f0 + (end_f0 - start_f0) * j as f64 / len;
            phase += 2.0 * PI * pitch / rate;
            let mut s = 0.0;
            let mut k = 1;
            while k as f64 * pitch < nyquist {
                let fk = k as f64 * pitch;
                let gain: f64 = formants
                    .iter()
                    .enumerate()
                    .map(|(r, &fr)| {
                        let bw = 80.0 + 40.0 * r as f64;
                        (-0.5 * ((fk - fr) / bw).powi(2)).exp() / (1.0 + r as f64)
                    })
                    .sum::<f64>()
                    + 0.02;
                s += gain * (k as f64 * phase).sin();
                k += 1;
            }
            *o = s;
        }
        i = end;
    }
    out
}

/// One utterance of `seconds` for `voice`, voiced segments scaled to
/// `level` RMS.
pub fn synth_utterance(voice: Voice, config: &SynthConfig, rng: &mut impl Rng) -> Waveform {
    let rate = config.sample_rate as f64;
    let n = (config.seconds * rate) as usize;
    let env = syllable_envelope(n, rate, rng);
    let raw = match voice {
        Voice::Band {
            center_hz,
            width_hz,
        } => band_noise(n, rate, center_hz, width_hz, rng),
        Voice::Harmonic { f0_hz } => harmonic(n, rate, f0_hz, &env, rng),
    };
    let shaped: Vec<f64> = raw.iter().zip(&env).map(|(x, e)| x * e).collect();
    let (energy, weight) = shaped
        .iter()
        .zip(&env)
        .fold((0.0, 0.0), |(a, w), (x, e)| (a + x * x, w + e * e));
    let gain = if energy > 0.0 {
        config.level / (energy / weight.max(1.0)).sqrt()
    } else {
        0.0
    };
    Waveform::new(
        shaped.iter().map(|x| (x * gain) as f32).collect(),
        config.sample_rate,
    )
}

/// Writes `root/<id>/<id>-<k>.wav` for every speaker plus a `SPEAKERS.TXT`
/// metadata file, returning the metadata path.
pub fn write_corpus(
    root: impl AsRef<Path>,
    speakers: &[SynthSpeaker],
    config: &SynthConfig,
    seed: u64,
) -> Result<PathBuf> {
    let root = root.as_ref();
    if config.utterances == 0 || config.seconds <= 0.0 {
        return Err(Error::invalid("synthetic corpus needs utterances and a positive duration"));
    }
    let mut meta = String::from("# id|gender\n");
    for (s, spk) in speakers.iter().enumerate() {
        let dir = root.join(&spk.id);
        fs::create_dir_all(&dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 + s as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
        for k in 0..config.utterances {
            let w = synth_utterance(spk.voice, config, &mut rng);
            write_wav(dir.join(format!("{}-{k:03}.wav", spk.id)), &w)?;
        }
        meta.push_str(&format!("{}|{}\n", spk.id, spk.gender));
    }
    let path = root.join("SPEAKERS.TXT");
    fs::write(&path, meta).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}

/// Four band-noise speakers (two labelled F, two M) with well separated
/// envelope centres below 5 kHz.
pub fn toy_band_speakers() -> Vec<SynthSpeaker> {
    [
        ("1", Gender::Female, 500.0),
        ("2", Gender::Male, 1500.0),
        ("3", Gender::Female, 2600.0),
        ("4", Gender::Male, 3700.0),
    ]
    .into_iter()
    .map(|(id, gender, c)| SynthSpeaker {
        id: id.to_string(),
        gender,
        voice: Voice::Band {
            center_hz: c,
            width_hz: 300.0,
        },
    })
    .collect()
}

/// Band-noise speakers whose envelopes sit between the toy training bands.
pub fn toy_band_speakers_unseen() -> Vec<SynthSpeaker> {
    [("101", Gender::Female, 1000.0), ("102", Gender::Male, 3150.0)]
        .into_iter()
        .map(|(id, gender, c)| SynthSpeaker {
            id: id.to_string(),
            gender,
            voice: Voice::Band {
                center_hz: c,
                width_hz: 300.0,
            },
        })
        .collect()
}

/// Harmonic speakers with female pitches in 180..240 Hz and male pitches in
/// 95..140 Hz, ids numbered from 1.
pub fn speech_like_speakers(females: usize, males: usize, seed: u64) -> Vec<SynthSpeaker> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..females + males)
        .map(|i| {
            let female = i < females;
            let f0 = if female {
                rng.random_range(180.0..240.0)
            } else {
                rng.random_range(95.0..140.0)
            };
            SynthSpeaker {
                id: (i + 1).to_string(),
                gender: if female { Gender::Female } else { Gender::Male },
                voice: Voice::Harmonic { f0_hz: f0 },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SpeakerRegistry;
    use crate::dsp::read_wav;

    #[test]
    fn band_energy_sits_in_band() {
        let cfg = SynthConfig {
            seconds: 0.5,
            ..SynthConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = synth_utterance(
            Voice::Band {
                center_hz: 1000.0,
                width_hz: 200.0,
            },
            &cfg,
            &mut rng,
        );
        let n = w.len();
        let mut spec: Vec<Complex64> = w
            .samples
            .iter()
            .map(|&x| Complex64::new(x as f64, 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut spec);
        let (mut inside, mut total) = (0.0, 0.0);
        for (k, c) in spec.iter().enumerate().take(n / 2) {
            let f = k as f64 * 16_000.0 / n as f64;
            let p = c.norm_sqr();
            total += p;
            if (f - 1000.0).abs() < 600.0 {
                inside += p;
            }
        }
        assert!(inside / total > 0.99, "{}", inside / total);
    }

    #[test]
    fn corpus_layout_builds_registry() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            utterances: 3,
            seconds: 0.3,
            ..SynthConfig::default()
        };
        let meta = write_corpus(dir.path(), &speech_like_speakers(1, 1, 0), &cfg, 5).unwrap();
        let reg = SpeakerRegistry::build(dir.path(), &meta).unwrap();
        assert_eq!(reg.len(), 2);
        assert_eq!(reg.get(1).unwrap().gender, Gender::Male);
        let w = read_wav(&reg.get(0).unwrap().utterances[0]).unwrap();
        assert_eq!(w.sample_rate, 16_000);
        assert_eq!(w.len(), 4800);
        assert!(w.samples.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig {
            seconds: 0.2,
            ..SynthConfig::default()
        };
        let v = Voice::Harmonic { f0_hz: 120.0 };
        let a = synth_utterance(v, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b = synth_utterance(v, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }
}
