use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::Gender;
use crate::dsp::{preemphasis, read_wav, resample, stft, DspConfig, Spectrogram, Waveform};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixType {
    Ff,
    Mm,
    Fm,
    Random,
    Random3,
}

impl MixType {
    pub const ALL: [MixType; 5] = [
        MixType::Ff,
        MixType::Mm,
        MixType::Fm,
        MixType::Random,
        MixType::Random3,
    ];

    pub fn speakers(self) -> usize {
        match self {
            MixType::Random3 => 3,
            _ => 2,
        }
    }

    /// Type implied by the genders of a concrete mix: two-speaker mixes are
    /// classified ff / mm / fm, three-speaker mixes as random3.
    pub fn classify(genders: &[Gender]) -> MixType {
        match genders {
            [Gender::Female, Gender::Female] => MixType::Ff,
            [Gender::Male, Gender::Male] => MixType::Mm,
            [_, _] => MixType::Fm,
            _ => MixType::Random3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MixType::Ff => "ff",
            MixType::Mm => "mm",
            MixType::Fm => "fm",
            MixType::Random => "random",
            MixType::Random3 => "random3",
        }
    }
}

impl FromStr for MixType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MixType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mix type {s:?}")))
    }
}

impl fmt::Display for MixType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One source of a mixture: a speaker's utterance starting at a frame offset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixSource {
    pub speaker: usize,
    pub utterance: PathBuf,
    /// Start offset in STFT frames (multiples of the hop).
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixSpec {
    pub sources: Vec<MixSource>,
    pub mix_type: MixType,
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        let m = self.sources.len();
        if !(2..=3).contains(&m) {
            return Err(Error::invalid(format!("a mix needs 2 or 3 sources, got {m}")));
        }
        for (i, a) in self.sources.iter().enumerate() {
            if self.sources[i + 1..].iter().any(|b| b.speaker == a.speaker) {
                return Err(Error::invalid(format!(
                    "speaker index {} appears twice in one mix",
                    a.speaker
                )));
            }
        }
        Ok(())
    }

    pub fn speaker_indices(&self) -> Vec<usize> {
        self.sources.iter().map(|s| s.speaker).collect()
    }
}

/// Loads utterances once, resampled to the processing rate.
#[derive(Debug)]
pub struct AudioStore {
    sample_rate: u32,
    cache: Mutex<HashMap<PathBuf, Arc<Waveform>>>,
}

impl AudioStore {
    pub fn new(sample_rate: u32) -> Self {
        AudioStore {
            sample_rate,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn load(&self, path: &Path) -> Result<Arc<Waveform>> {
        if let Some(w) = self.cache.lock().expect("audio cache poisoned").get(path) {
            return Ok(Arc::clone(w));
        }
        let w = Arc::new(resample(&read_wav(path)?, self.sample_rate)?);
        self.cache
            .lock()
            .expect("audio cache poisoned")
            .insert(path.to_path_buf(), Arc::clone(&w));
        Ok(w)
    }

    /// Number of whole STFT frames available in an utterance.
    pub fn frames(&self, path: &Path, dsp: &DspConfig) -> Result<usize> {
        let n = self.load(path)?.len();
        Ok(if n < dsp.window {
            0
        } else {
            (n - dsp.window) / dsp.hop + 1
        })
    }
}

/// A synthesized mixture with its ground truth.
#[derive(Clone, Debug)]
pub struct Mixture {
    /// Complex sum of the source spectrograms.
    pub mixture: Spectrogram,
    pub sources: Vec<Spectrogram>,
    /// `frames × bins × M`, values in {−1, +1}.
    pub labels: Vec<f32>,
    /// Source segments at the processing rate, before preemphasis.
    pub source_waveforms: Vec<Waveform>,
    pub mixture_waveform: Waveform,
}

impl Mixture {
    pub fn speakers(&self) -> usize {
        self.sources.len()
    }
}

/// `Y[t, f, c] = +1` iff source `c` has the largest magnitude at `(t, f)`,
/// ties going to the lowest index; `−1` otherwise. Output is `T × F × M`.
pub fn compute_labels(sources: &[&[f32]]) -> Result<Vec<f32>> {
    let m = sources.len();
    let n = sources.first().map_or(0, |s| s.len());
    if sources.iter().any(|s| s.len() != n) {
        return Err(Error::invalid("label sources differ in shape"));
    }
    let mut labels = vec![-1.0; n * m];
    for bin in 0..n {
        let mut best = 0;
        for c in 1..m {
            if sources[c][bin] > sources[best][bin] {
                best = c;
            }
        }
        if m > 0 {
            labels[bin * m + best] = 1.0;
        }
    }
    Ok(labels)
}

/// Builds a mixture. With `frames = Some(T)` every source is cropped to
/// exactly `T` STFT frames starting at its offset; with `None` all sources
/// are cut to the shortest available length.
pub fn make_mix(
    spec: &MixSpec,
    store: &AudioStore,
    dsp: &DspConfig,
    frames: Option<usize>,
) -> Result<Mixture> {
    spec.validate()?;
    if store.sample_rate() != dsp.sample_rate {
        return Err(Error::invalid(format!(
            "audio store runs at {} Hz but the front end expects {} Hz",
            store.sample_rate(),
            dsp.sample_rate
        )));
    }
    let audio = spec
        .sources
        .iter()
        .map(|s| store.load(&s.utterance))
        .collect::<Result<Vec<_>>>()?;
    let available = spec
        .sources
        .iter()
        .zip(&audio)
        .map(|(s, w)| w.len().saturating_sub(s.offset * dsp.hop))
        .collect::<Vec<_>>();
    let len = match frames {
        Some(t) => {
            let need = dsp.samples_for_frames(t);
            for (s, &have) in spec.sources.iter().zip(&available) {
                if have < need || t == 0 {
                    return Err(Error::Corpus(format!(
                        "{} is too short for {t} frames at offset {} ({have} samples after offset, {need} needed)",
                        s.utterance.display(),
                        s.offset
                    )));
                }
            }
            need
        }
        None => {
            let len = *available.iter().min().expect("validated non-empty");
            if len < dsp.window {
                return Err(Error::Corpus(format!(
                    "mixture would be {len} samples, shorter than one {}-sample window",
                    dsp.window
                )));
            }
            len
        }
    };

    let mut source_waveforms = Vec::with_capacity(audio.len());
    let mut sources = Vec::with_capacity(audio.len());
    for (s, w) in spec.sources.iter().zip(&audio) {
        let start = s.offset * dsp.hop;
        let seg = Waveform::new(w.samples[start..start + len].to_vec(), dsp.sample_rate);
        sources.push(stft(&preemphasis(&seg, dsp.preemphasis), dsp.stft())?);
        source_waveforms.push(seg);
    }
    let mut mixture = sources[0].clone();
    for s in &sources[1..] {
        mixture = mixture.add(s)?;
    }
    let mags: Vec<&[f32]> = sources.iter().map(|s| s.magnitude.as_slice()).collect();
    let labels = compute_labels(&mags)?;
    let mut mix = vec![0.0f32; len];
    for w in &source_waveforms {
        for (m, x) in mix.iter_mut().zip(&w.samples) {
            *m += x;
        }
    }
    Ok(Mixture {
        mixture,
        sources,
        labels,
        source_waveforms,
        mixture_waveform: Waveform::new(mix, dsp.sample_rate),
    })
}
