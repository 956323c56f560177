use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{make_mix, AudioStore, ManifestEntry, Gender, MixSource, MixSpec, MixType, Mixture, Split, SplitSpec, SpeakerRegistry};
use crate::autograd::Tensor;
use crate::dsp::{normalize_input, DspConfig};
use crate::error::{Error, Result};

/// Training minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub frames: usize,
    pub bins: usize,
    /// Sources per mix `M`.
    pub speakers: usize,
    /// `B × T × F` normalized features.
    pub features: Vec<f32>,
    /// `B × T × F × M` in {−1, +1}, source order matching `speaker_indices`.
    pub labels: Vec<f32>,
    /// `B × M` dense speaker indices.
    pub speaker_indices: Vec<usize>,
    /// Per mix, the `M` source magnitude spectrograms (`T × F` each).
    pub source_magnitudes: Vec<Vec<Vec<f32>>>,
}

impl Batch {
    /// Assembles a batch from equally shaped mixtures and their speakers.
    pub fn from_mixtures(mixes: &[Mixture], speakers: &[Vec<usize>]) -> Result<Batch> {
        let first = mixes
            .first()
            .ok_or_else(|| Error::invalid("empty batch"))?;
        let (frames, bins, m) = (first.mixture.frames, first.mixture.bins, first.speakers());
        let mut batch = Batch {
            batch: mixes.len(),
            frames,
            bins,
            speakers: m,
            features: Vec::with_capacity(mixes.len() * frames * bins),
            labels: Vec::with_capacity(mixes.len() * frames * bins * m),
            speaker_indices: Vec::with_capacity(mixes.len() * m),
            source_magnitudes: Vec::with_capacity(mixes.len()),
        };
        if speakers.len() != mixes.len() {
            return Err(Error::invalid("one speaker list per mixture required"));
        }
        for (mix, spk) in mixes.iter().zip(speakers) {
            if (mix.mixture.frames, mix.mixture.bins, mix.speakers()) != (frames, bins, m)
                || spk.len() != m
            {
                return Err(Error::shape(
                    "batch",
                    &[frames, bins, m],
                    &[mix.mixture.frames, mix.mixture.bins, spk.len()],
                ));
            }
            let feat = normalize_input(&mix.mixture.magnitude, frames, bins);
            batch.features.extend_from_slice(&feat.values);
            batch.labels.extend_from_slice(&mix.labels);
            batch.speaker_indices.extend_from_slice(spk);
            batch
                .source_magnitudes
                .push(mix.sources.iter().map(|s| s.magnitude.clone()).collect());
        }
        Ok(batch)
    }

    pub fn features_tensor(&self) -> Tensor {
        Tensor::new([self.batch, self.frames, self.bins], self.features.clone())
            .expect("batch features sized on construction")
    }

    pub fn labels_tensor(&self) -> Tensor {
        Tensor::new(
            [self.batch, self.frames, self.bins, self.speakers],
            self.labels.clone(),
        )
        .expect("batch labels sized on construction")
    }
}

/// Registry, splits and audio cache for one corpus.
#[derive(Debug)]
pub struct Corpus {
    pub registry: SpeakerRegistry,
    pub splits: SplitSpec,
    pub store: AudioStore,
    pub dsp: DspConfig,
}

impl Corpus {
    pub fn new(registry: SpeakerRegistry, splits: SplitSpec, dsp: DspConfig) -> Self {
        Corpus {
            registry,
            splits,
            store: AudioStore::new(dsp.sample_rate),
            dsp,
        }
    }

    pub fn open(
        root: impl AsRef<Path>,
        metadata: impl AsRef<Path>,
        dsp: DspConfig,
        fractions: [f64; 3],
        split_seed: u64,
    ) -> Result<Self> {
        let registry = SpeakerRegistry::build(root, metadata)?;
        let splits = SplitSpec::new(&registry, fractions, split_seed)?;
        Ok(Self::new(registry, splits, dsp))
    }

    fn speakers_of(&self, gender: Option<Gender>) -> Vec<usize> {
        self.registry
            .speakers()
            .iter()
            .filter(|s| gender.is_none_or(|g| s.gender == g))
            .map(|s| s.index)
            .collect()
    }

    fn draw_speakers(&self, mix_type: MixType, rng: &mut impl Rng) -> Result<Vec<usize>> {
        let pick = |pool: Vec<usize>, n: usize, what: &str, rng: &mut dyn rand::RngCore| -> Result<Vec<usize>> {
            if pool.len() < n {
                return Err(Error::Corpus(format!(
                    "mix type {mix_type} needs {n} {what} speaker(s), corpus has {}",
                    pool.len()
                )));
            }
            Ok(pool.choose_multiple(rng, n).copied().collect())
        };
        let mut chosen = match mix_type {
            MixType::Ff => pick(self.speakers_of(Some(Gender::Female)), 2, "female", rng)?,
            MixType::Mm => pick(self.speakers_of(Some(Gender::Male)), 2, "male", rng)?,
            MixType::Fm => {
                let mut f = pick(self.speakers_of(Some(Gender::Female)), 1, "female", rng)?;
                f.extend(pick(self.speakers_of(Some(Gender::Male)), 1, "male", rng)?);
                f
            }
            MixType::Random => pick(self.speakers_of(None), 2, "", rng)?,
            MixType::Random3 => pick(self.speakers_of(None), 3, "", rng)?,
        };
        chosen.shuffle(rng);
        Ok(chosen)
    }

    fn draw_source(
        &self,
        speaker: usize,
        split: Split,
        frames: usize,
        rng: &mut impl Rng,
    ) -> Result<MixSource> {
        let mut eligible: Vec<(PathBuf, usize)> = Vec::new();
        for p in self.splits.utterances(speaker, split) {
            let avail = self.store.frames(p, &self.dsp)?;
            if avail >= frames {
                eligible.push((p.clone(), avail));
            }
        }
        let (utterance, avail) = eligible.choose(rng).cloned().ok_or_else(|| {
            Error::Corpus(format!(
                "speaker {} has no {split} utterance with {frames} frames",
                self.registry.get(speaker).map_or("?", |s| s.id.as_str())
            ))
        })?;
        let offset = rng.random_range(0..=avail - frames);
        Ok(MixSource {
            speaker,
            utterance,
            offset,
        })
    }

    /// Random mix of `mix_type` from `split`, each source long enough for
    /// `frames` frames at a uniformly drawn offset.
    pub fn sample_mix_spec(
        &self,
        split: Split,
        mix_type: MixType,
        frames: usize,
        rng: &mut impl Rng,
    ) -> Result<MixSpec> {
        let speakers = self.draw_speakers(mix_type, rng)?;
        let sources = speakers
            .into_iter()
            .map(|s| self.draw_source(s, split, frames, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(MixSpec { sources, mix_type })
    }

    /// `count` seeded mixes named `<mix_type>-NNNN`, numbered as manifest
    /// lines from 1.
    pub fn sample_manifest(
        &self,
        split: Split,
        mix_type: MixType,
        count: usize,
        frames: usize,
        seed: u64,
    ) -> Result<Vec<ManifestEntry>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let spec = self.sample_mix_spec(split, mix_type, frames, &mut rng)?;
                let mut entry = ManifestEntry::from_spec(format!("{mix_type}-{i:04}"), &spec, &self.registry)?;
                entry.line = i + 1;
                Ok(entry)
            })
            .collect()
    }

    pub fn make_mix(&self, spec: &MixSpec, frames: Option<usize>) -> Result<Mixture> {
        make_mix(spec, &self.store, &self.dsp, frames)
    }

    /// `batch` independent mixes cropped to `frames` frames.
    pub fn sample_batch(
        &self,
        split: Split,
        mix_type: MixType,
        batch: usize,
        frames: usize,
        rng: &mut impl Rng,
    ) -> Result<Batch> {
        if batch == 0 || frames == 0 {
            return Err(Error::invalid("batch size and frame count must be positive"));
        }
        let mut mixes = Vec::with_capacity(batch);
        let mut speakers = Vec::with_capacity(batch);
        for _ in 0..batch {
            let spec = self.sample_mix_spec(split, mix_type, frames, rng)?;
            mixes.push(self.make_mix(&spec, Some(frames))?);
            speakers.push(spec.speaker_indices());
        }
        Batch::from_mixtures(&mixes, &speakers)
    }
}
