use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SpeakerRegistry;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validate,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validate" | "val" => Ok(Split::Validate),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validate => "validate",
            Split::Test => "test",
        })
    }
}

/// Per-speaker partition of utterances into train / validate / test.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    /// `parts[speaker][split]` lists that speaker's utterances in the split.
    parts: Vec<[Vec<PathBuf>; 3]>,
}

fn slot(split: Split) -> usize {
    match split {
        Split::Train => 0,
        Split::Validate => 1,
        Split::Test => 2,
    }
}

impl SplitSpec {
    /// Shuffles each speaker's utterances with `seed` and cuts them by
    /// `fractions` (train, validate, test). Every speaker gets at least one
    /// utterance in each split, so each needs three or more.
    pub fn new(registry: &SpeakerRegistry, fractions: [f64; 3], seed: u64) -> Result<Self> {
        let total: f64 = fractions.iter().sum();
        if fractions.iter().any(|&f| f <= 0.0) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "split fractions must be positive and sum to 1, got {fractions:?}"
            )));
        }
        let mut parts = Vec::with_capacity(registry.len());
        for spk in registry.speakers() {
            let n = spk.utterances.len();
            if n < 3 {
                return Err(Error::Corpus(format!(
                    "speaker {} has {n} utterance(s); three splits need at least 3",
                    spk.id
                )));
            }
            let mut files = spk.utterances.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (spk.index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            files.shuffle(&mut rng);
            let n_val = ((n as f64 * fractions[1]).round() as usize).max(1);
            let n_test = ((n as f64 * fractions[2]).round() as usize).clamp(1, n - 2);
            let n_train = n.saturating_sub(n_val + n_test).max(1);
            let n_val = n - n_train - n_test;
            let test = files.split_off(n_train + n_val);
            let val = files.split_off(n_train);
            parts.push([files, val, test]);
        }
        Ok(SplitSpec { parts })
    }

    pub fn utterances(&self, speaker: usize, split: Split) -> &[PathBuf] {
        &self.parts[speaker][slot(split)]
    }

    pub fn speaker_count(&self) -> usize {
        self.parts.len()
    }
}
