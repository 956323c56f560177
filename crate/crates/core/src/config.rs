//! Run configuration shared by every command.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::DspConfig;
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::sce::{ModelConfig, TrainConfig};
use crate::separate::KMeansConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metadata: Option<PathBuf>,
    /// Train / validate / test fractions per speaker.
    pub split: [f64; 3],
    pub split_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            root: None,
            metadata: None,
            split: [0.8, 0.1, 0.1],
            split_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparateConfig {
    /// Number of output sources.
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SeparateConfig {
    fn default() -> Self {
        let km = KMeansConfig::default();
        SeparateConfig {
            k: 2,
            max_iter: km.max_iter,
            tol: km.tol,
        }
    }
}

impl SeparateConfig {
    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub dsp: DspConfig,
    pub corpus: CorpusConfig,
    pub optim: AdamConfig,
    pub train: TrainConfig,
    pub separate: SeparateConfig,
}

/// Keys whose defaults are choices of this implementation rather than
/// published values, as `(section, key)`.
const UNSTATED: &[(&str, &str)] = &[
    ("", "seed"),
    ("model", "embed_dim"),
    ("model", "loss_norm"),
    ("corpus", "split_seed"),
    ("optim", "lr"),
    ("optim", "beta1"),
    ("optim", "beta2"),
    ("optim", "eps"),
    ("train", "steps"),
    ("train", "mix_type"),
    ("train", "validate_every"),
    ("train", "validation_batches"),
    ("train", "patience"),
    ("train", "clip_norm"),
    ("train", "checkpoint_every"),
    ("separate", "k"),
    ("separate", "max_iter"),
    ("separate", "tol"),
];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Cross-section consistency; `model.speakers = 0` is allowed here and
    /// resolved from the corpus at training time.
    pub fn validate(&self) -> Result<()> {
        if self.model.bins != self.dsp.bins() {
            return Err(Error::Config(format!(
                "model.bins = {} but a {}-sample window gives {} bins",
                self.model.bins,
                self.dsp.window,
                self.dsp.bins()
            )));
        }
        if !self.dsp.window.is_power_of_two() || self.dsp.hop == 0 || self.dsp.hop > self.dsp.window {
            return Err(Error::Config(format!(
                "dsp.window must be a power of two and 0 < dsp.hop <= window (window {}, hop {})",
                self.dsp.window, self.dsp.hop
            )));
        }
        ModelConfig {
            speakers: self.model.speakers.max(1),
            ..self.model
        }
        .validate()?;
        if self.separate.k == 0 {
            return Err(Error::Config("separate.k must be positive".into()));
        }
        Ok(())
    }

    /// Default configuration as TOML, with implementation-chosen values
    /// marked `# paper-unstated`.
    pub fn default_toml_annotated() -> String {
        let plain = RunConfig::default().to_toml().expect("default config serializes");
        let mut out = String::from("# scesep run configuration\n");
        let mut section = String::new();
        for line in plain.lines() {
            let t = line.trim();
            if t.starts_with('[') {
                section = t.trim_matches(|c| c == '[' || c == ']').to_string();
            }
            let key = t.split('=').next().unwrap_or("").trim();
            out.push_str(line);
            if t.contains('=') && UNSTATED.iter().any(|&(s, k)| s == section && k == key) {
                out.push_str("  # paper-unstated");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_setup() {
        let c = RunConfig::default();
        assert_eq!(c.model.frames, 40);
        assert_eq!(c.model.batch, 256);
        assert_eq!(c.model.hidden, 600);
        assert_eq!(c.model.layers, 2);
        assert_eq!(c.dsp.sample_rate, 10_000);
        assert_eq!((c.dsp.window, c.dsp.hop), (512, 256));
        assert_eq!(c.dsp.preemphasis, 0.95);
        assert_eq!(c.corpus.split, [0.8, 0.1, 0.1]);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn toml_round_trip_is_lossless() {
        let mut c = RunConfig::default();
        c.seed = 17;
        c.corpus.root = Some("/data/corpus".into());
        c.train.steps = 123;
        c.optim.lr = 3e-4;
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn annotated_default_parses_and_flags_unstated() {
        let text = RunConfig::default_toml_annotated();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
        let flagged: Vec<&str> = text.lines().filter(|l| l.ends_with("# paper-unstated")).collect();
        assert_eq!(flagged.len(), UNSTATED.len());
        assert!(text.lines().any(|l| l.starts_with("hidden = 600") && !l.contains('#')));
    }

    #[test]
    fn rejects_inconsistent_bins_and_unknown_keys() {
        let mut c = RunConfig::default();
        c.model.bins = 129;
        assert!(c.validate().is_err());
        assert!(RunConfig::from_toml("[model]\nwidth = 3\n").is_err());
    }
}
