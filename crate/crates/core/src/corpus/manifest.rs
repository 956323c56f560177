use std::fmt::Write as _;

use super::{MixSource, MixSpec, MixType, SpeakerRegistry};
use crate::error::{Error, Result};

/// One manifest source: `speaker_id:utterance_stem:offset_frames`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestSource {
    pub speaker_id: String,
    pub utterance: String,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub mix_id: String,
    pub sources: Vec<ManifestSource>,
    /// 1-based line number in the manifest file.
    pub line: usize,
}

fn parse_source(field: &str, line: usize) -> Result<ManifestSource> {
    let parts: Vec<&str> = field.trim().split(':').collect();
    let [speaker_id, utterance, offset] = parts[..] else {
        return Err(Error::Corpus(format!(
            "manifest line {line}: source {field:?} is not speaker:utterance:offset"
        )));
    };
    let offset = offset.parse().map_err(|_| {
        Error::Corpus(format!("manifest line {line}: bad offset {offset:?}"))
    })?;
    if speaker_id.is_empty() || utterance.is_empty() {
        return Err(Error::Corpus(format!(
            "manifest line {line}: empty speaker or utterance in {field:?}"
        )));
    }
    Ok(ManifestSource {
        speaker_id: speaker_id.to_string(),
        utterance: utterance.to_string(),
        offset,
    })
}

/// Parses `mix_id,spk:utt:offset,spk:utt:offset[,spk:utt:offset]` lines.
/// Blank lines and `#` comments are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split(',');
        let mix_id = fields.next().unwrap_or_default().trim().to_string();
        if mix_id.is_empty() {
            return Err(Error::Corpus(format!("manifest line {line}: empty mix id")));
        }
        let sources = fields
            .map(|f| parse_source(f, line))
            .collect::<Result<Vec<_>>>()?;
        if !(2..=3).contains(&sources.len()) {
            return Err(Error::Corpus(format!(
                "manifest line {line}: expected 2 or 3 sources, found {}",
                sources.len()
            )));
        }
        out.push(ManifestEntry {
            mix_id,
            sources,
            line,
        });
    }
    Ok(out)
}

impl ManifestEntry {
    /// Builds a manifest entry from a mix spec, naming utterances by file stem.
    pub fn from_spec(mix_id: impl Into<String>, spec: &MixSpec, registry: &SpeakerRegistry) -> Result<Self> {
        let sources = spec
            .sources
            .iter()
            .map(|s| {
                let spk = registry
                    .get(s.speaker)
                    .ok_or_else(|| Error::Corpus(format!("unknown speaker index {}", s.speaker)))?;
                let utterance = s
                    .utterance
                    .file_stem()
                    .map(|x| x.to_string_lossy().into_owned())
                    .ok_or_else(|| {
                        Error::Corpus(format!("{} has no file stem", s.utterance.display()))
                    })?;
                Ok(ManifestSource {
                    speaker_id: spk.id.clone(),
                    utterance,
                    offset: s.offset,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ManifestEntry {
            mix_id: mix_id.into(),
            sources,
            line: 0,
        })
    }

    /// Resolves ids against the registry. The mix type is derived from the
    /// speakers' genders.
    pub fn resolve(&self, registry: &SpeakerRegistry) -> Result<MixSpec> {
        let mut sources = Vec::with_capacity(self.sources.len());
        let mut genders = Vec::with_capacity(self.sources.len());
        for s in &self.sources {
            let wrap = |e: Error| Error::Corpus(format!("manifest line {}: {e}", self.line));
            let spk = registry
                .by_id(&s.speaker_id)
                .ok_or_else(|| wrap(Error::Corpus(format!("unknown speaker {}", s.speaker_id))))?;
            let utterance = registry
                .utterance_path(&s.speaker_id, &s.utterance)
                .map_err(wrap)?;
            genders.push(spk.gender);
            sources.push(MixSource {
                speaker: spk.index,
                utterance,
                offset: s.offset,
            });
        }
        let spec = MixSpec {
            sources,
            mix_type: MixType::classify(&genders),
        };
        spec.validate()
            .map_err(|e| Error::Corpus(format!("manifest line {}: {e}", self.line)))?;
        Ok(spec)
    }

    pub fn to_line(&self) -> String {
        let mut s = self.mix_id.clone();
        for src in &self.sources {
            let _ = write!(s, ",{}:{}:{}", src.speaker_id, src.utterance, src.offset);
        }
        s
    }
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    entries.iter().map(|e| e.to_line() + "\n").collect()
}
