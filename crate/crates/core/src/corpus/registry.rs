use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "F")]
    Female,
    #[serde(rename = "M")]
    Male,
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "F" | "f" => Ok(Gender::Female),
            "M" | "m" => Ok(Gender::Male),
            other => Err(Error::Corpus(format!("unknown gender token {other:?}"))),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "F",
            Gender::Male => "M",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Speaker {
    pub id: String,
    pub index: usize,
    pub gender: Gender,
    /// Sorted utterance files.
    pub utterances: Vec<PathBuf>,
}

/// Speakers with dense indices `0..C` assigned in ascending id order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerRegistry {
    root: PathBuf,
    speakers: Vec<Speaker>,
    by_id: HashMap<String, usize>,
}

/// Numeric ids compare numerically, everything else lexicographically.
pub(crate) fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

/// Parses `speaker_id|gender[|...]` lines; `#` starts a comment line.
/// Extra `|`-separated columns (as in LibriSpeech `SPEAKERS.TXT`) are ignored.
pub fn parse_metadata(text: &str) -> Result<HashMap<String, Gender>> {
    let mut out = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        let mut fields = line.split('|');
        let id = fields.next().unwrap_or("").trim();
        let gender = fields.next().ok_or_else(|| {
            Error::Corpus(format!("metadata line {}: missing gender in {line:?}", lineno + 1))
        })?;
        let gender = gender
            .parse::<Gender>()
            .map_err(|e| Error::Corpus(format!("metadata line {}: {e}", lineno + 1)))?;
        if id.is_empty() {
            return Err(Error::Corpus(format!("metadata line {}: empty speaker id", lineno + 1)));
        }
        out.insert(id.to_string(), gender);
    }
    Ok(out)
}

impl SpeakerRegistry {
    /// Builds the registry from speaker directories under `root`
    /// (`root/<speaker_id>/*.wav`) and a metadata file.
    ///
    /// Metadata entries without a directory are ignored; a directory without
    /// a metadata entry or without any WAV file is an error.
    pub fn build(root: impl AsRef<Path>, metadata: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let metadata = metadata.as_ref();
        let text = fs::read_to_string(metadata)
            .map_err(|e| Error::io(format!("reading metadata {}", metadata.display()), e))?;
        let genders = parse_metadata(&text)?;
        let mut found: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
        let entries = fs::read_dir(root)
            .map_err(|e| Error::io(format!("listing corpus root {}", root.display()), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io("listing corpus root", e))?;
            if !entry.path().is_dir() {
                continue;
            }
            let id = entry.file_name().to_string_lossy().into_owned();
            let mut wavs = Vec::new();
            for f in fs::read_dir(entry.path())
                .map_err(|e| Error::io(format!("listing {}", entry.path().display()), e))?
            {
                let p = f.map_err(|e| Error::io("listing speaker dir", e))?.path();
                if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
                    wavs.push(p);
                }
            }
            wavs.sort();
            found.insert(id, wavs);
        }
        let mut entries: Vec<(String, Gender, Vec<PathBuf>)> = Vec::new();
        for (id, wavs) in found {
            let gender = *genders
                .get(&id)
                .ok_or_else(|| Error::Corpus(format!("speaker {id} has no metadata entry")))?;
            if wavs.is_empty() {
                return Err(Error::Corpus(format!("speaker {id} has no audio files")));
            }
            entries.push((id, gender, wavs));
        }
        Self::from_entries(root, entries)
    }

    /// Builds a registry from explicit `(id, gender, files)` entries.
    pub fn from_entries(
        root: impl AsRef<Path>,
        mut entries: Vec<(String, Gender, Vec<PathBuf>)>,
    ) -> Result<Self> {
        entries.sort_by(|a, b| compare_ids(&a.0, &b.0));
        let mut speakers = Vec::with_capacity(entries.len());
        let mut by_id = HashMap::new();
        for (index, (id, gender, mut utterances)) in entries.into_iter().enumerate() {
            if utterances.is_empty() {
                return Err(Error::Corpus(format!("speaker {id} has no audio files")));
            }
            utterances.sort();
            if by_id.insert(id.clone(), index).is_some() {
                return Err(Error::Corpus(format!("duplicate speaker id {id}")));
            }
            speakers.push(Speaker {
                id,
                index,
                gender,
                utterances,
            });
        }
        Ok(SpeakerRegistry {
            root: root.as_ref().to_path_buf(),
            speakers,
            by_id,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Total speaker count `C`.
    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn speakers(&self) -> &[Speaker] {
        &self.speakers
    }

    pub fn get(&self, index: usize) -> Option<&Speaker> {
        self.speakers.get(index)
    }

    pub fn by_id(&self, id: &str) -> Option<&Speaker> {
        self.by_id.get(id).map(|&i| &self.speakers[i])
    }

    pub fn utterance_path(&self, speaker_id: &str, utterance: &str) -> Result<PathBuf> {
        let spk = self
            .by_id(speaker_id)
            .ok_or_else(|| Error::Corpus(format!("unknown speaker {speaker_id}")))?;
        spk.utterances
            .iter()
            .find(|p| p.file_stem().is_some_and(|s| s == utterance))
            .cloned()
            .ok_or_else(|| {
                Error::Corpus(format!("speaker {speaker_id} has no utterance {utterance}"))
            })
    }
}
