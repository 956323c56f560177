//! Speaker registry, splits, mixture synthesis and batch assembly.

mod batch;
mod manifest;
mod mix;
mod registry;
mod split;
pub mod synth;

pub use batch::{Batch, Corpus};
pub use manifest::{format_manifest, parse_manifest, ManifestEntry, ManifestSource};
pub use mix::{compute_labels, make_mix, AudioStore, MixSource, MixSpec, MixType, Mixture};
pub use registry::{parse_metadata, Gender, Speaker, SpeakerRegistry};
pub use split::{Split, SplitSpec};
