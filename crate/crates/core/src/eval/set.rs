use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::{best_permutation_sdr, si_sdr};
use crate::corpus::{Corpus, ManifestEntry, MixType, Mixture};
use crate::dsp::DspConfig;
use crate::error::{Error, Result};
use crate::separate::{masks_from_labels, reconstruct, separate_spectrogram, KMeansConfig};
use crate::sce::Encoder;

/// How the estimates are produced.
#[derive(Clone, Copy, Debug)]
pub enum EvalMode<'a> {
    /// Embed, cluster into `k` sources, mask.
    Model {
        encoder: &'a Encoder,
        k: usize,
        clustering: KMeansConfig,
    },
    /// Mask with the ground-truth loudest-source labels.
    IdealMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceScore {
    pub mix_id: String,
    pub mix_type: MixType,
    pub source_idx: usize,
    pub sdr_mix_db: f64,
    pub sdr_est_db: f64,
}

impl SourceScore {
    pub fn improvement_db(&self) -> f64 {
        self.sdr_est_db - self.sdr_mix_db
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    /// Mix type name or `All`.
    pub key: String,
    pub sources: usize,
    pub sdr_mix_db: f64,
    pub sdr_est_db: f64,
    pub improvement_db: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SdrReport {
    pub rows: Vec<SourceScore>,
}

pub const CSV_HEADER: &str = "mix_id,mix_type,source_idx,sdr_mix_db,sdr_est_db,sdr_improvement_db";

fn aggregate<'a>(key: String, rows: impl Iterator<Item = &'a SourceScore>) -> Aggregate {
    let (mut n, mut mix, mut est) = (0usize, 0.0, 0.0);
    for r in rows {
        n += 1;
        mix += r.sdr_mix_db;
        est += r.sdr_est_db;
    }
    let d = n.max(1) as f64;
    Aggregate {
        key,
        sources: n,
        sdr_mix_db: mix / d,
        sdr_est_db: est / d,
        improvement_db: (est - mix) / d,
    }
}

impl SdrReport {
    /// Mean per mix type present, then `All`.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut types: Vec<MixType> = self.rows.iter().map(|r| r.mix_type).collect();
        types.sort();
        types.dedup();
        let mut out: Vec<Aggregate> = types
            .into_iter()
            .map(|t| aggregate(t.to_string(), self.rows.iter().filter(|r| r.mix_type == t)))
            .collect();
        out.push(aggregate("All".into(), self.rows.iter()));
        out
    }

    /// Mean improvement over the sources of each mix, keyed by mix id.
    pub fn mix_improvements(&self) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc.entry(r.mix_id.clone()).or_default();
            e.0 += r.improvement_db();
            e.1 += 1;
        }
        acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }

    pub fn mix_count(&self) -> usize {
        self.mix_improvements().len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{:.4},{:.4}",
                r.mix_id,
                r.mix_type,
                r.source_idx,
                r.sdr_mix_db,
                r.sdr_est_db,
                r.improvement_db()
            );
        }
        for a in self.aggregates() {
            let _ = writeln!(
                s,
                "AGG,{},all,{:.4},{:.4},{:.4}",
                a.key, a.sdr_mix_db, a.sdr_est_db, a.improvement_db
            );
        }
        s
    }

    /// Human-readable aggregate table.
    pub fn summary_table(&self) -> String {
        let mut s = format!("{:<8} {:>7} {:>10} {:>10} {:>10}\n", "type", "sources", "mix dB", "est dB", "impr dB");
        for a in self.aggregates() {
            let _ = writeln!(
                s,
                "{:<8} {:>7} {:>10.2} {:>10.2} {:>10.2}",
                a.key, a.sources, a.sdr_mix_db, a.sdr_est_db, a.improvement_db
            );
        }
        s
    }
}

/// `(sdr_mix_db, sdr_est_db)` per reference source of one mixture.
pub fn evaluate_mixture(mix: &Mixture, mode: EvalMode<'_>, dsp: &DspConfig, seed: u64) -> Result<Vec<(f64, f64)>> {
    let estimates = match mode {
        EvalMode::Model {
            encoder,
            k,
            clustering,
        } => separate_spectrogram(encoder, &mix.mixture, k, clustering, dsp, seed)?.waveforms,
        EvalMode::IdealMask => masks_from_labels(&mix.labels, mix.speakers())
            .iter()
            .map(|m| reconstruct(&mix.mixture, m, dsp.preemphasis))
            .collect::<Result<Vec<_>>>()?,
    };
    let est: Vec<&[f32]> = estimates.iter().map(|w| w.samples.as_slice()).collect();
    let refs: Vec<&[f32]> = mix.source_waveforms.iter().map(|w| w.samples.as_slice()).collect();
    let matched = best_permutation_sdr(&est, &refs)?;
    refs.iter()
        .zip(matched.sdr_db)
        .map(|(r, e)| Ok((si_sdr(&mix.mixture_waveform.samples, r)?, e)))
        .collect()
}

/// Evaluates every manifest entry, in parallel. Rows keep manifest order.
pub fn evaluate_set(corpus: &Corpus, entries: &[ManifestEntry], mode: EvalMode<'_>, seed: u64) -> Result<SdrReport> {
    let per_mix: Vec<Result<Vec<SourceScore>>> = entries
        .par_iter()
        .map(|entry| {
            let context = |e: Error| {
                Error::Corpus(format!("manifest line {} ({}): {e}", entry.line, entry.mix_id))
            };
            let spec = entry.resolve(&corpus.registry).map_err(context)?;
            let mix = corpus.make_mix(&spec, None).map_err(context)?;
            let mix_seed = seed ^ (entry.line as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let scores = evaluate_mixture(&mix, mode, &corpus.dsp, mix_seed).map_err(context)?;
            Ok(scores
                .into_iter()
                .enumerate()
                .map(|(i, (m, e))| SourceScore {
                    mix_id: entry.mix_id.clone(),
                    mix_type: spec.mix_type,
                    source_idx: i,
                    sdr_mix_db: m,
                    sdr_est_db: e,
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_mix {
        rows.extend(r?);
    }
    Ok(SdrReport { rows })
}
