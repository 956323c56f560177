use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use sce_core::checkpoint::{registry_snapshot, Checkpoint};
use sce_core::config::RunConfig;
use sce_core::corpus::synth::{
    speech_like_speakers, toy_band_speakers, toy_band_speakers_unseen, write_corpus, SynthConfig,
};
use sce_core::corpus::{format_manifest, parse_manifest, Corpus, ManifestEntry, MixType, Split};
use sce_core::dsp::write_wav;
use sce_core::eval::{bench_loss, evaluate_set, BenchConfig, EvalMode};
use sce_core::nn::AdamState;
use sce_core::sce::{train as run_training, SceModel};
use sce_core::separate::separate_file;
use sce_core::Error;

use crate::CorpusArgs;

/// Options shared by every subcommand.
pub struct Base {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Base {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.apply_seed(&mut cfg);
        Ok(cfg)
    }

    /// Config for a command reading a checkpoint: the `--config` file if
    /// given, else the checkpoint's own.
    fn load_or(&self, ck: &Checkpoint) -> anyhow::Result<RunConfig> {
        if self.config.is_some() {
            return self.load();
        }
        let mut cfg = ck.config.clone();
        self.apply_seed(&mut cfg);
        Ok(cfg)
    }

    fn apply_seed(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
    }
}

fn open_corpus(cfg: &mut RunConfig, args: &CorpusArgs) -> anyhow::Result<Corpus> {
    if let Some(root) = &args.corpus {
        cfg.corpus.root = Some(root.clone());
    }
    if let Some(meta) = &args.metadata {
        cfg.corpus.metadata = Some(meta.clone());
    }
    let root = cfg
        .corpus
        .root
        .clone()
        .context("no corpus given: pass --corpus or set corpus.root")?;
    let metadata = cfg
        .corpus
        .metadata
        .clone()
        .unwrap_or_else(|| root.join("SPEAKERS.TXT"));
    let corpus = Corpus::open(&root, &metadata, cfg.dsp, cfg.corpus.split, cfg.corpus.split_seed)?;
    Ok(corpus)
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn config(base: &Base) -> anyhow::Result<()> {
    if base.config.is_some() || base.seed.is_some() {
        print!("{}", base.load()?.to_toml()?);
    } else {
        print!("{}", RunConfig::default_toml_annotated());
    }
    Ok(())
}

pub fn toy_corpus(base: &Base, out: &Path, kind: &str, count: usize) -> anyhow::Result<()> {
    let seed = base.seed.unwrap_or(0);
    let speakers = match kind {
        "band" => toy_band_speakers(),
        "band-unseen" => toy_band_speakers_unseen(),
        "speech" => speech_like_speakers(4, 4, seed),
        other => bail!("unknown corpus kind {other:?} (expected band, band-unseen or speech)"),
    };
    let cfg = SynthConfig {
        utterances: count,
        ..SynthConfig::default()
    };
    let meta = write_corpus(out, &speakers, &cfg, seed)?;
    println!("wrote {} speakers to {} (metadata {})", speakers.len(), out.display(), meta.display());
    Ok(())
}

pub fn mix(
    base: &Base,
    corpus_args: &CorpusArgs,
    mix_type: MixType,
    count: usize,
    split: Split,
    manifest: Option<&Path>,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let mut cfg = base.load()?;
    let corpus = open_corpus(&mut cfg, corpus_args)?;
    let entries = corpus.sample_manifest(split, mix_type, count, cfg.model.frames, cfg.seed)?;
    let text = format_manifest(&entries);
    match manifest {
        Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        for e in &entries {
            let m = corpus.make_mix(&e.resolve(&corpus.registry)?, None)?;
            write_wav(dir.join(format!("{}.wav", e.mix_id)), &m.mixture_waveform)?;
            for (k, w) in m.source_waveforms.iter().enumerate() {
                write_wav(dir.join(format!("{}.ref{k}.wav", e.mix_id)), w)?;
            }
        }
        eprintln!("wrote {} mixtures to {}", entries.len(), dir.display());
    }
    Ok(())
}

fn snapshot(step: u64, cfg: &RunConfig, corpus: &Corpus, model: &SceModel, adam: &AdamState) -> Checkpoint {
    Checkpoint {
        step,
        config: cfg.clone(),
        speakers: registry_snapshot(&corpus.registry),
        model: model.clone(),
        adam: adam.clone(),
    }
}

pub fn train(
    base: &Base,
    corpus_args: &CorpusArgs,
    out: &Path,
    resume: Option<&Path>,
    steps: Option<u64>,
    mix_type: Option<MixType>,
) -> anyhow::Result<()> {
    let resumed = resume.map(Checkpoint::load).transpose()?;
    let mut cfg = match &resumed {
        Some(ck) => {
            let cfg = base.load_or(ck)?;
            let mut model = cfg.model;
            model.speakers = ck.config.model.speakers;
            if model != ck.config.model || cfg.dsp != ck.config.dsp {
                bail!("the model or dsp settings differ from those stored in the checkpoint");
            }
            cfg
        }
        None => base.load()?,
    };
    if let Some(s) = steps {
        cfg.train.steps = s;
    }
    if let Some(t) = mix_type {
        cfg.train.mix_type = t;
    }
    let corpus = open_corpus(&mut cfg, corpus_args)?;
    let (mut model, mut adam) = match resumed {
        Some(ck) => {
            if ck.speakers != registry_snapshot(&corpus.registry) {
                bail!("the corpus speakers differ from the checkpoint's speaker registry");
            }
            (ck.model, ck.adam)
        }
        None => {
            cfg.model.speakers = corpus.registry.len();
            let model = SceModel::seeded(cfg.model, cfg.seed)?;
            let adam = AdamState::new(cfg.optim, model.named_params().into_iter().map(|(_, t)| t));
            (model, adam)
        }
    };
    cfg.model.speakers = model.config.speakers;
    cfg.validate()?;
    create_dir(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let log_path = out.join("train.log");
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let every = cfg.train.checkpoint_every;
    let result = run_training(&mut model, &mut adam, &corpus, &cfg.train, cfg.seed, |rec, m, a| {
        let line = rec.log_line();
        println!("{line}");
        writeln!(log, "{line}").map_err(|e| Error::Io {
            context: "writing training log".into(),
            source: e,
        })?;
        if every > 0 && rec.step % every == 0 {
            snapshot(rec.step, &cfg, &corpus, m, a).save(out.join(format!("step-{:06}.ckpt", rec.step)))?;
        }
        if rec.improved {
            snapshot(rec.step, &cfg, &corpus, m, a).save(out.join("best.ckpt"))?;
        }
        Ok(())
    });
    let last = out.join("last.ckpt");
    snapshot(adam.step, &cfg, &corpus, &model, &adam).save(&last)?;
    match result {
        Ok(outcome) => {
            eprintln!(
                "finished at step {}{}; best validation loss {}",
                outcome.last_step,
                if outcome.stopped_early { " (early stop)" } else { "" },
                outcome.best_val_loss.map_or("n/a".to_string(), |v| format!("{v:.6}"))
            );
            Ok(())
        }
        Err(e) => Err(anyhow::Error::new(e)
            .context(format!("training aborted; last good state saved to {}", last.display()))),
    }
}

pub fn separate(base: &Base, checkpoint: &Path, k: Option<usize>, out: Option<&Path>, input: &Path) -> anyhow::Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = base.load_or(&ck)?;
    let k = k.unwrap_or(cfg.separate.k);
    if k == 0 {
        bail!("--k must be positive");
    }
    let encoder = ck.encoder_for_bins(cfg.dsp.bins())?;
    let result = separate_file(encoder, input, k, cfg.separate.kmeans(), &cfg.dsp, cfg.seed)?;
    let stem = input
        .file_stem()
        .with_context(|| format!("{} has no file name", input.display()))?
        .to_string_lossy();
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => input.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    create_dir(&dir)?;
    for (i, w) in result.waveforms.iter().enumerate() {
        let path = dir.join(format!("{stem}.source{i}.wav"));
        write_wav(&path, w)?;
        println!("{}", path.display());
    }
    Ok(())
}

/// Counts of mixes whose speakers are all, none, or some of the training speakers.
fn membership(entries: &[ManifestEntry], ck: &Checkpoint) -> (usize, usize, usize) {
    let known: HashSet<&str> = ck.speakers.iter().map(|s| s.id.as_str()).collect();
    let (mut inside, mut outside, mut partial) = (0, 0, 0);
    for e in entries {
        let n = e.sources.iter().filter(|s| known.contains(s.speaker_id.as_str())).count();
        match n {
            0 => outside += 1,
            n if n == e.sources.len() => inside += 1,
            _ => partial += 1,
        }
    }
    (inside, outside, partial)
}

pub fn evaluate(
    base: &Base,
    corpus_args: &CorpusArgs,
    manifest: &Path,
    checkpoint: Option<&Path>,
    k: Option<usize>,
    ideal_mask: bool,
    out: &Path,
) -> anyhow::Result<()> {
    let ck = checkpoint.map(Checkpoint::load).transpose()?;
    let mut cfg = match &ck {
        Some(ck) => base.load_or(ck)?,
        None => base.load()?,
    };
    let text = fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let entries = parse_manifest(&text)?;
    let corpus = open_corpus(&mut cfg, corpus_args)?;
    let mode = match (&ck, ideal_mask) {
        (_, true) => EvalMode::IdealMask,
        (Some(ck), false) => EvalMode::Model {
            encoder: ck.encoder_for_bins(cfg.dsp.bins())?,
            k: k.unwrap_or(cfg.separate.k),
            clustering: cfg.separate.kmeans(),
        },
        (None, false) => bail!("--checkpoint is required unless --ideal-mask is given"),
    };
    let report = evaluate_set(&corpus, &entries, mode, cfg.seed)?;
    print!("{}", report.summary_table());
    if let Some(ck) = &ck {
        let (inside, outside, partial) = membership(&entries, ck);
        println!("mixes: {inside} in-set, {outside} out-of-set, {partial} partly in-set");
    }
    create_dir(out)?;
    let csv = out.join("sdr_report.csv");
    fs::write(&csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    println!("report: {}", csv.display());
    Ok(())
}

pub fn bench(base: &Base, reps: usize, bins: usize) -> anyhow::Result<()> {
    let cfg = base.load()?;
    let report = bench_loss(&BenchConfig {
        batch: 8,
        speakers: 2,
        embed_dim: cfg.model.embed_dim,
        bins,
        reps,
        seed: cfg.seed,
        ..BenchConfig::default()
    })?;
    print!("{}", report.to_text());
    Ok(())
}
