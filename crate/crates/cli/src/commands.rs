use std::fmt;
use std::fs;
use std::io::{BufRead, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use unitdur::accent::{batch_modify_units, batch_simulate, run_batch, BatchReport};
use unitdur::dataio::{self, load_codebook, load_feature_matrix, load_model, load_unit_sequence, store_codebook, store_model};
use unitdur::durmodel::{build_training_set, train};
use unitdur::synthgen::{self, RhythmProfile, SynthConfig};
use unitdur::tokenizer::{encode_frames, train_codebook, Init, KMeansConfig};
use unitdur::unitseq::{duration_stats, DurationStats};
use unitdur::{DurationModelConfig, Error, PipelineMode};

use crate::manifest::{self, Entry};
use crate::settings::Settings;
use crate::{EncodeArgs, GenCorpusArgs, SimulateArgs, StatsArgs, TrainDurpredArgs, TrainKmeansArgs};

pub const REPORT_FILE: &str = "report.tsv";
pub const SUMMARY_FILE: &str = "summary.tsv";
pub const CODEBOOK_FILE: &str = "codebook.kmcb";

/// Invalid invocation or configuration.
#[derive(Debug)]
pub struct Usage(pub String);

/// Some files of a batch failed; the rest were written.
#[derive(Debug)]
pub struct Partial(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "usage: {}", self.0)
    }
}

impl fmt::Display for Partial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "partial failure: {}", self.0)
    }
}

impl std::error::Error for Usage {}
impl std::error::Error for Partial {}

/// 0 success, 2 usage or data error, 3 partial failure, 4 internal error.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Partial>().is_some() {
        3
    } else if e.downcast_ref::<Usage>().is_some() || e.downcast_ref::<std::io::Error>().is_some() {
        2
    } else if let Some(e) = e.downcast_ref::<Error>() {
        match e {
            Error::TrainingDiverged { .. } => 4,
            _ => 2,
        }
    } else {
        4
    }
}

fn load_all<T: Send>(
    entries: &[Entry],
    load: impl Fn(&mut std::io::BufReader<fs::File>) -> unitdur::Result<T> + Sync,
) -> Result<Vec<T>> {
    let loaded: Vec<Result<T>> = entries
        .par_iter()
        .map(|e| dataio::read_path(&e.path, &load).with_context(|| format!("loading {}", e.path.display())))
        .collect();
    loaded.into_iter().collect()
}

fn read_file<T>(path: &Path, load: impl FnOnce(&mut std::io::BufReader<fs::File>) -> unitdur::Result<T>) -> Result<T> {
    dataio::read_path(path, load).with_context(|| format!("loading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(Error::from).with_context(|| format!("writing {}", path.display()))
}

fn paths(entries: &[Entry]) -> Vec<PathBuf> {
    entries.iter().map(|e| e.path.clone()).collect()
}

/// Writes the per-file report with manifest-relative names, plus a unit
/// manifest of the successful outputs, and fails with
/// [`Partial`] if any file failed.
fn finish_batch(mut report: BatchReport, entries: &[Entry], out_dir: &Path) -> Result<BatchReport> {
    for (row, e) in report.rows.iter_mut().zip(entries) {
        row.input_path = PathBuf::from(&e.raw);
        if let Ok(r) = &mut row.outcome {
            r.output_path = r.output_path.file_name().map(PathBuf::from).unwrap_or_default();
        }
    }
    let path = out_dir.join(REPORT_FILE);
    write_text(&path, &report.to_tsv())?;
    let listed: String = report
        .rows
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok())
        .map(|r| format!("{}\n", r.output_path.display()))
        .collect();
    write_text(&out_dir.join(synthgen::UNITS_LIST), &listed)?;
    let failed = report.failures();
    if failed > 0 {
        bail!(Partial(format!("{failed} of {} files failed; see {}", report.rows.len(), path.display())));
    }
    Ok(report)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::from).with_context(|| format!("creating {}", dir.display()))
}

pub fn train_kmeans(a: TrainKmeansArgs, s: &Settings) -> Result<()> {
    let k = s.get("k", a.k)?.ok_or_else(|| Usage("--k is required".into()))?;
    let init = match s.get_or("init", a.init, "kmeanspp".to_string())?.as_str() {
        "kmeanspp" | "kmeans++" => Init::KMeansPlusPlus,
        "random" => Init::Random,
        other => bail!(Usage(format!("unknown init {other:?}, expected kmeanspp or random"))),
    };
    let defaults = KMeansConfig::new(k);
    let cfg = KMeansConfig {
        k,
        max_iterations: s.get_or("max_iterations", a.max_iter, defaults.max_iterations)?,
        rel_tolerance: s.get_or("rel_tolerance", a.tol, defaults.rel_tolerance)?,
        seed: s.get_or("seed", a.seed, defaults.seed)?,
        init,
        max_swaps: s.get_or("max_swaps", a.max_swaps, defaults.max_swaps)?,
    };
    let corpus = load_all(&manifest::read(&a.features)?, load_feature_matrix)?;
    let trained = train_codebook(&corpus, &cfg)?;
    dataio::write_path(&a.out, |w| store_codebook(&trained.codebook, w).map(|_| ()))
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!("inertia\titerations");
    println!("{}\t{}", trained.codebook.training_inertia(), trained.iterations);
    Ok(())
}

pub fn encode(a: EncodeArgs, _: &Settings) -> Result<()> {
    let cb = read_file(&a.codebook, load_codebook)?;
    let entries = manifest::read(&a.features)?;
    create_dir(&a.out_dir)?;
    let report = run_batch(&paths(&entries), &a.out_dir, |p| {
        let fm = dataio::read_path(p, load_feature_matrix)?;
        let units = encode_frames(&fm, &cb)?;
        Ok((units.clone(), units))
    });
    let report = finish_batch(report, &entries, &a.out_dir)?;
    eprintln!("encoded {} files", report.rows.len());
    Ok(())
}

fn load_unit_corpus(manifest_path: &Path) -> Result<Vec<unitdur::UnitSequence>> {
    load_all(&manifest::read(manifest_path)?, |r| load_unit_sequence(r as &mut dyn BufRead))
}

pub fn train_durpred(a: TrainDurpredArgs, s: &Settings) -> Result<()> {
    let corpus = load_unit_corpus(&a.units)?;
    let Some(first) = corpus.first() else {
        bail!(Error::InsufficientData(format!("no unit files in {}", a.units.display())));
    };
    let k = first.codebook_size();
    if let Some(other) = corpus.iter().find(|u| u.codebook_size() != k) {
        bail!(Error::Validation(format!("unit files disagree on K: {k} vs {}", other.codebook_size())));
    }
    let d = DurationModelConfig::new(k as usize);
    let cfg = DurationModelConfig {
        embed_dim: s.get_or("embed_dim", a.embed_dim, d.embed_dim)?,
        filter_size: s.get_or("filter_size", a.filter_size, d.filter_size)?,
        kernel_size: s.get_or("kernel_size", a.kernel_size, d.kernel_size)?,
        dropout_rate: s.get_or("dropout", a.dropout, d.dropout_rate)?,
        learning_rate: s.get_or("learning_rate", a.learning_rate, d.learning_rate)?,
        adam_beta1: s.get_or("adam_beta1", None, d.adam_beta1)?,
        adam_beta2: s.get_or("adam_beta2", None, d.adam_beta2)?,
        adam_eps: s.get_or("adam_eps", None, d.adam_eps)?,
        epochs: s.get_or("epochs", a.epochs, d.epochs)?,
        batch_utterances: s.get_or("batch_utterances", a.batch_utterances, d.batch_utterances)?,
        seed: s.get_or("seed", a.seed, d.seed)?,
        max_duration: s.get_or("max_duration", a.max_duration, d.max_duration)?,
        ..d
    };
    let trained = train(&build_training_set(&corpus)?, &cfg)?;
    dataio::write_path(&a.out, |w| store_model(&trained.model, w).map(|_| ()))
        .with_context(|| format!("writing {}", a.out.display()))?;
    match &a.loss_out {
        Some(p) => write_text(p, &trained.loss_tsv())?,
        None => print!("{}", trained.loss_tsv()),
    }
    Ok(())
}

fn stats_tsv(rows: &[(&str, &DurationStats)]) -> String {
    let mut s = format!("stream\t{}\n", DurationStats::TSV_HEADER);
    for (name, st) in rows {
        s.push_str(&format!("{name}\t{}\n", st.tsv_row()));
    }
    s
}

pub fn simulate(a: SimulateArgs, s: &Settings) -> Result<()> {
    let mode: PipelineMode = s.get_or("mode", a.mode, "baseline".to_string())?.parse()?;
    if mode == PipelineMode::DurMod && a.model.is_none() {
        bail!(Usage("--model is required with --mode dur-mod".into()));
    }
    let model = match (&a.model, mode) {
        (Some(p), PipelineMode::DurMod) => Some(read_file(p, |r| load_model(r as &mut dyn Read))?),
        _ => None,
    };
    let (entries, report) = match (&a.features, &a.units) {
        (Some(f), _) => {
            let cb_path = a.codebook.as_ref().ok_or_else(|| Usage("--codebook is required with --features".into()))?;
            let cb = read_file(cb_path, load_codebook)?;
            let entries = manifest::read(f)?;
            create_dir(&a.out_dir)?;
            let report = batch_simulate(&paths(&entries), &cb, model.as_ref(), mode, &a.out_dir)?;
            (entries, report)
        }
        (None, Some(u)) => {
            let entries = manifest::read(u)?;
            create_dir(&a.out_dir)?;
            let report = batch_modify_units(&paths(&entries), model.as_ref(), mode, &a.out_dir)?;
            (entries, report)
        }
        (None, None) => bail!(Usage("one of --features or --units is required".into())),
    };
    let pooled = report.pooled_stats();
    let summary = match &pooled {
        Some((i, o)) => stats_tsv(&[("input", i), ("output", o)]),
        None => format!("stream\t{}\n", DurationStats::TSV_HEADER),
    };
    write_text(&a.out_dir.join(SUMMARY_FILE), &summary)?;
    print!("{summary}");
    finish_batch(report, &entries, &a.out_dir)?;
    Ok(())
}

pub fn stats(a: StatsArgs, _: &Settings) -> Result<()> {
    let corpus = load_unit_corpus(&a.units)?;
    let st = duration_stats(&corpus)?;
    println!("{}", DurationStats::TSV_HEADER);
    println!("{}", st.tsv_row());
    Ok(())
}

pub fn gen_corpus(a: GenCorpusArgs, s: &Settings) -> Result<()> {
    let name = s.get_or("profile", a.profile, "mora".to_string())?;
    let mut profile = match name.as_str() {
        "mora" => RhythmProfile::mora(),
        "stress" => RhythmProfile::stress(),
        "custom" => {
            let mean = s.get::<f64>("mean", a.mean)?.ok_or_else(|| Usage("--profile custom requires --mean".into()))?;
            RhythmProfile::custom("custom", mean, 0.0)
        }
        other => bail!(Usage(format!("unknown profile {other:?}, expected mora, stress or custom"))),
    };
    profile.duration_mean = s.get_or("mean", a.mean, profile.duration_mean)?;
    profile.duration_sd = s.get_or("sd", a.sd, profile.duration_sd)?;
    profile.unit_share = s.get_or("unit_share", a.unit_share, profile.unit_share)?;

    let d = SynthConfig::new(50);
    let mut cfg = SynthConfig {
        k: s.get_or("k", a.k, d.k)?,
        dim: s.get_or("dim", a.dim, d.dim)?,
        centroid_scale: s.get_or("centroid_scale", a.centroid_scale, d.centroid_scale)?,
        noise_sd: s.get_or("noise_sd", a.noise_sd, d.noise_sd)?,
        min_frames: s.get_or("min_frames", a.min_frames, d.min_frames)?,
        max_frames: s.get_or("max_frames", a.max_frames, d.max_frames)?,
        num_utterances: s.get_or("n", a.n, d.num_utterances)?,
        seed: s.get_or("seed", a.seed, d.seed)?,
    };
    let cb = match &a.codebook {
        Some(p) => {
            let cb = read_file(p, load_codebook)?;
            for (key, given, actual) in [("k", s.get::<usize>("k", a.k)?, cb.k()), ("dim", s.get::<usize>("dim", a.dim)?, cb.dim())] {
                if given.is_some_and(|g| g != actual) {
                    bail!(Usage(format!("--{key} {} conflicts with the codebook's {actual}", given.unwrap_or_default())));
                }
            }
            cfg.k = cb.k();
            cfg.dim = cb.dim();
            cb
        }
        None => synthgen::gen_codebook(&cfg)?,
    };
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    create_dir(&a.out_dir)?;
    let entries = synthgen::gen_corpus(&cb, &profile, &cfg, &a.out_dir)?;
    let cb_path = a.out_dir.join(CODEBOOK_FILE);
    dataio::write_path(&cb_path, |w| store_codebook(&cb, w).map(|_| ()))
        .with_context(|| format!("writing {}", cb_path.display()))?;
    eprintln!("wrote {} utterances to {}", entries.len(), a.out_dir.display());
    Ok(())
}
