//! Duration-modification pipeline: encode foreign frames with a native
//! codebook, collapse repeats, and re-expand with durations predicted by a
//! natively trained duration model.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataio::{self, FeatureMatrix, Run, RunLengthSequence, UnitSequence};
use crate::durmodel::DurationModel;
use crate::error::{Error, Result};
use crate::tokenizer::{encode_frames, Codebook};
use crate::unitseq::{deduplicate, run_length_decode, run_length_encode, DurationStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PipelineMode {
    /// Frame-wise units passed through unchanged.
    Baseline,
    /// Repeats collapsed; durations are left to a downstream decoder.
    DedupOnly,
    /// Repeats collapsed, then re-expanded with predicted durations.
    DurMod,
}

impl PipelineMode {
    pub fn name(self) -> &'static str {
        match self {
            PipelineMode::Baseline => "baseline",
            PipelineMode::DedupOnly => "dedup",
            PipelineMode::DurMod => "dur-mod",
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(PipelineMode::Baseline),
            "dedup" | "dedup_only" | "dedup-only" => Ok(PipelineMode::DedupOnly),
            "dur-mod" | "dur_mod" | "durmod" => Ok(PipelineMode::DurMod),
            other => Err(Error::validation(format!(
                "unknown mode {other:?}, expected baseline, dedup or dur-mod"
            ))),
        }
    }
}

/// Applies one pipeline mode to a frame-wise unit sequence. `model` is only
/// consulted in [`PipelineMode::DurMod`].
pub fn modify_sequence(s: &UnitSequence, mode: PipelineMode, model: Option<&DurationModel>) -> Result<UnitSequence> {
    match mode {
        PipelineMode::Baseline => Ok(s.clone()),
        PipelineMode::DedupOnly => Ok(deduplicate(s)),
        PipelineMode::DurMod => {
            let model = model.ok_or(Error::MissingModel("dur-mod"))?;
            if model.config().codebook_size != s.codebook_size() as usize {
                return Err(Error::validation(format!(
                    "duration model K={} does not match unit sequence K={}",
                    model.config().codebook_size,
                    s.codebook_size()
                )));
            }
            let units = deduplicate(s).into_units();
            let durations = model.predict_durations(&units)?;
            let runs = units.into_iter().zip(durations).map(|(unit, duration)| Run { unit, duration }).collect();
            run_length_decode(&RunLengthSequence::new(runs, s.codebook_size())?)
        }
    }
}

/// Encodes foreign features with the codebook, then applies `mode`.
pub fn simulate_accent(
    features: &FeatureMatrix,
    cb: &Codebook,
    mode: PipelineMode,
    model: Option<&DurationModel>,
) -> Result<UnitSequence> {
    if let (PipelineMode::DurMod, Some(m)) = (mode, model) {
        if m.config().codebook_size != cb.k() {
            return Err(Error::validation(format!(
                "duration model K={} does not match codebook K={}",
                m.config().codebook_size,
                cb.k()
            )));
        }
    }
    modify_sequence(&encode_frames(features, cb)?, mode, model)
}

/// Outcome of one successfully processed file.
#[derive(Debug, Clone)]
pub struct FileResult {
    pub output_path: PathBuf,
    /// Frame-wise sequence before modification.
    pub input: UnitSequence,
    pub output: UnitSequence,
}

impl FileResult {
    pub fn runs(&self) -> usize {
        run_length_encode(&self.output).runs().len()
    }
}

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub input_path: PathBuf,
    pub outcome: std::result::Result<FileResult, String>,
}

/// Per-file results in manifest order.
#[derive(Debug, Clone, Default)]
pub struct BatchReport {
    pub rows: Vec<ReportRow>,
}

impl BatchReport {
    pub const TSV_HEADER: &'static str = "input\tstatus\tinput_frames\toutput_frames\truns\toutput\tmessage";

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn successes(&self) -> impl Iterator<Item = &FileResult> {
        self.rows.iter().filter_map(|r| r.outcome.as_ref().ok())
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\n", Self::TSV_HEADER);
        for row in &self.rows {
            let input = row.input_path.display();
            match &row.outcome {
                Ok(r) => s.push_str(&format!(
                    "{input}\tok\t{}\t{}\t{}\t{}\t\n",
                    r.input.len(),
                    r.output.len(),
                    r.runs(),
                    r.output_path.display()
                )),
                Err(e) => s.push_str(&format!("{input}\terror\t\t\t\t\t{}\n", e.replace(['\t', '\n'], " "))),
            }
        }
        s
    }

    /// Pooled run-duration stats of the inputs and outputs of all successful
    /// rows, or `None` when nothing succeeded.
    pub fn pooled_stats(&self) -> Option<(DurationStats, DurationStats)> {
        let pool = |f: fn(&FileResult) -> &UnitSequence| {
            let durations: Vec<u32> = self.successes().flat_map(|r| run_length_encode(f(r)).durations().collect::<Vec<_>>()).collect();
            DurationStats::from_durations(durations).ok()
        };
        Some((pool(|r| &r.input)?, pool(|r| &r.output)?))
    }
}

fn output_name(input: &Path) -> Option<String> {
    input.file_stem().map(|s| format!("{}.units", s.to_string_lossy()))
}

/// Runs `process` over every input and writes each result as
/// `<out_dir>/<input stem>.units`. Failures are recorded per file and never
/// abort the batch; rows follow input order.
pub fn run_batch<F>(inputs: &[PathBuf], out_dir: &Path, process: F) -> BatchReport
where
    F: Fn(&Path) -> Result<(UnitSequence, UnitSequence)> + Sync,
{
    let mut seen: HashMap<String, usize> = HashMap::new();
    for p in inputs {
        if let Some(n) = output_name(p) {
            *seen.entry(n).or_default() += 1;
        }
    }
    let rows = inputs
        .par_iter()
        .map(|p| {
            let outcome = (|| {
                let name = output_name(p).ok_or_else(|| format!("cannot derive an output name from {}", p.display()))?;
                if seen[&name] > 1 {
                    return Err(format!("output name {name} is shared by several inputs"));
                }
                let (input, output) = process(p).map_err(|e| e.to_string())?;
                let output_path = out_dir.join(&name);
                dataio::write_path(&output_path, |w| dataio::store_unit_sequence(&output, w)).map_err(|e| e.to_string())?;
                Ok(FileResult { output_path, input, output })
            })();
            ReportRow { input_path: p.clone(), outcome }
        })
        .collect();
    BatchReport { rows }
}

/// Simulates every feature file listed in `manifest`.
pub fn batch_simulate(
    manifest: &[PathBuf],
    cb: &Codebook,
    model: Option<&DurationModel>,
    mode: PipelineMode,
    out_dir: &Path,
) -> Result<BatchReport> {
    if mode == PipelineMode::DurMod && model.is_none() {
        return Err(Error::MissingModel("dur-mod"));
    }
    Ok(run_batch(manifest, out_dir, |p| {
        let features = dataio::read_path(p, dataio::load_feature_matrix)?;
        let input = encode_frames(&features, cb)?;
        let output = modify_sequence(&input, mode, model)?;
        Ok((input, output))
    }))
}

/// Like [`batch_simulate`] but starting from unit-sequence files.
pub fn batch_modify_units(
    manifest: &[PathBuf],
    model: Option<&DurationModel>,
    mode: PipelineMode,
    out_dir: &Path,
) -> Result<BatchReport> {
    if mode == PipelineMode::DurMod && model.is_none() {
        return Err(Error::MissingModel("dur-mod"));
    }
    Ok(run_batch(manifest, out_dir, |p| {
        let input = dataio::read_path(p, dataio::load_unit_sequence)?;
        let output = modify_sequence(&input, mode, model)?;
        Ok((input, output))
    }))
}
