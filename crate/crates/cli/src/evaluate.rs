//! `evaluate`: prosody and duration correlations of test bundles.
//!
//! A bundle stem `X` names `X.fmat`, `X.prosody.tsv` and optionally
//! `X.align.tsv`, relative to the pairs manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use unitdur::dataio::{self, load_alignment, load_feature_matrix, load_prosody};
use unitdur::eval::{duration_pairs, prosody_correlation, vowel_duration_ratio, voiced_pairs, Distance, PairedSamples};
use unitdur::{Error, FeatureMatrix, PhonemeAlignment, ProsodyTrack};

use crate::commands::Usage;
use crate::manifest;
use crate::settings::Settings;
use crate::EvaluateArgs;

pub const REPORT_HEADER: &str = "test\treferences\tpitch_corr\tintensity_corr\tn_references\tn_skipped\tduration_corr";

struct Bundle {
    features: FeatureMatrix,
    prosody: ProsodyTrack,
    alignment: Option<PhonemeAlignment>,
}

impl Bundle {
    fn load(base: &Path, stem: &str) -> Result<Self> {
        let path = |ext: &str| base.join(format!("{stem}{ext}"));
        let load = || -> Result<Self> {
            let features = dataio::read_path(path(".fmat"), load_feature_matrix)?;
            let prosody = dataio::read_path(path(".prosody.tsv"), load_prosody)?;
            let align_path = path(".align.tsv");
            let alignment = match align_path.exists() {
                true => Some(dataio::read_path(&align_path, load_alignment)?),
                false => None,
            };
            Ok(Self { features, prosody, alignment })
        };
        load().with_context(|| format!("loading bundle {}", base.join(stem).display()))
    }

    fn track(&self) -> (&FeatureMatrix, &ProsodyTrack) {
        (&self.features, &self.prosody)
    }
}

/// Value column that is either a number or `NA:<reason>`.
fn cell(v: &std::result::Result<f64, String>) -> String {
    match v {
        Ok(x) => x.to_string(),
        Err(reason) => format!("NA:{reason}"),
    }
}

fn na_reason(e: &Error) -> Option<&'static str> {
    match e {
        Error::LabelMismatch(_) => Some("label-mismatch"),
        Error::DegenerateInput(_) => Some("degenerate"),
        Error::InsufficientData(_) => Some("insufficient-data"),
        _ => None,
    }
}

/// Turns statistic-level failures into `NA` cells and propagates the rest.
fn soft<T>(r: unitdur::Result<T>) -> Result<std::result::Result<T, String>> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(e) => match na_reason(&e) {
            Some(reason) => Ok(Err(reason.to_string())),
            None => Err(e.into()),
        },
    }
}

struct Row {
    test: String,
    refs: Vec<String>,
    pitch: std::result::Result<f64, String>,
    intensity: std::result::Result<f64, String>,
    used: usize,
    skipped: usize,
    duration: std::result::Result<f64, String>,
    pooled_pitch: PairedSamples,
    pooled_intensity: PairedSamples,
    pooled_duration: PairedSamples,
}

fn evaluate_row(test: &str, refs: &[String], bundles: &BTreeMap<String, Bundle>, distance: Distance) -> Result<Row> {
    let t = &bundles[test];
    let rb: Vec<&Bundle> = refs.iter().map(|r| &bundles[r]).collect();
    let tracks: Vec<_> = rb.iter().map(|b| b.track()).collect();
    let corr = soft(prosody_correlation(t.track(), &tracks, distance))?;
    let (pitch, intensity, used, skipped) = match corr {
        Ok(c) => (Ok(c.pitch_corr), Ok(c.intensity_corr), c.n_references, c.n_skipped),
        Err(reason) => (Err(reason.clone()), Err(reason), 0, refs.len()),
    };

    let mut row = Row {
        test: test.to_string(),
        refs: refs.to_vec(),
        pitch,
        intensity,
        used,
        skipped,
        duration: Err("no-alignment".into()),
        pooled_pitch: PairedSamples::default(),
        pooled_intensity: PairedSamples::default(),
        pooled_duration: PairedSamples::default(),
    };
    for b in &rb {
        let pairs = voiced_pairs(t.track(), b.track(), distance)?;
        row.pooled_pitch.extend(&pairs.pitch);
        row.pooled_intensity.extend(&pairs.intensity);
    }

    // Every reference with an alignment must match the test labels.
    if let Some(ta) = &t.alignment {
        let mut values = Vec::new();
        for ra in rb.iter().filter_map(|b| b.alignment.as_ref()) {
            match soft(duration_pairs(ta, ra))? {
                Ok(p) => {
                    row.pooled_duration.extend(&p);
                    match soft(p.pearson().and_then(|r| if p.len() < 2 { Err(Error::InsufficientData("fewer than 2 phonemes".into())) } else { Ok(r) }))? {
                        Ok(r) => values.push(r),
                        Err(reason) => {
                            row.duration = Err(reason);
                            values.clear();
                            break;
                        }
                    }
                }
                Err(reason) => {
                    row.duration = Err(reason);
                    values.clear();
                    break;
                }
            }
        }
        if !values.is_empty() {
            row.duration = Ok(values.iter().sum::<f64>() / values.len() as f64);
        }
    }
    Ok(row)
}

fn mean_cell(values: impl Iterator<Item = f64>) -> String {
    let v: Vec<f64> = values.collect();
    match v.len() {
        0 => "NA:insufficient-data".into(),
        n => (v.iter().sum::<f64>() / n as f64).to_string(),
    }
}

fn pooled_cell(p: &PairedSamples) -> Result<String> {
    Ok(cell(&soft(p.pearson())?))
}

fn vowel_row(name: &str, alignments: &[&PhonemeAlignment], shift: f64) -> Result<String> {
    let owned: Vec<PhonemeAlignment> = alignments.iter().map(|a| (*a).clone()).collect();
    Ok(match soft(vowel_duration_ratio(&owned, shift))? {
        Ok(v) => format!("{name}\t{}\t{}\t{}", v.stressed_ms, v.unstressed_ms, v.ratio),
        Err(reason) => format!("{name}\tNA:{reason}\tNA:{reason}\tNA:{reason}"),
    })
}

pub fn evaluate(a: EvaluateArgs, s: &Settings) -> Result<()> {
    let distance: Distance = s.get_or("distance", a.distance, "cosine".to_string())?.parse()?;
    let entries = manifest::read(&a.pairs)?;
    let base = a.pairs.parent().map(Path::to_path_buf).unwrap_or_default();
    for e in &entries {
        if e.extra.is_empty() {
            bail!(Usage(format!("pairs manifest row {:?} names no reference", e.raw)));
        }
    }
    let stems: Vec<String> = {
        let mut v: Vec<String> = entries.iter().flat_map(|e| std::iter::once(e.raw.clone()).chain(e.extra.iter().cloned())).collect();
        v.sort();
        v.dedup();
        v
    };
    let loaded: Vec<Result<Bundle>> = stems.par_iter().map(|stem| Bundle::load(&base, stem)).collect();
    let mut bundles = BTreeMap::new();
    for (stem, b) in stems.iter().zip(loaded) {
        bundles.insert(stem.clone(), b?);
    }

    let rows: Vec<Result<Row>> = entries.par_iter().map(|e| evaluate_row(&e.raw, &e.extra, &bundles, distance)).collect();
    let rows: Vec<Row> = rows.into_iter().collect::<Result<_>>()?;

    let mut out = format!("{REPORT_HEADER}\n");
    for r in &rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.test,
            r.refs.join(","),
            cell(&r.pitch),
            cell(&r.intensity),
            r.used,
            r.skipped,
            cell(&r.duration)
        ));
    }
    let ok = |f: fn(&Row) -> &std::result::Result<f64, String>| rows.iter().filter_map(move |r| f(r).as_ref().ok().copied());
    out.push_str(&format!(
        "#mean\t\t{}\t{}\t{}\t{}\t{}\n",
        mean_cell(ok(|r| &r.pitch)),
        mean_cell(ok(|r| &r.intensity)),
        rows.iter().map(|r| r.used).sum::<usize>(),
        rows.iter().map(|r| r.skipped).sum::<usize>(),
        mean_cell(ok(|r| &r.duration)),
    ));
    let mut pooled = [PairedSamples::default(), PairedSamples::default(), PairedSamples::default()];
    for r in &rows {
        pooled[0].extend(&r.pooled_pitch);
        pooled[1].extend(&r.pooled_intensity);
        pooled[2].extend(&r.pooled_duration);
    }
    out.push_str(&format!(
        "#pooled\t\t{}\t{}\t\t\t{}\n",
        pooled_cell(&pooled[0])?,
        pooled_cell(&pooled[1])?,
        pooled_cell(&pooled[2])?
    ));
    fs::write(&a.report, out).map_err(Error::from).with_context(|| format!("writing {}", a.report.display()))?;

    let test_aligned: Vec<&Bundle> = entries.iter().map(|e| &bundles[&e.raw]).filter(|b| b.alignment.is_some()).collect();
    let mut ref_stems: Vec<&String> = entries.iter().flat_map(|e| e.extra.iter()).collect();
    ref_stems.sort();
    ref_stems.dedup();
    let ref_aligned: Vec<&Bundle> = ref_stems.iter().map(|s| &bundles[*s]).filter(|b| b.alignment.is_some()).collect();
    if test_aligned.is_empty() && ref_aligned.is_empty() {
        return Ok(());
    }
    let shift = test_aligned.iter().chain(&ref_aligned).map(|b| b.features.frame_shift_ms()).next().unwrap_or_default();
    if test_aligned.iter().chain(&ref_aligned).any(|b| b.features.frame_shift_ms() != shift) {
        bail!(Error::Validation("aligned bundles disagree on frame shift".into()));
    }
    println!("set\tstressed_ms\tunstressed_ms\tratio");
    for (name, set) in [("test", &test_aligned), ("reference", &ref_aligned)] {
        let al: Vec<&PhonemeAlignment> = set.iter().filter_map(|b| b.alignment.as_ref()).collect();
        println!("{}", vowel_row(name, &al, shift as f64)?);
    }
    Ok(())
}
