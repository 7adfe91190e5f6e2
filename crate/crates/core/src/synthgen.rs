//! Synthetic corpora with known unit labels and controllable rhythm.
//!
//! Each unit id owns a fixed latent position in the duration distribution,
//! so run lengths depend on the unit as they do in real speech, and the
//! latent Gaussian is calibrated so that the discretized run lengths have
//! the requested mean and standard deviation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::dataio::{self, Codebook, FeatureMatrix, UnitSequence, DEFAULT_FRAME_SHIFT_MS};
use crate::error::{Error, Result};
use crate::rng;

const TAG_CODEBOOK: u64 = 0x5359_4e43;
const TAG_RANKS: u64 = 0x5359_4e52;
const TAG_UTTERANCE: u64 = 0x5359_4e55;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const FEATURES_LIST: &str = "features.list";
pub const UNITS_LIST: &str = "units.list";

#[derive(Debug, Clone, PartialEq)]
pub struct RhythmProfile {
    pub name: String,
    pub duration_mean: f64,
    pub duration_sd: f64,
    /// Fraction of run-length variance explained by the unit id, in [0, 1].
    pub unit_share: f64,
}

pub const DEFAULT_UNIT_SHARE: f64 = 0.95;

impl RhythmProfile {
    /// Native Japanese unit durations at k = 1000.
    pub fn mora() -> Self {
        Self::custom("mora", 1.26, 0.58)
    }

    /// American English unit durations at k = 1000.
    pub fn stress() -> Self {
        Self::custom("stress", 1.45, 0.97)
    }

    pub fn custom(name: &str, duration_mean: f64, duration_sd: f64) -> Self {
        Self { name: name.into(), duration_mean, duration_sd, unit_share: DEFAULT_UNIT_SHARE }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_mean >= 1.0 && self.duration_mean.is_finite()) {
            return Err(Error::validation(format!("duration mean must be >= 1, got {}", self.duration_mean)));
        }
        if !(self.duration_sd >= 0.0 && self.duration_sd.is_finite()) {
            return Err(Error::validation(format!("duration sd must be >= 0, got {}", self.duration_sd)));
        }
        if !(0.0..=1.0).contains(&self.unit_share) {
            return Err(Error::validation(format!("unit share must be in [0, 1], got {}", self.unit_share)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub k: usize,
    pub dim: usize,
    /// Minimum pairwise centroid distance.
    pub centroid_scale: f64,
    pub noise_sd: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub num_utterances: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            dim: 8,
            centroid_scale: 10.0,
            noise_sd: 0.5,
            min_frames: 50,
            max_frames: 150,
            num_utterances: 100,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > u32::MAX as usize {
            return Err(Error::validation(format!("k must be in [1, 2^32), got {}", self.k)));
        }
        if self.dim == 0 {
            return Err(Error::validation("dim must be >= 1"));
        }
        if !(self.centroid_scale > 0.0 && self.centroid_scale.is_finite()) {
            return Err(Error::validation(format!("centroid scale must be positive, got {}", self.centroid_scale)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::validation(format!("noise sd must be >= 0, got {}", self.noise_sd)));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::validation(format!(
                "utterance length range [{}, {}] is empty or starts at 0",
                self.min_frames, self.max_frames
            )));
        }
        Ok(())
    }

    /// Conditions under which generated labels may not be recoverable.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.noise_sd >= self.centroid_scale / 2.0 {
            w.push(format!(
                "noise sd {} is not below half the centroid separation {}; labels may not be recoverable",
                self.noise_sd, self.centroid_scale
            ));
        }
        w
    }
}

fn min_pairwise_distance(points: &[f64], dim: usize) -> f64 {
    let k = points.len() / dim;
    let mut best = f64::INFINITY;
    for i in 0..k {
        for j in i + 1..k {
            let a = &points[i * dim..(i + 1) * dim];
            let b = &points[j * dim..(j + 1) * dim];
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            best = best.min(d2.sqrt());
        }
    }
    best
}

/// Draws standard normal centroids and rescales them so that every pairwise
/// distance is at least `cfg.centroid_scale`.
pub fn gen_codebook(cfg: &SynthConfig) -> Result<Codebook> {
    cfg.validate()?;
    for attempt in 0.. {
        let mut r = rng::stream(cfg.seed, TAG_CODEBOOK, attempt);
        let mut c: Vec<f64> = (0..cfg.k * cfg.dim).map(|_| r.sample(StandardNormal)).collect();
        if cfg.k > 1 {
            let dmin = min_pairwise_distance(&c, cfg.dim);
            if dmin.is_nan() || dmin <= 0.0 {
                continue;
            }
            let factor = cfg.centroid_scale / dmin * (1.0 + 1e-9);
            c.iter_mut().for_each(|v| *v *= factor);
            if c.iter().any(|v| !v.is_finite()) || min_pairwise_distance(&c, cfg.dim) < cfg.centroid_scale {
                continue;
            }
        }
        return Codebook::new(cfg.k, cfg.dim, c, 0.0);
    }
    unreachable!()
}

/// Run-length sampler for one profile over a codebook of size `k`.
#[derive(Debug, Clone)]
pub struct DurationSampler {
    /// Latent center of each unit.
    centers: Vec<f64>,
    /// Latent within-unit standard deviation.
    spread: f64,
    fixed: Option<u32>,
}

fn normal() -> StdNormal {
    StdNormal::new(0.0, 1.0).expect("standard normal")
}

/// Per-unit standard normal quantiles at evenly spaced probabilities.
fn unit_quantiles(k: usize) -> Vec<f64> {
    let n = normal();
    (0..k).map(|i| n.inverse_cdf((i as f64 + 0.5) / k as f64)).collect()
}

/// Mean and SD of `max(1, round(c + s * e))` with `e` standard normal and
/// `c` uniform over `centers`.
fn discretized_moments(centers: &[f64], s: f64) -> (f64, f64) {
    let n = normal();
    let (mut m1, mut m2) = (0.0, 0.0);
    for &c in centers {
        if s == 0.0 {
            let d = c.round().max(1.0);
            m1 += d;
            m2 += d * d;
            continue;
        }
        let hi = (c + 12.0 * s).ceil().max(1.0) as u64 + 1;
        let mut below = 0.0;
        for d in 1..=hi {
            let cdf = n.cdf((d as f64 + 0.5 - c) / s);
            let p = cdf - below;
            below = cdf;
            m1 += p * d as f64;
            m2 += p * (d * d) as f64;
        }
    }
    let k = centers.len() as f64;
    let mean = m1 / k;
    (mean, (m2 / k - mean * mean).max(0.0).sqrt())
}

impl DurationSampler {
    /// Builds the sampler. Unit latent ranks are a permutation seeded by `seed`.
    pub fn new(profile: &RhythmProfile, k: usize, seed: u64) -> Result<Self> {
        profile.validate()?;
        if k == 0 {
            return Err(Error::validation("k must be >= 1"));
        }
        let mut ranks: Vec<usize> = (0..k).collect();
        ranks.shuffle(&mut rng::stream(seed, TAG_RANKS, 0));
        if profile.duration_sd == 0.0 {
            let d = profile.duration_mean.round().max(1.0) as u32;
            return Ok(Self { centers: vec![0.0; k], spread: 0.0, fixed: Some(d) });
        }
        let q = unit_quantiles(k);
        let z: Vec<f64> = ranks.iter().map(|&r| q[r]).collect();
        let (a, b) = (profile.unit_share.sqrt(), (1.0 - profile.unit_share).sqrt());
        let centers_for = |mu: f64, sigma: f64| z.iter().map(|z| mu + sigma * a * z).collect::<Vec<_>>();
        let moments = |mu: f64, sigma: f64| discretized_moments(&centers_for(mu, sigma), sigma * b);

        let mu_for = |sigma: f64| {
            let (mut lo, mut hi) = (-20.0 - 10.0 * sigma, profile.duration_mean + 10.0 * sigma + 1.0);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if moments(mid, sigma).0 < profile.duration_mean {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let sd_at = |sigma: f64| moments(mu_for(sigma), sigma).1;
        let (mut lo, mut hi) = (1e-3, 1.0);
        while sd_at(hi) < profile.duration_sd && hi < 1e3 {
            hi *= 2.0;
        }
        // Below the smallest reachable SD the narrowest distribution is used.
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if sd_at(mid) < profile.duration_sd {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let sigma = 0.5 * (lo + hi);
        let mu = mu_for(sigma);
        Ok(Self { centers: centers_for(mu, sigma), spread: sigma * b, fixed: None })
    }

    /// Mean and SD of the run length marginalized over uniformly drawn units.
    pub fn moments(&self) -> (f64, f64) {
        match self.fixed {
            Some(d) => (d as f64, 0.0),
            None => discretized_moments(&self.centers, self.spread),
        }
    }

    pub fn sample(&self, unit: u32, rng: &mut ChaCha8Rng) -> u32 {
        if let Some(d) = self.fixed {
            return d;
        }
        let e: f64 = rng.sample(StandardNormal);
        let x = (self.centers[unit as usize] + self.spread * e).round();
        x.clamp(1.0, u32::MAX as f64) as u32
    }
}

/// Generates the `index`-th utterance: a walk over distinct successive units
/// with sampled run lengths, truncated to a length drawn uniformly from the
/// configured range, with each frame set to its unit centroid plus isotropic
/// Gaussian noise.
pub fn gen_utterance(
    cb: &Codebook,
    sampler: &DurationSampler,
    cfg: &SynthConfig,
    index: u64,
) -> Result<(FeatureMatrix, UnitSequence)> {
    cfg.validate()?;
    if cb.k() != cfg.k || cb.dim() != cfg.dim || sampler.centers.len() != cfg.k {
        return Err(Error::validation(format!(
            "codebook is {}x{} and sampler has {} units but config asks for {}x{}",
            cb.k(),
            cb.dim(),
            sampler.centers.len(),
            cfg.k,
            cfg.dim
        )));
    }
    let mut r = rng::stream(cfg.seed, TAG_UTTERANCE, index);
    let len = r.random_range(cfg.min_frames..=cfg.max_frames);
    let k = cfg.k as u32;
    let mut units = Vec::with_capacity(len);
    let mut prev: Option<u32> = None;
    while units.len() < len {
        let u = match prev {
            None => r.random_range(0..k),
            Some(_) if k == 1 => 0,
            Some(p) => {
                let v = r.random_range(0..k - 1);
                if v >= p { v + 1 } else { v }
            }
        };
        let d = sampler.sample(u, &mut r) as usize;
        units.extend(std::iter::repeat_n(u, d.min(len - units.len())));
        prev = Some(u);
    }
    let noise = (cfg.noise_sd > 0.0).then(|| Normal::new(0.0, cfg.noise_sd).expect("valid noise sd"));
    let mut frames = Vec::with_capacity(len * cfg.dim);
    for &u in &units {
        for &c in cb.centroid(u as usize) {
            let e = noise.as_ref().map_or(0.0, |n| n.sample(&mut r));
            frames.push((c + e) as f32);
        }
    }
    let fm = FeatureMatrix::new(len, cfg.dim, frames, DEFAULT_FRAME_SHIFT_MS)?;
    Ok((fm, UnitSequence::new(units, k)?))
}

/// One generated utterance on disk, relative to the corpus directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub features: PathBuf,
    pub units: PathBuf,
}

fn write_text(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let mut s = String::new();
    for l in lines {
        s.push_str(&l);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Writes `utt_NNNNN.fmat` and `utt_NNNNN.units` for every utterance, plus
/// `manifest.tsv` (feature and unit file per row), `features.list` and
/// `units.list`. On failure every file written by this call is removed.
pub fn gen_corpus(cb: &Codebook, profile: &RhythmProfile, cfg: &SynthConfig, dir: &Path) -> Result<Vec<CorpusEntry>> {
    cfg.validate()?;
    let sampler = DurationSampler::new(profile, cfg.k, cfg.seed)?;
    fs::create_dir_all(dir)?;
    let entries: Vec<CorpusEntry> = (0..cfg.num_utterances)
        .map(|i| CorpusEntry {
            features: PathBuf::from(format!("utt_{i:05}.fmat")),
            units: PathBuf::from(format!("utt_{i:05}.units")),
        })
        .collect();
    let results: Vec<Result<()>> = entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let (fm, us) = gen_utterance(cb, &sampler, cfg, i as u64)?;
            let fpath = dir.join(&e.features);
            dataio::write_path(&fpath, |w| dataio::store_feature_matrix(&fm, w).map(|_| ()))
                .map_err(|err| annotate(err, &fpath))?;
            let upath = dir.join(&e.units);
            dataio::write_path(&upath, |w| dataio::store_unit_sequence(&us, w)).map_err(|err| annotate(err, &upath))
        })
        .collect();
    let lists = || -> Result<()> {
        results.iter().find_map(|r| r.as_ref().err()).map_or(Ok(()), |e| Err(Error::validation(e.to_string())))?;
        let name = |p: &PathBuf| p.display().to_string();
        write_text(&dir.join(MANIFEST_FILE), entries.iter().map(|e| format!("{}\t{}", name(&e.features), name(&e.units))))?;
        write_text(&dir.join(FEATURES_LIST), entries.iter().map(|e| name(&e.features)))?;
        write_text(&dir.join(UNITS_LIST), entries.iter().map(|e| name(&e.units)))
    };
    if let Err(e) = lists() {
        let first = results.into_iter().find_map(|r| r.err()).unwrap_or(e);
        for f in entries
            .iter()
            .flat_map(|e| [&e.features, &e.units])
            .map(|p| dir.join(p))
            .chain([MANIFEST_FILE, FEATURES_LIST, UNITS_LIST].map(|f| dir.join(f)))
        {
            let _ = fs::remove_file(f);
        }
        return Err(first);
    }
    Ok(entries)
}

fn annotate(err: Error, path: &Path) -> Error {
    match err {
        Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))),
        other => other,
    }
}
