//! k-means codebook training and nearest-centroid frame encoding.
//!
//! Training is full-batch Lloyd iteration seeded by k-means++ under squared
//! Euclidean distance. All arithmetic runs in `f64`. The assignment step is
//! parallel over frames, but every reduction runs sequentially in frame
//! order, so results are bit-identical for a fixed seed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataio::{FeatureMatrix, UnitSequence};
use crate::error::{Error, Result};
use crate::rng;

/// Cluster-count presets used for unit inventories.
pub const PRESET_SIZES: [usize; 3] = [50, 200, 1000];

const SEED_TAG: u64 = 0x6b6d_6561_6e73;

/// Trained `K x D` centroid table.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    centroids: Vec<f64>,
    training_inertia: f64,
}

impl Codebook {
    pub fn new(k: usize, dim: usize, centroids: Vec<f64>, training_inertia: f64) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::validation(format!("codebook must be non-empty, got {k}x{dim}")));
        }
        if centroids.len() != k * dim {
            return Err(Error::validation(format!(
                "codebook has {} values, expected {k}x{dim}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("codebook contains non-finite values"));
        }
        if !(training_inertia.is_finite() && training_inertia >= 0.0) {
            return Err(Error::validation(format!("invalid training inertia {training_inertia}")));
        }
        let cb = Codebook { k, dim, centroids, training_inertia };
        for i in 0..k {
            for j in i + 1..k {
                if cb.centroid(i) == cb.centroid(j) {
                    return Err(Error::validation(format!("centroids {i} and {j} are identical")));
                }
            }
        }
        Ok(cb)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn training_inertia(&self) -> f64 {
        self.training_inertia
    }

    /// Index and squared distance of the nearest centroid; ties go to the
    /// lowest index.
    pub fn nearest(&self, frame: &[f32]) -> (usize, f64) {
        nearest(&self.centroids, self.dim, frame.iter().map(|&v| v as f64))
    }

    /// Bit-exact comparison of all stored values.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.k == other.k
            && self.dim == other.dim
            && self.training_inertia.to_bits() == other.training_inertia.to_bits()
            && self.centroids.iter().zip(&other.centroids).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    KMeansPlusPlus,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iterations: usize,
    /// Stop once `(prev - cur) / prev` falls below this value.
    pub rel_tolerance: f64,
    pub seed: u64,
    pub init: Init,
    /// Upper bound on accepted centroid relocations after Lloyd converges.
    pub max_swaps: usize,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        KMeansConfig { k, max_iterations: 100, rel_tolerance: 1e-6, seed: 0, init: Init::KMeansPlusPlus, max_swaps: 100 }
    }
}

/// Result of [`train_codebook`] with the per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct TrainedCodebook {
    pub codebook: Codebook,
    /// Inertia after every assignment step of the first Lloyd run (entry 0
    /// follows initialization), then the inertia after each accepted swap.
    pub inertia_trace: Vec<f64>,
    /// Number of centroid update steps performed.
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: impl Iterator<Item = f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[f64], dim: usize, frame: impl Iterator<Item = f64> + Clone) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, frame.clone());
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Flattens a corpus into one `N x D` `f64` buffer.
fn flatten(corpus: &[FeatureMatrix]) -> Result<(Vec<f64>, usize)> {
    let dim = corpus
        .first()
        .map(FeatureMatrix::dim)
        .ok_or_else(|| Error::InsufficientData("empty training corpus".into()))?;
    if let Some((i, m)) = corpus.iter().enumerate().find(|(_, m)| m.dim() != dim) {
        return Err(Error::validation(format!(
            "feature matrix {i} has dimension {}, expected {dim}",
            m.dim()
        )));
    }
    let data = corpus.iter().flat_map(|m| m.frames().iter().map(|&v| v as f64)).collect();
    Ok((data, dim))
}

fn assign(data: &[f64], dim: usize, centroids: &[f64]) -> (Vec<usize>, Vec<f64>) {
    data.par_chunks_exact(dim)
        .map(|x| nearest(centroids, dim, x.iter().copied()))
        .unzip()
}

/// Index drawn with probability proportional to `weights`.
fn sample_weighted(weights: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut pick = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            pick = Some(i);
            acc += w;
            if acc > target {
                break;
            }
        }
    }
    pick.expect("positive total weight implies a positive entry")
}

/// Squared distances to the nearest of the current centroids once `candidate`
/// is added.
fn with_candidate(data: &[f64], dim: usize, d2: &[f64], candidate: &[f64]) -> Vec<f64> {
    d2.par_iter()
        .zip(data.par_chunks_exact(dim))
        .map(|(&w, x)| w.min(sq_dist(candidate, x.iter().copied())))
        .collect()
}

/// Greedy k-means++: each step draws several candidates by squared-distance
/// sampling and keeps the one that lowers the potential most.
fn kmeanspp(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = data.len() / dim;
    let trials = 2 + (k as f64).ln() as usize;
    let first = rng.random_range(0..n);
    let mut centroids = data[first * dim..(first + 1) * dim].to_vec();
    let mut d2: Vec<f64> = data
        .par_chunks_exact(dim)
        .map(|x| sq_dist(&centroids, x.iter().copied()))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::InsufficientData(format!(
                "only {c} distinct frames available for k={k}"
            )));
        }
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let pick = sample_weighted(&d2, total, rng);
            let next = with_candidate(data, dim, &d2, &data[pick * dim..(pick + 1) * dim]);
            let potential: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, pick, next));
            }
        }
        let (_, pick, next) = best.expect("at least one trial");
        d2 = next;
        centroids.extend_from_slice(&data[pick * dim..(pick + 1) * dim]);
    }
    Ok(centroids)
}

fn random_init(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = data.len() / dim;
    let mut order: Vec<usize> = (0..n).collect();
    let mut centroids: Vec<f64> = Vec::with_capacity(k * dim);
    let mut chosen = 0;
    // Partial Fisher-Yates, skipping frames that duplicate a chosen centroid.
    for i in 0..n {
        if chosen == k {
            break;
        }
        let j = rng.random_range(i..n);
        order.swap(i, j);
        let x = &data[order[i] * dim..(order[i] + 1) * dim];
        if centroids.chunks_exact(dim).any(|c| c == x) {
            continue;
        }
        centroids.extend_from_slice(x);
        chosen += 1;
    }
    if chosen < k {
        return Err(Error::InsufficientData(format!(
            "only {chosen} distinct frames available for k={k}"
        )));
    }
    Ok(centroids)
}

/// Mean of each cluster's members; clusters without members keep `NaN`
/// placeholders and are reported as empty.
fn update(data: &[f64], dim: usize, k: usize, labels: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (x, &l) in data.chunks_exact(dim).zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(x) {
            *s += v;
        }
    }
    let mut empty = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        let row = &mut sums[c * dim..(c + 1) * dim];
        if n == 0 {
            empty.push(c);
            row.fill(f64::NAN);
        } else {
            row.iter_mut().for_each(|s| *s /= n as f64);
        }
    }
    (sums, empty)
}

/// Moves each empty cluster onto the frame farthest from its own centroid.
fn repair_empty(data: &[f64], dim: usize, labels: &mut [usize], centroids: &mut [f64], empty: &[usize]) {
    if empty.is_empty() {
        return;
    }
    let mut residual: Vec<(usize, f64)> = data
        .chunks_exact(dim)
        .zip(labels.iter())
        .enumerate()
        .map(|(i, (x, &l))| {
            let c = &centroids[l * dim..(l + 1) * dim];
            let d = if c[0].is_nan() { 0.0 } else { sq_dist(c, x.iter().copied()) };
            (i, d)
        })
        .collect();
    // Largest residual first, lowest index on ties.
    residual.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (&c, &(i, _)) in empty.iter().zip(&residual) {
        centroids[c * dim..(c + 1) * dim].copy_from_slice(&data[i * dim..(i + 1) * dim]);
        labels[i] = c;
    }
}

struct LloydRun {
    centroids: Vec<f64>,
    labels: Vec<usize>,
    dists: Vec<f64>,
    inertia: f64,
    trace: Vec<f64>,
    iterations: usize,
}

fn lloyd(data: &[f64], dim: usize, mut centroids: Vec<f64>, cfg: &KMeansConfig) -> LloydRun {
    let (mut labels, mut dists) = assign(data, dim, &centroids);
    let mut inertia: f64 = dists.iter().sum();
    let mut trace = vec![inertia];
    let mut iterations = 0;
    while iterations < cfg.max_iterations && inertia > 0.0 {
        let (mut next, empty) = update(data, dim, cfg.k, &labels);
        repair_empty(data, dim, &mut labels, &mut next, &empty);
        centroids = next;
        iterations += 1;

        (labels, dists) = assign(data, dim, &centroids);
        let current: f64 = dists.iter().sum();
        debug_assert!(
            current <= inertia * (1.0 + 1e-12) + 1e-12,
            "inertia increased from {inertia} to {current}"
        );
        trace.push(current);
        let improvement = (inertia - current) / inertia;
        inertia = current;
        if improvement < cfg.rel_tolerance {
            break;
        }
    }
    LloydRun { centroids, labels, dists, inertia, trace, iterations }
}

/// Proposes moving the centroid whose removal costs least onto the frame
/// farthest from its centroid within the cluster of largest squared error.
fn propose_swap(data: &[f64], dim: usize, k: usize, run: &LloydRun) -> Option<Vec<f64>> {
    let centroids = &run.centroids;
    let removal: Vec<(usize, f64)> = data
        .par_chunks_exact(dim)
        .zip(run.labels.par_iter())
        .zip(run.dists.par_iter())
        .map(|((x, &l), &d)| {
            let second = centroids
                .chunks_exact(dim)
                .enumerate()
                .filter(|&(c, _)| c != l)
                .map(|(_, c)| sq_dist(c, x.iter().copied()))
                .fold(f64::INFINITY, f64::min);
            (l, second - d)
        })
        .collect();
    let mut cost = vec![0.0; k];
    let mut sse = vec![0.0; k];
    for (&(l, extra), &d) in removal.iter().zip(&run.dists) {
        cost[l] += extra;
        sse[l] += d;
    }
    let by_max = |v: &[f64]| (0..k).fold(0, |b, c| if v[c] > v[b] { c } else { b });
    let split = by_max(&sse);
    let drop = (0..k).filter(|&c| c != split).fold(None, |b: Option<usize>, c| match b {
        Some(b) if cost[b] <= cost[c] => Some(b),
        _ => Some(c),
    })?;
    if cost[drop] >= sse[split] {
        return None;
    }
    let far = run
        .labels
        .iter()
        .zip(&run.dists)
        .enumerate()
        .filter(|(_, (&l, _))| l == split)
        .fold(None, |b: Option<(usize, f64)>, (i, (_, &d))| match b {
            Some(b) if b.1 >= d => Some(b),
            _ => Some((i, d)),
        })?;
    if far.1 <= 0.0 {
        return None;
    }
    let mut next = centroids.clone();
    next[drop * dim..(drop + 1) * dim].copy_from_slice(&data[far.0 * dim..(far.0 + 1) * dim]);
    Some(next)
}

/// Trains a codebook with k-means++ seeding and Lloyd iterations, followed by
/// single-centroid relocations kept only when they lower the inertia.
pub fn train_codebook(corpus: &[FeatureMatrix], cfg: &KMeansConfig) -> Result<TrainedCodebook> {
    if cfg.k == 0 {
        return Err(Error::validation("k must be positive"));
    }
    if cfg.rel_tolerance.is_nan() || cfg.rel_tolerance < 0.0 {
        return Err(Error::validation(format!("rel_tolerance must be >= 0, got {}", cfg.rel_tolerance)));
    }
    let (data, dim) = flatten(corpus)?;
    let n = data.len() / dim;
    if n < cfg.k {
        return Err(Error::InsufficientData(format!("{n} frames for k={}", cfg.k)));
    }
    let mut rng = rng::stream(cfg.seed, SEED_TAG, 0);
    let init = match cfg.init {
        Init::KMeansPlusPlus => kmeanspp(&data, dim, cfg.k, &mut rng)?,
        Init::Random => random_init(&data, dim, cfg.k, &mut rng)?,
    };

    let mut best = lloyd(&data, dim, init, cfg);
    let mut trace = std::mem::take(&mut best.trace);
    let mut iterations = best.iterations;
    for _ in 0..cfg.max_swaps {
        if cfg.k < 2 || best.inertia <= 0.0 {
            break;
        }
        let Some(moved) = propose_swap(&data, dim, cfg.k, &best) else { break };
        let mut candidate = lloyd(&data, dim, moved, cfg);
        if candidate.inertia.is_nan() || candidate.inertia >= best.inertia * (1.0 - cfg.rel_tolerance) {
            break;
        }
        iterations += candidate.iterations;
        trace.push(candidate.inertia);
        candidate.trace.clear();
        best = candidate;
    }

    let codebook = Codebook::new(cfg.k, dim, best.centroids, best.inertia)?;
    Ok(TrainedCodebook { codebook, inertia_trace: trace, iterations })
}

/// Maps every frame to its nearest centroid.
pub fn encode_frames(m: &FeatureMatrix, cb: &Codebook) -> Result<UnitSequence> {
    check_dim(m, cb)?;
    let units = m
        .frames()
        .par_chunks_exact(m.dim())
        .map(|x| cb.nearest(x).0 as u32)
        .collect();
    UnitSequence::new(units, cb.k() as u32)
}

/// Sum over all frames of the squared distance to the nearest centroid.
pub fn inertia(corpus: &[FeatureMatrix], cb: &Codebook) -> Result<f64> {
    let mut total = 0.0;
    for m in corpus {
        check_dim(m, cb)?;
        let d: Vec<f64> = m.frames().par_chunks_exact(m.dim()).map(|x| cb.nearest(x).1).collect();
        total += d.iter().sum::<f64>();
    }
    Ok(total)
}

fn check_dim(m: &FeatureMatrix, cb: &Codebook) -> Result<()> {
    if m.dim() != cb.dim() {
        return Err(Error::validation(format!(
            "feature dimension {} does not match codebook dimension {}",
            m.dim(),
            cb.dim()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f32]) -> FeatureMatrix {
        FeatureMatrix::from_rows(&values.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn two_clusters_on_a_line() {
        let corpus = [column(&[0.0, 1.0, 10.0, 11.0])];
        let t = train_codebook(&corpus, &KMeansConfig::new(2)).unwrap();
        let mut c = t.codebook.centroids().to_vec();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.5, 10.5]);
        assert_eq!(t.codebook.training_inertia(), 1.0);
        assert_eq!(inertia(&corpus, &t.codebook).unwrap(), 1.0);
    }

    #[test]
    fn distinct_frames_each_get_a_centroid() {
        let corpus = [column(&[3.0, -1.0, 7.5]), column(&[2.0])];
        for init in [Init::KMeansPlusPlus, Init::Random] {
            let cfg = KMeansConfig { init, ..KMeansConfig::new(4) };
            assert_eq!(train_codebook(&corpus, &cfg).unwrap().codebook.training_inertia(), 0.0);
        }
    }

    #[test]
    fn fewer_frames_than_k() {
        let corpus = [column(&[0.0, 1.0])];
        assert!(matches!(
            train_codebook(&corpus, &KMeansConfig::new(3)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn fewer_distinct_frames_than_k() {
        let corpus = [column(&[1.0, 1.0, 1.0, 2.0])];
        for init in [Init::KMeansPlusPlus, Init::Random] {
            let cfg = KMeansConfig { init, ..KMeansConfig::new(3) };
            assert!(matches!(train_codebook(&corpus, &cfg), Err(Error::InsufficientData(_))));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let a = column(&[0.0, 1.0]);
        let b = FeatureMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            train_codebook(&[a.clone(), b.clone()], &KMeansConfig::new(1)),
            Err(Error::Validation(_))
        ));
        let cb = Codebook::new(1, 1, vec![0.0], 0.0).unwrap();
        assert!(matches!(encode_frames(&b, &cb), Err(Error::Validation(_))));
        assert!(matches!(inertia(&[b], &cb), Err(Error::Validation(_))));
    }

    #[test]
    fn exact_centroid_and_tie_break() {
        let cb = Codebook::new(5, 1, vec![-10.0, 0.0, 30.0, 7.0, 2.0], 0.0).unwrap();
        let m = column(&[7.0, 1.0]);
        assert_eq!(encode_frames(&m, &cb).unwrap().units(), &[3, 1]);
    }

    #[test]
    fn single_frame_inertia_is_squared_distance() {
        let cb = Codebook::new(2, 2, vec![0.0, 0.0, 10.0, 10.0], 0.0).unwrap();
        let m = FeatureMatrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(inertia(&[m], &cb).unwrap(), 25.0);
    }

    #[test]
    fn duplicate_centroids_rejected() {
        assert!(matches!(Codebook::new(2, 1, vec![1.0, 1.0], 0.0), Err(Error::Validation(_))));
    }

    #[test]
    fn repeated_training_is_bit_identical() {
        let values: Vec<f32> = (0..200).map(|i| ((i * 37) % 101) as f32 * 0.13).collect();
        let corpus = [column(&values)];
        let cfg = KMeansConfig { seed: 42, ..KMeansConfig::new(6) };
        let a = train_codebook(&corpus, &cfg).unwrap();
        let b = train_codebook(&corpus, &cfg).unwrap();
        assert!(a.codebook.bit_eq(&b.codebook));
        assert!(a.inertia_trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
