use std::fmt;
use std::str::FromStr;

use crate::dataio::FeatureMatrix;
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logs.
const KL_FLOOR: f64 = 1e-10;
/// Allowed deviation of a posterior row sum from 1.
const ROW_SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Distance {
    /// `1 - cos(a, b)`; zero vectors are at distance 0 from each other and
    /// 1 from anything else.
    #[default]
    Cosine,
    Euclidean,
    /// `KL(p||q) + KL(q||p)` over probability rows.
    SymmetricKl,
}

impl Distance {
    pub const ALL: [Distance; 3] = [Distance::Cosine, Distance::Euclidean, Distance::SymmetricKl];

    pub fn name(self) -> &'static str {
        match self {
            Distance::Cosine => "cosine",
            Distance::Euclidean => "euclidean",
            Distance::SymmetricKl => "symmetric_kl",
        }
    }

    pub fn frame(self, a: &[f32], b: &[f32]) -> f64 {
        if a == b {
            return 0.0;
        }
        match self {
            Distance::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (&x, &y) in a.iter().zip(b) {
                    let (x, y) = (x as f64, y as f64);
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                if na == 0.0 && nb == 0.0 {
                    0.0
                } else if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0)
                }
            }
            Distance::Euclidean => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                .sum::<f64>()
                .sqrt(),
            Distance::SymmetricKl => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let (p, q) = ((x as f64).max(KL_FLOOR), (y as f64).max(KL_FLOOR));
                    (p - q) * (p.ln() - q.ln())
                })
                .sum(),
        }
    }

    fn check(self, m: &FeatureMatrix) -> Result<()> {
        if self != Distance::SymmetricKl {
            return Ok(());
        }
        for (t, row) in m.rows().enumerate() {
            if row.iter().any(|&v| v < 0.0) {
                return Err(Error::validation(format!("frame {t}: negative probability")));
            }
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::validation(format!("frame {t}: probabilities sum to {sum}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Distance::Cosine),
            "euclidean" => Ok(Distance::Euclidean),
            "symmetric_kl" | "symmetric-kl" | "kl" => Ok(Distance::SymmetricKl),
            other => Err(Error::validation(format!(
                "unknown distance {other:?}, expected cosine, euclidean or symmetric_kl"
            ))),
        }
    }
}

/// Monotone alignment between frames `i` of one sequence and `j` of another.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    pub steps: Vec<(usize, usize)>,
}

impl AlignmentPath {
    /// Boundary and step-size conditions for sequences of lengths `t1`, `t2`.
    pub fn is_valid(&self, t1: usize, t2: usize) -> bool {
        let (Some(&first), Some(&last)) = (self.steps.first(), self.steps.last()) else {
            return false;
        };
        first == (0, 0)
            && t1 > 0
            && t2 > 0
            && last == (t1 - 1, t2 - 1)
            && self.steps.windows(2).all(|w| {
                let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
                di <= 1 && dj <= 1 && di + dj > 0
            })
    }
}

#[derive(Clone, Copy)]
enum Step {
    Start,
    Diagonal,
    Down,
    Right,
}

/// Minimal-cost monotone alignment over steps (1,1), (1,0), (0,1), all
/// unweighted. Equal-cost predecessors are preferred in that order.
pub fn dtw_align(a: &FeatureMatrix, b: &FeatureMatrix, distance: Distance) -> Result<(AlignmentPath, f64)> {
    if a.dim() != b.dim() {
        return Err(Error::validation(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    distance.check(a)?;
    distance.check(b)?;
    let (n, m) = (a.num_frames(), b.num_frames());
    let mut cost = vec![f64::INFINITY; n * m];
    let mut from = vec![Step::Start; n * m];
    for i in 0..n {
        let ra = a.row(i);
        for j in 0..m {
            let d = distance.frame(ra, b.row(j));
            let idx = i * m + j;
            if i == 0 && j == 0 {
                cost[idx] = d;
                continue;
            }
            let mut best = (f64::INFINITY, Step::Start);
            if i > 0 && j > 0 {
                best = (cost[idx - m - 1], Step::Diagonal);
            }
            if i > 0 && cost[idx - m] < best.0 {
                best = (cost[idx - m], Step::Down);
            }
            if j > 0 && cost[idx - 1] < best.0 {
                best = (cost[idx - 1], Step::Right);
            }
            cost[idx] = best.0 + d;
            from[idx] = best.1;
        }
    }

    let mut steps = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    loop {
        steps.push((i, j));
        match from[i * m + j] {
            Step::Start => break,
            Step::Diagonal => {
                i -= 1;
                j -= 1;
            }
            Step::Down => i -= 1,
            Step::Right => j -= 1,
        }
    }
    steps.reverse();
    Ok((AlignmentPath { steps }, cost[n * m - 1]))
}
