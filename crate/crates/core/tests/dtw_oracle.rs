use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unitdur::eval::{dtw_align, Distance};
use unitdur::FeatureMatrix;

fn random_rows(r: &mut ChaCha8Rng, n: usize, dim: usize, distance: Distance) -> FeatureMatrix {
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|_| {
            let v: Vec<f32> = (0..dim).map(|_| r.random_range(0.01..1.0)).collect();
            match distance {
                Distance::SymmetricKl => {
                    let s: f32 = v.iter().sum();
                    v.iter().map(|x| x / s).collect()
                }
                _ => v.iter().map(|x| x * 2.0 - 1.0).collect(),
            }
        })
        .collect();
    FeatureMatrix::from_rows(&rows).unwrap()
}

/// Minimum over every monotone path of the summed frame distances.
fn exhaustive(a: &FeatureMatrix, b: &FeatureMatrix, distance: Distance) -> f64 {
    fn walk(a: &FeatureMatrix, b: &FeatureMatrix, d: Distance, i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + d.frame(a.row(i), b.row(j));
        let (n, m) = (a.num_frames(), b.num_frames());
        if i + 1 == n && j + 1 == m {
            *best = best.min(acc);
            return;
        }
        if i + 1 < n && j + 1 < m {
            walk(a, b, d, i + 1, j + 1, acc, best);
        }
        if i + 1 < n {
            walk(a, b, d, i + 1, j, acc, best);
        }
        if j + 1 < m {
            walk(a, b, d, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, distance, 0, 0, 0.0, &mut best);
    best
}

#[test]
fn matches_exhaustive_enumeration() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    for distance in Distance::ALL {
        for _ in 0..200 {
            let dim = r.random_range(1..5);
            let (n, m) = (r.random_range(1..9), r.random_range(1..9));
            let a = random_rows(&mut r, n, dim, distance);
            let b = random_rows(&mut r, m, dim, distance);
            let (path, cost) = dtw_align(&a, &b, distance).unwrap();
            assert!(path.is_valid(a.num_frames(), b.num_frames()));
            let along: f64 = path.steps.iter().map(|&(i, j)| distance.frame(a.row(i), b.row(j))).sum();
            assert!((along - cost).abs() <= 1e-9 * cost.max(1.0));
            let oracle = exhaustive(&a, &b, distance);
            assert!((oracle - cost).abs() <= 1e-9 * oracle.max(1.0), "{distance}: {cost} vs {oracle}");
        }
    }
}

#[test]
fn self_alignment_is_diagonal() {
    let mut r = ChaCha8Rng::seed_from_u64(12);
    for distance in Distance::ALL {
        for _ in 0..20 {
            let n = r.random_range(1..30);
            let a = random_rows(&mut r, n, 3, distance);
            let (path, cost) = dtw_align(&a, &a, distance).unwrap();
            assert!(cost <= 1e-9);
            assert_eq!(path.steps, (0..a.num_frames()).map(|t| (t, t)).collect::<Vec<_>>());
        }
    }
}
