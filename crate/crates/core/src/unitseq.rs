//! Run-length factorization of unit sequences and unit-duration statistics.
//!
//! A unit's duration is the number of consecutive frames carrying it. Runs
//! never cross utterance boundaries.

use crate::dataio::{Run, RunLengthSequence, UnitSequence};
use crate::error::{Error, Result};

pub fn run_length_encode(s: &UnitSequence) -> RunLengthSequence {
    let mut runs: Vec<Run> = Vec::new();
    for &u in s.units() {
        match runs.last_mut() {
            Some(r) if r.unit == u => r.duration += 1,
            _ => runs.push(Run { unit: u, duration: 1 }),
        }
    }
    RunLengthSequence::from_runs_unchecked(runs, s.codebook_size())
}

pub fn run_length_decode(r: &RunLengthSequence) -> Result<UnitSequence> {
    // Re-validate: the invariant is what makes decode the inverse of encode.
    RunLengthSequence::new(r.runs().to_vec(), r.codebook_size())?;
    let mut units = Vec::with_capacity(r.total_frames() as usize);
    for run in r.runs() {
        units.extend(std::iter::repeat_n(run.unit, run.duration as usize));
    }
    UnitSequence::new(units, r.codebook_size())
}

/// Collapses consecutive repeats, discarding durations.
pub fn deduplicate(s: &UnitSequence) -> UnitSequence {
    let mut units = s.units().to_vec();
    units.dedup();
    UnitSequence::new(units, s.codebook_size()).expect("deduplication keeps ids and non-emptiness")
}

/// Pooled mean and population standard deviation of run durations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationStats {
    pub mean: f64,
    pub sd: f64,
    pub count: u64,
}

impl DurationStats {
    /// Stats over an arbitrary multiset of durations.
    pub fn from_durations(durations: impl IntoIterator<Item = u32>) -> Result<Self> {
        let mut count = 0u64;
        let mut sum = 0u128;
        let mut sum_sq = 0u128;
        for d in durations {
            if d == 0 {
                return Err(Error::validation("durations must be positive"));
            }
            count += 1;
            sum += d as u128;
            sum_sq += (d as u128) * (d as u128);
        }
        if count == 0 {
            return Err(Error::validation("no durations to summarize"));
        }
        // Integer sums keep the result independent of summation order.
        let n = count as f64;
        let mean = sum as f64 / n;
        let var_num = (count as u128 * sum_sq - sum * sum) as f64;
        let sd = (var_num / (n * n)).sqrt();
        Ok(DurationStats { mean, sd, count })
    }

    /// Header matching [`DurationStats::tsv_row`].
    pub const TSV_HEADER: &'static str = "mean\tsd\tcount";

    pub fn tsv_row(&self) -> String {
        format!("{}\t{}\t{}", self.mean, self.sd, self.count)
    }
}

/// Pools run durations across all utterances of a corpus.
pub fn duration_stats(corpus: &[UnitSequence]) -> Result<DurationStats> {
    if corpus.is_empty() {
        return Err(Error::validation("empty corpus"));
    }
    DurationStats::from_durations(corpus.iter().flat_map(|s| {
        let r = run_length_encode(s);
        r.durations().collect::<Vec<_>>()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(u: &[u32], k: u32) -> UnitSequence {
        UnitSequence::new(u.to_vec(), k).unwrap()
    }

    fn runs(pairs: &[(u32, u32)]) -> Vec<Run> {
        pairs.iter().map(|&(unit, duration)| Run { unit, duration }).collect()
    }

    #[test]
    fn encode_examples() {
        let r = run_length_encode(&seq(&[2, 2, 1, 2, 3, 3], 4));
        assert_eq!(r.runs(), runs(&[(2, 2), (1, 1), (2, 1), (3, 2)]).as_slice());
        assert_eq!(r.durations().collect::<Vec<_>>(), vec![2, 1, 1, 2]);
        assert_eq!(run_length_encode(&seq(&[7, 7, 7, 7], 8)).runs(), runs(&[(7, 4)]).as_slice());
        assert_eq!(
            run_length_encode(&seq(&[0, 1, 0, 1], 2)).runs(),
            runs(&[(0, 1), (1, 1), (0, 1), (1, 1)]).as_slice()
        );
    }

    #[test]
    fn decode_examples() {
        let r = RunLengthSequence::new(runs(&[(2, 2), (1, 1), (2, 1), (3, 2)]), 4).unwrap();
        assert_eq!(run_length_decode(&r).unwrap().units(), &[2, 2, 1, 2, 3, 3]);
        let r = RunLengthSequence::new(runs(&[(5, 1)]), 6).unwrap();
        assert_eq!(run_length_decode(&r).unwrap().units(), &[5]);
        let bad = RunLengthSequence::from_runs_unchecked(runs(&[(1, 2), (1, 3)]), 4);
        assert!(matches!(run_length_decode(&bad), Err(Error::Validation(_))));
        let zero = RunLengthSequence::from_runs_unchecked(runs(&[(1, 0)]), 4);
        assert!(matches!(run_length_decode(&zero), Err(Error::Validation(_))));
    }

    #[test]
    fn dedup_examples() {
        assert_eq!(deduplicate(&seq(&[2, 2, 1, 2, 3, 3], 4)).units(), &[2, 1, 2, 3]);
        assert_eq!(deduplicate(&seq(&[9], 10)).units(), &[9]);
        assert_eq!(deduplicate(&seq(&[4, 4, 4], 5)).units(), &[4]);
    }

    #[test]
    fn stats_examples() {
        let s = duration_stats(&[seq(&[2, 2, 1, 2, 3, 3], 4)]).unwrap();
        assert_eq!((s.mean, s.sd, s.count), (1.5, 0.5, 4));
        assert_eq!(s.tsv_row(), "1.5\t0.5\t4");
        let constant = [seq(&[3; 6], 4), seq(&[1; 6], 4)];
        let s = duration_stats(&constant).unwrap();
        assert_eq!((s.mean, s.sd, s.count), (6.0, 0.0, 2));
        assert!(matches!(duration_stats(&[]), Err(Error::Validation(_))));
    }

    #[test]
    fn runs_do_not_merge_across_utterances() {
        let s = duration_stats(&[seq(&[1, 1], 2), seq(&[1, 1, 1], 2)]).unwrap();
        assert_eq!(s.count, 2);
        assert_eq!(s.mean, 2.5);
    }

    fn arb_seq() -> impl Strategy<Value = UnitSequence> {
        (prop_oneof![Just(2u32), Just(3), Just(50)], 1usize..300).prop_flat_map(|(k, n)| {
            proptest::collection::vec(0..k, n).prop_map(move |u| UnitSequence::new(u, k).unwrap())
        })
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(s in arb_seq()) {
            let r = run_length_encode(&s);
            prop_assert_eq!(r.total_frames(), s.len() as u64);
            prop_assert!(r.runs().windows(2).all(|w| w[0].unit != w[1].unit));
            prop_assert_eq!(run_length_decode(&r).unwrap(), s.clone());
            let d = deduplicate(&s);
            let ru: Vec<u32> = r.units().collect();
            prop_assert_eq!(d.units(), ru.as_slice());
        }

        #[test]
        fn stats_ignore_utterance_order(mut corpus in proptest::collection::vec(arb_seq(), 1..8)) {
            let a = duration_stats(&corpus).unwrap();
            corpus.reverse();
            let b = duration_stats(&corpus).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
