use super::dtw::{dtw_align, Distance};
use crate::dataio::{FeatureMatrix, PhonemeAlignment, ProsodyTrack, Stress};
use crate::error::{Error, Result};

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::validation(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!("pearson needs >= 2 pairs, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two parallel samples to be correlated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairedSamples {
    pub test: Vec<f64>,
    pub reference: Vec<f64>,
}

impl PairedSamples {
    pub fn push(&mut self, t: f64, r: f64) {
        self.test.push(t);
        self.reference.push(r);
    }

    pub fn extend(&mut self, other: &PairedSamples) {
        self.test.extend_from_slice(&other.test);
        self.reference.extend_from_slice(&other.reference);
    }

    pub fn len(&self) -> usize {
        self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.test.is_empty()
    }

    pub fn pearson(&self) -> Result<f64> {
        pearson(&self.test, &self.reference)
    }
}

/// Pitch and intensity values at aligned frame pairs where both sides are voiced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VoicedPairs {
    pub pitch: PairedSamples,
    pub intensity: PairedSamples,
}

fn check_track(m: &FeatureMatrix, p: &ProsodyTrack, side: &str) -> Result<()> {
    if m.num_frames() != p.num_frames() {
        return Err(Error::validation(format!(
            "{side}: features have {} frames but prosody has {}",
            m.num_frames(),
            p.num_frames()
        )));
    }
    Ok(())
}

/// DTW-aligns the two feature matrices, then keeps path steps at which both
/// frames are voiced.
pub fn voiced_pairs(
    test: (&FeatureMatrix, &ProsodyTrack),
    reference: (&FeatureMatrix, &ProsodyTrack),
    distance: Distance,
) -> Result<VoicedPairs> {
    check_track(test.0, test.1, "test")?;
    check_track(reference.0, reference.1, "reference")?;
    let (path, _) = dtw_align(test.0, reference.0, distance)?;
    let mut out = VoicedPairs::default();
    for &(i, j) in &path.steps {
        if test.1.is_voiced(i) && reference.1.is_voiced(j) {
            out.pitch.push(test.1.pitch_hz()[i], reference.1.pitch_hz()[j]);
            out.intensity.push(test.1.intensity_db()[i], reference.1.intensity_db()[j]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyCorrelation {
    /// Mean over usable references.
    pub pitch_corr: f64,
    pub intensity_corr: f64,
    /// References that contributed to the means.
    pub n_references: usize,
    /// References skipped because their voiced pair set was degenerate.
    pub n_skipped: usize,
}

/// Voiced-frame pitch and intensity correlation against each reference,
/// averaged over references. A reference whose pitch or intensity pairs are
/// degenerate (fewer than two pairs or zero variance) is skipped and counted.
pub fn prosody_correlation(
    test: (&FeatureMatrix, &ProsodyTrack),
    refs: &[(&FeatureMatrix, &ProsodyTrack)],
    distance: Distance,
) -> Result<ProsodyCorrelation> {
    if refs.is_empty() {
        return Err(Error::InsufficientData("no references".into()));
    }
    let (mut pitch, mut intensity, mut used, mut skipped) = (0.0, 0.0, 0, 0);
    for &r in refs {
        let pairs = voiced_pairs(test, r, distance)?;
        match (pairs.pitch.pearson(), pairs.intensity.pearson()) {
            (Ok(p), Ok(i)) => {
                pitch += p;
                intensity += i;
                used += 1;
            }
            (Err(Error::InsufficientData(_) | Error::DegenerateInput(_)), _)
            | (_, Err(Error::InsufficientData(_) | Error::DegenerateInput(_))) => skipped += 1,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::DegenerateInput(format!(
            "all {skipped} references have degenerate voiced pairs"
        )));
    }
    Ok(ProsodyCorrelation {
        pitch_corr: pitch / used as f64,
        intensity_corr: intensity / used as f64,
        n_references: used,
        n_skipped: skipped,
    })
}

/// Per-phoneme frame counts of two alignments with silences removed.
pub fn duration_pairs(test: &PhonemeAlignment, reference: &PhonemeAlignment) -> Result<PairedSamples> {
    let t: Vec<_> = test.speech_spans().collect();
    let r: Vec<_> = reference.speech_spans().collect();
    let labels = |v: &[&crate::dataio::PhonemeSpan]| v.iter().map(|s| s.label.clone()).collect::<Vec<_>>();
    if t.len() != r.len() || t.iter().zip(&r).any(|(a, b)| a.label != b.label) {
        return Err(Error::LabelMismatch(format!(
            "test phonemes {:?} differ from reference {:?}",
            labels(&t),
            labels(&r)
        )));
    }
    let mut out = PairedSamples::default();
    for (a, b) in t.iter().zip(&r) {
        out.push(a.frames() as f64, b.frames() as f64);
    }
    Ok(out)
}

/// Pearson correlation of phoneme durations between two alignments with
/// identical non-silence label sequences.
pub fn duration_correlation(test: &PhonemeAlignment, reference: &PhonemeAlignment) -> Result<f64> {
    let pairs = duration_pairs(test, reference)?;
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!("{} phonemes after removing silence", pairs.len())));
    }
    pairs.pearson()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VowelDurationRatio {
    pub stressed_ms: f64,
    pub unstressed_ms: f64,
    pub ratio: f64,
}

/// Mean stressed and unstressed vowel durations in milliseconds and their
/// ratio, over every non-silence vowel span of the corpus.
pub fn vowel_duration_ratio(alignments: &[PhonemeAlignment], frame_shift_ms: f64) -> Result<VowelDurationRatio> {
    if !(frame_shift_ms > 0.0 && frame_shift_ms.is_finite()) {
        return Err(Error::validation(format!("frame shift must be positive, got {frame_shift_ms}")));
    }
    // Integer accumulation keeps the result independent of corpus order.
    let (mut s_frames, mut s_count, mut u_frames, mut u_count) = (0u64, 0u64, 0u64, 0u64);
    for span in alignments.iter().flat_map(|a| a.speech_spans()).filter(|s| s.is_vowel) {
        match span.stress {
            Stress::Stressed => {
                s_frames += span.frames() as u64;
                s_count += 1;
            }
            Stress::Unstressed => {
                u_frames += span.frames() as u64;
                u_count += 1;
            }
            Stress::NotApplicable => {}
        }
    }
    if s_count == 0 || u_count == 0 {
        return Err(Error::InsufficientData(format!(
            "{s_count} stressed and {u_count} unstressed vowels"
        )));
    }
    let stressed_ms = s_frames as f64 * frame_shift_ms / s_count as f64;
    let unstressed_ms = u_frames as f64 * frame_shift_ms / u_count as f64;
    Ok(VowelDurationRatio { stressed_ms, unstressed_ms, ratio: stressed_ms / unstressed_ms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::PhonemeSpan;
    use proptest::prelude::*;

    fn span(label: &str, start: u32, end: u32, stress: Stress, vowel: bool) -> PhonemeSpan {
        PhonemeSpan { label: label.into(), start_frame: start, end_frame: end, stress, is_vowel: vowel, is_voiced: vowel }
    }

    fn consecutive(items: &[(&str, u32, Stress, bool)]) -> PhonemeAlignment {
        let mut t = 0;
        let spans = items
            .iter()
            .map(|&(l, d, s, v)| {
                let sp = span(l, t, t + d, s, v);
                t += d;
                sp
            })
            .collect();
        PhonemeAlignment::new(spans).unwrap()
    }

    #[test]
    fn pearson_fixtures() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 9.0 / 84f64.sqrt()).abs() < 1e-12);
        assert!(matches!(pearson(&[1.0], &[2.0]), Err(Error::InsufficientData(_))));
        assert!(matches!(pearson(&[1.0, 1.0], &[2.0, 3.0]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn duration_correlation_fixtures() {
        use Stress::NotApplicable as N;
        let a = consecutive(&[("sil", 4, N, false), ("AE", 10, N, true), ("T", 5, N, false), ("AH", 8, N, true)]);
        let b = consecutive(&[("AE", 8, N, true), ("sp", 2, N, false), ("T", 4, N, false), ("AH", 9, N, true)]);
        assert_eq!(duration_correlation(&a, &a).unwrap(), 1.0);
        // Centered durations (7/3, -8/3, 1/3) and (1, -3, 2).
        let expected = 11.0 / ((114.0f64 / 9.0).sqrt() * 14f64.sqrt());
        assert!((duration_correlation(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.826).abs() < 1e-3);

        let x = consecutive(&[("AE", 3, N, true), ("T", 2, N, false)]);
        let y = consecutive(&[("AE", 3, N, true), ("D", 2, N, false)]);
        assert!(matches!(duration_correlation(&x, &y), Err(Error::LabelMismatch(_))));
        let one = consecutive(&[("AE", 3, N, true)]);
        assert!(matches!(duration_correlation(&one, &one), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn vowel_ratio_fixture() {
        use Stress::*;
        let a = consecutive(&[
            ("AE", 10, Stressed, true),
            ("T", 3, NotApplicable, false),
            ("AH", 5, Unstressed, true),
            ("sil", 30, NotApplicable, false),
            ("IY", 12, Stressed, true),
            ("AX", 7, Unstressed, true),
            ("ER", 40, NotApplicable, true),
        ]);
        let r = vowel_duration_ratio(&[a], 10.0).unwrap();
        assert!((r.stressed_ms - 110.0).abs() < 1e-9);
        assert!((r.unstressed_ms - 60.0).abs() < 1e-9);
        assert!((r.ratio - 11.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn isochronous_vowels_give_unit_ratio() {
        use Stress::*;
        let a = consecutive(&[("AE", 6, Stressed, true), ("AH", 6, Unstressed, true), ("IY", 6, Unstressed, true)]);
        assert_eq!(vowel_duration_ratio(&[a], 20.0).unwrap().ratio, 1.0);
    }

    #[test]
    fn vowel_ratio_needs_both_classes() {
        let a = consecutive(&[("AE", 6, Stress::Stressed, true)]);
        assert!(matches!(vowel_duration_ratio(&[a], 10.0), Err(Error::InsufficientData(_))));
    }

    fn track(pitch: &[f64], intensity: &[f64]) -> ProsodyTrack {
        ProsodyTrack::new(pitch.to_vec(), intensity.to_vec()).unwrap()
    }

    #[test]
    fn prosody_self_correlation() {
        let f = FeatureMatrix::from_rows(&[vec![1.0, 0.0], vec![0.7, 0.3], vec![0.2, 0.9], vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let p = track(&[110.0, 0.0, 130.0, 125.0, 150.0], &[60.0, 50.0, 64.0, 61.0, 70.0]);
        let r = prosody_correlation((&f, &p), &[(&f, &p)], Distance::Cosine).unwrap();
        assert_eq!((r.pitch_corr, r.intensity_corr, r.n_references, r.n_skipped), (1.0, 1.0, 1, 0));
    }

    #[test]
    fn unvoiced_reference_is_skipped() {
        let f = FeatureMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let p = track(&[100.0, 120.0, 150.0], &[60.0, 62.0, 58.0]);
        let silent = track(&[0.0; 3], &[60.0, 62.0, 58.0]);
        assert!(matches!(
            prosody_correlation((&f, &p), &[(&f, &silent)], Distance::Euclidean),
            Err(Error::DegenerateInput(_))
        ));
        let r = prosody_correlation((&f, &p), &[(&f, &silent), (&f, &p)], Distance::Euclidean).unwrap();
        assert_eq!((r.n_references, r.n_skipped), (1, 1));
    }

    #[test]
    fn frame_count_mismatch() {
        let f = FeatureMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let p = track(&[100.0], &[60.0]);
        assert!(matches!(voiced_pairs((&f, &p), (&f, &p), Distance::Euclidean), Err(Error::Validation(_))));
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(
            x in proptest::collection::vec(-100.0f64..100.0, 3..30),
            noise in proptest::collection::vec(-50.0f64..50.0, 30),
            a in 0.1f64..10.0,
            b in -100.0f64..100.0,
        ) {
            let y: Vec<f64> = x.iter().zip(&noise).map(|(x, n)| 0.5 * x + n).collect();
            let Ok(r) = pearson(&x, &y) else { return Ok(()) };
            let xa: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let xn: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&xa, &y).unwrap() - r).abs() < 1e-12);
            prop_assert!((pearson(&xn, &y).unwrap() + r).abs() < 1e-12);
        }

        #[test]
        fn vowel_ratio_invariant_to_order_and_split(
            durations in proptest::collection::vec((1u32..40, any::<bool>()), 2..40),
            cut in any::<prop::sample::Index>(),
        ) {
            let mut durations = durations;
            durations[0].1 = true;
            durations[1].1 = false;
            let mut t = 0;
            let spans: Vec<PhonemeSpan> = durations.iter().map(|&(d, s)| {
                let sp = span("V", t, t + d, if s { Stress::Stressed } else { Stress::Unstressed }, true);
                t += d;
                sp
            }).collect();
            let whole = PhonemeAlignment::new(spans.clone()).unwrap();
            let at = cut.index(spans.len());
            let parts = [
                PhonemeAlignment::new(spans[at..].to_vec()).unwrap(),
                PhonemeAlignment::new(spans[..at].to_vec()).unwrap(),
            ];
            let a = vowel_duration_ratio(&[whole], 20.0).unwrap();
            let b = vowel_duration_ratio(&parts, 20.0).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
