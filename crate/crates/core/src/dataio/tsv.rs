use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Labels treated as silence or pause by the evaluation metrics.
pub const SILENCE_LABELS: [&str; 3] = ["sil", "sp", ""];

pub fn is_silence_label(label: &str) -> bool {
    SILENCE_LABELS.contains(&label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stress {
    Stressed,
    Unstressed,
    NotApplicable,
}

impl Stress {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "S" => Ok(Stress::Stressed),
            "U" => Ok(Stress::Unstressed),
            "-" => Ok(Stress::NotApplicable),
            other => Err(Error::Parse(format!("invalid stress mark {other:?}, expected S, U or -"))),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Stress::Stressed => "S",
            Stress::Unstressed => "U",
            Stress::NotApplicable => "-",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PhonemeSpan {
    pub label: String,
    pub start_frame: u32,
    /// Exclusive.
    pub end_frame: u32,
    pub stress: Stress,
    pub is_vowel: bool,
    pub is_voiced: bool,
}

impl PhonemeSpan {
    pub fn frames(&self) -> u32 {
        self.end_frame - self.start_frame
    }

    pub fn is_silence(&self) -> bool {
        is_silence_label(&self.label)
    }
}

/// Sorted, non-overlapping phoneme spans of one utterance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhonemeAlignment {
    spans: Vec<PhonemeSpan>,
}

impl PhonemeAlignment {
    pub fn new(spans: Vec<PhonemeSpan>) -> Result<Self> {
        for (i, s) in spans.iter().enumerate() {
            if s.start_frame >= s.end_frame {
                return Err(Error::validation(format!(
                    "span {i} ({}) has start {} >= end {}",
                    s.label, s.start_frame, s.end_frame
                )));
            }
        }
        for (i, w) in spans.windows(2).enumerate() {
            if w[1].start_frame < w[0].end_frame {
                return Err(Error::validation(format!(
                    "span {} [{}, {}) overlaps or precedes span {i} [{}, {})",
                    i + 1,
                    w[1].start_frame,
                    w[1].end_frame,
                    w[0].start_frame,
                    w[0].end_frame
                )));
            }
        }
        Ok(PhonemeAlignment { spans })
    }

    pub fn spans(&self) -> &[PhonemeSpan] {
        &self.spans
    }

    /// Spans whose label is not a silence/pause label.
    pub fn speech_spans(&self) -> impl Iterator<Item = &PhonemeSpan> {
        self.spans.iter().filter(|s| !s.is_silence())
    }
}

fn flag(s: &str, col: &str) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse(format!("invalid {col} flag {other:?}, expected 0 or 1"))),
    }
}

fn data_lines<R: BufRead + ?Sized>(source: &mut R) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        out.push((i + 1, line.to_string()));
    }
    Ok(out)
}

/// Reads alignment TSV rows `label, start, end, stress(S|U|-), vowel(0|1), voiced(0|1)`.
///
/// Blank lines and `#` comments are skipped. An empty label (a row starting
/// with a tab) is kept as silence.
pub fn load_alignment<R: BufRead + ?Sized>(source: &mut R) -> Result<PhonemeAlignment> {
    let mut spans = Vec::new();
    for (lineno, line) in data_lines(source)? {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(Error::Parse(format!("line {lineno}: expected 6 columns, found {}", cols.len())));
        }
        let frame = |s: &str, what: &str| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| Error::Parse(format!("line {lineno}: invalid {what} {s:?}")))
        };
        spans.push(PhonemeSpan {
            label: cols[0].trim().to_string(),
            start_frame: frame(cols[1], "start frame")?,
            end_frame: frame(cols[2], "end frame")?,
            stress: Stress::parse(cols[3].trim())?,
            is_vowel: flag(cols[4].trim(), "vowel")?,
            is_voiced: flag(cols[5].trim(), "voiced")?,
        });
    }
    PhonemeAlignment::new(spans)
}

pub fn store_alignment<W: Write + ?Sized>(a: &PhonemeAlignment, sink: &mut W) -> Result<()> {
    for s in &a.spans {
        writeln!(
            sink,
            "{}\t{}\t{}\t{}\t{}\t{}",
            s.label,
            s.start_frame,
            s.end_frame,
            s.stress.as_str(),
            u8::from(s.is_vowel),
            u8::from(s.is_voiced)
        )?;
    }
    Ok(())
}

/// Frame-level pitch (Hz, 0 = unvoiced) and intensity (dB).
#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyTrack {
    pitch_hz: Vec<f64>,
    intensity_db: Vec<f64>,
}

impl ProsodyTrack {
    pub const MIN_PITCH_HZ: f64 = 20.0;
    pub const MAX_PITCH_HZ: f64 = 2000.0;

    pub fn new(pitch_hz: Vec<f64>, intensity_db: Vec<f64>) -> Result<Self> {
        if pitch_hz.is_empty() {
            return Err(Error::validation("prosody track must have at least one frame"));
        }
        if pitch_hz.len() != intensity_db.len() {
            return Err(Error::validation(format!(
                "pitch has {} frames but intensity has {}",
                pitch_hz.len(),
                intensity_db.len()
            )));
        }
        for (t, &p) in pitch_hz.iter().enumerate() {
            let ok = p == 0.0 || (Self::MIN_PITCH_HZ..=Self::MAX_PITCH_HZ).contains(&p);
            if !ok {
                return Err(Error::validation(format!(
                    "frame {t}: pitch {p} Hz is neither 0 nor within [20, 2000]"
                )));
            }
        }
        if let Some(t) = intensity_db.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("frame {t}: non-finite intensity")));
        }
        Ok(ProsodyTrack { pitch_hz, intensity_db })
    }

    pub fn num_frames(&self) -> usize {
        self.pitch_hz.len()
    }

    pub fn pitch_hz(&self) -> &[f64] {
        &self.pitch_hz
    }

    pub fn intensity_db(&self) -> &[f64] {
        &self.intensity_db
    }

    pub fn is_voiced(&self, t: usize) -> bool {
        self.pitch_hz[t] > 0.0
    }
}

/// Reads one `pitch_hz<TAB>intensity_db` row per frame.
pub fn load_prosody<R: BufRead + ?Sized>(source: &mut R) -> Result<ProsodyTrack> {
    let mut pitch = Vec::new();
    let mut intensity = Vec::new();
    for (lineno, line) in data_lines(source)? {
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 2 {
            return Err(Error::Parse(format!("line {lineno}: expected 2 columns, found {}", cols.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {lineno}: invalid number {s:?}")))
        };
        pitch.push(num(cols[0])?);
        intensity.push(num(cols[1])?);
    }
    ProsodyTrack::new(pitch, intensity)
}

pub fn store_prosody<W: Write + ?Sized>(p: &ProsodyTrack, sink: &mut W) -> Result<()> {
    for (f0, db) in p.pitch_hz.iter().zip(&p.intensity_db) {
        writeln!(sink, "{f0:?}\t{db:?}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_stressed_vowel_row() {
        let a = load_alignment(&mut "AE\t0\t10\tS\t1\t1".as_bytes()).unwrap();
        let s = &a.spans()[0];
        assert_eq!(a.spans().len(), 1);
        assert_eq!(s.label, "AE");
        assert_eq!(s.frames(), 10);
        assert_eq!(s.stress, Stress::Stressed);
        assert!(s.is_vowel && s.is_voiced);
    }

    #[test]
    fn overlapping_spans_rejected() {
        let text = "A\t0\t5\t-\t0\t1\nB\t3\t8\t-\t0\t1\n";
        assert!(matches!(load_alignment(&mut text.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn empty_span_rejected() {
        assert!(matches!(load_alignment(&mut "A\t4\t4\t-\t0\t1".as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn silence_labels_kept_on_load() {
        let text = "\t0\t3\t-\t0\t0\nsil\t3\t4\t-\t0\t0\nAH\t4\t9\tU\t1\t1\nsp\t9\t10\t-\t0\t0\n";
        let a = load_alignment(&mut text.as_bytes()).unwrap();
        assert_eq!(a.spans().len(), 4);
        assert_eq!(a.spans()[0].label, "");
        assert_eq!(a.speech_spans().count(), 1);
    }

    #[test]
    fn bad_flags_are_parse_errors() {
        assert!(matches!(load_alignment(&mut "A\t0\t1\tX\t0\t1".as_bytes()), Err(Error::Parse(_))));
        assert!(matches!(load_alignment(&mut "A\t0\t1\tS\t2\t1".as_bytes()), Err(Error::Parse(_))));
        assert!(matches!(load_alignment(&mut "A\t0\t1\tS\t1".as_bytes()), Err(Error::Parse(_))));
    }

    #[test]
    fn alignment_roundtrip() {
        let text = "\t0\t3\t-\t0\t0\nAE\t3\t13\tS\t1\t1\nT\t13\t15\t-\t0\t0\n";
        let a = load_alignment(&mut text.as_bytes()).unwrap();
        let mut buf = Vec::new();
        store_alignment(&a, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn two_row_prosody() {
        let p = load_prosody(&mut "120.0\t60.0\n0.0\t55.0\n".as_bytes()).unwrap();
        assert_eq!(p.pitch_hz(), &[120.0, 0.0]);
        assert_eq!(p.intensity_db(), &[60.0, 55.0]);
        assert!(p.is_voiced(0) && !p.is_voiced(1));
    }

    #[test]
    fn prosody_rejects_bad_pitch() {
        assert!(matches!(load_prosody(&mut "-5.0\t60.0".as_bytes()), Err(Error::Validation(_))));
        assert!(matches!(load_prosody(&mut "10.0\t60.0".as_bytes()), Err(Error::Validation(_))));
        assert!(matches!(load_prosody(&mut "".as_bytes()), Err(Error::Validation(_))));
        assert!(matches!(load_prosody(&mut "100\tinf".as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn prosody_roundtrip_is_exact() {
        let p = ProsodyTrack::new(vec![0.0, 123.456789, 2000.0], vec![-3.25, 61.0000001, 1e-7]).unwrap();
        let mut buf = Vec::new();
        store_prosody(&p, &mut buf).unwrap();
        assert_eq!(load_prosody(&mut buf.as_slice()).unwrap(), p);
    }
}
