use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Frame-wise unit ids drawn from a codebook of `codebook_size` entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UnitSequence {
    units: Vec<u32>,
    codebook_size: u32,
}

impl UnitSequence {
    pub fn new(units: Vec<u32>, codebook_size: u32) -> Result<Self> {
        if codebook_size == 0 {
            return Err(Error::validation("codebook size must be positive"));
        }
        if units.is_empty() {
            return Err(Error::validation("unit sequence must not be empty"));
        }
        if let Some((i, u)) = units.iter().enumerate().find(|(_, &u)| u >= codebook_size) {
            return Err(Error::validation(format!(
                "unit id {u} at position {i} is out of range for K={codebook_size}"
            )));
        }
        Ok(UnitSequence { units, codebook_size })
    }

    pub fn units(&self) -> &[u32] {
        &self.units
    }

    pub fn codebook_size(&self) -> u32 {
        self.codebook_size
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn into_units(self) -> Vec<u32> {
        self.units
    }
}

/// One maximal run of a repeated unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Run {
    pub unit: u32,
    pub duration: u32,
}

/// `(unit, duration)` factorization of a [`UnitSequence`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RunLengthSequence {
    runs: Vec<Run>,
    codebook_size: u32,
}

impl RunLengthSequence {
    /// Validates that runs are non-empty, have positive durations and that
    /// neighbouring runs carry distinct units.
    pub fn new(runs: Vec<Run>, codebook_size: u32) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::validation("run-length sequence must not be empty"));
        }
        for (i, r) in runs.iter().enumerate() {
            if r.duration == 0 {
                return Err(Error::validation(format!("run {i} has zero duration")));
            }
            if r.unit >= codebook_size {
                return Err(Error::validation(format!(
                    "run {i} unit {} is out of range for K={codebook_size}",
                    r.unit
                )));
            }
        }
        if let Some(i) = runs.windows(2).position(|w| w[0].unit == w[1].unit) {
            return Err(Error::validation(format!(
                "runs {i} and {} share unit {}",
                i + 1,
                runs[i].unit
            )));
        }
        Ok(RunLengthSequence { runs, codebook_size })
    }

    pub(crate) fn from_runs_unchecked(runs: Vec<Run>, codebook_size: u32) -> Self {
        RunLengthSequence { runs, codebook_size }
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn codebook_size(&self) -> u32 {
        self.codebook_size
    }

    pub fn durations(&self) -> impl Iterator<Item = u32> + '_ {
        self.runs.iter().map(|r| r.duration)
    }

    pub fn units(&self) -> impl Iterator<Item = u32> + '_ {
        self.runs.iter().map(|r| r.unit)
    }

    /// Length of the frame-wise expansion.
    pub fn total_frames(&self) -> u64 {
        self.runs.iter().map(|r| r.duration as u64).sum()
    }
}

/// Parses `K <codebook_size>` followed by whitespace-separated unit ids.
pub fn load_unit_sequence<R: BufRead + ?Sized>(source: &mut R) -> Result<UnitSequence> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut tokens = text.split_whitespace();
    match tokens.next() {
        Some("K") => {}
        Some(other) => return Err(Error::Parse(format!("expected header 'K', found {other:?}"))),
        None => return Err(Error::Parse("empty unit sequence file".into())),
    }
    let k = tokens
        .next()
        .ok_or_else(|| Error::Parse("missing codebook size after 'K'".into()))?;
    let k: u32 = k.parse().map_err(|_| Error::Parse(format!("invalid codebook size {k:?}")))?;
    let units = tokens
        .map(|t| t.parse::<u32>().map_err(|_| Error::Parse(format!("invalid unit id {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    UnitSequence::new(units, k)
}

pub fn store_unit_sequence<W: Write + ?Sized>(s: &UnitSequence, sink: &mut W) -> Result<()> {
    writeln!(sink, "K {}", s.codebook_size)?;
    let mut line = String::with_capacity(s.units.len() * 4);
    for (i, u) in s.units.iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        line.push_str(&u.to_string());
    }
    writeln!(sink, "{line}")?;
    Ok(())
}
