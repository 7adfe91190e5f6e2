//! Artifact types and their on-disk formats.
//!
//! Binary artifacts (`FMAT`, `KMCB`, `DPRD`) share one header layout: a
//! 4-byte magic tag followed by a little-endian `u32` version. All integers
//! are fixed-width little-endian and all reals are IEEE-754 little-endian,
//! so files are byte-identical across platforms. Human-edited artifacts
//! (unit sequences, alignments, prosody tracks) are plain text.

mod binary;
mod codebook;
mod features;
mod model;
mod tsv;
mod units;

pub use binary::ArtifactHeader;
pub use codebook::{load_codebook, store_codebook, CODEBOOK_MAGIC, CODEBOOK_VERSION};
pub use features::{
    load_feature_matrix, store_feature_matrix, FeatureMatrix, DEFAULT_FRAME_SHIFT_MS,
    FEATURE_MAGIC, FEATURE_VERSION,
};
pub use model::{load_model, store_model, MODEL_MAGIC, MODEL_VERSION};
pub use tsv::{
    is_silence_label, load_alignment, load_prosody, store_alignment, store_prosody,
    PhonemeAlignment, PhonemeSpan, ProsodyTrack, Stress, SILENCE_LABELS,
};
pub use units::{
    load_unit_sequence, store_unit_sequence, Run, RunLengthSequence, UnitSequence,
};

pub use crate::tokenizer::Codebook;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::Result;

/// Reads an artifact from a file path with a buffered reader.
pub fn read_path<T>(
    path: impl AsRef<Path>,
    load: impl FnOnce(&mut BufReader<File>) -> Result<T>,
) -> Result<T> {
    let mut r = BufReader::new(File::open(path)?);
    load(&mut r)
}

/// Writes an artifact to a file path, flushing before returning.
pub fn write_path(
    path: impl AsRef<Path>,
    store: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    store(&mut w)?;
    w.flush()?;
    Ok(())
}
