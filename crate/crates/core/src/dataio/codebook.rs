use std::io::{Read, Write};

use super::binary::{checked_len, read_f64, read_f64_vec, read_u32, write_f64s, ArtifactHeader};
use crate::error::Result;
use crate::tokenizer::Codebook;

pub const CODEBOOK_MAGIC: [u8; 4] = *b"KMCB";
pub const CODEBOOK_VERSION: u32 = 1;

/// Writes `KMCB` v1: header, `K: u32`, `D: u32`, `training_inertia: f64`,
/// then `K*D` row-major `f64` centroids.
pub fn store_codebook<W: Write + ?Sized>(cb: &Codebook, sink: &mut W) -> Result<usize> {
    let mut n = ArtifactHeader { magic: CODEBOOK_MAGIC, version: CODEBOOK_VERSION }.write(sink)?;
    sink.write_all(&(cb.k() as u32).to_le_bytes())?;
    sink.write_all(&(cb.dim() as u32).to_le_bytes())?;
    sink.write_all(&cb.training_inertia().to_le_bytes())?;
    n += 16;
    n += write_f64s(sink, cb.centroids())?;
    Ok(n)
}

pub fn load_codebook<R: Read + ?Sized>(source: &mut R) -> Result<Codebook> {
    ArtifactHeader::read_expect(source, CODEBOOK_MAGIC, CODEBOOK_VERSION)?;
    let k = read_u32(source, "cluster count")?;
    let d = read_u32(source, "codebook dimension")?;
    let inertia = read_f64(source, "training inertia")?;
    let n = checked_len(k, d, "codebook")?;
    let centroids = read_f64_vec(source, n, "centroids")?;
    Codebook::new(k as usize, d as usize, centroids, inertia)
}
