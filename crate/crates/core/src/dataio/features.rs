use std::io::{Read, Write};

use super::binary::{checked_len, read_f32, read_f32_vec, read_u32, ArtifactHeader};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"FMAT";
pub const FEATURE_VERSION: u32 = 1;

/// 50 Hz frame rate, the usual rate of HuBERT-style SSL features.
pub const DEFAULT_FRAME_SHIFT_MS: f32 = 20.0;

/// Per-utterance `T x D` frame features, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    num_frames: usize,
    dim: usize,
    frames: Vec<f32>,
    frame_shift_ms: f32,
}

impl FeatureMatrix {
    pub fn new(num_frames: usize, dim: usize, frames: Vec<f32>, frame_shift_ms: f32) -> Result<Self> {
        if num_frames == 0 || dim == 0 {
            return Err(Error::validation(format!(
                "feature matrix must be non-empty, got {num_frames}x{dim}"
            )));
        }
        if frames.len() != num_frames * dim {
            return Err(Error::validation(format!(
                "feature payload has {} values, expected {num_frames}x{dim}",
                frames.len()
            )));
        }
        if let Some(i) = frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite feature value at frame {}, dim {}",
                i / dim,
                i % dim
            )));
        }
        if !(frame_shift_ms.is_finite() && frame_shift_ms > 0.0) {
            return Err(Error::validation(format!("frame shift must be positive, got {frame_shift_ms}")));
        }
        Ok(FeatureMatrix { num_frames, dim, frames, frame_shift_ms })
    }

    /// Builds a matrix from rows with the default frame shift.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::validation("ragged feature rows"));
        }
        let frames = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), dim, frames, DEFAULT_FRAME_SHIFT_MS)
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_shift_ms(&self) -> f32 {
        self.frame_shift_ms
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.frames.chunks_exact(self.dim)
    }

    /// Equality of every stored bit, including the sign of zeros.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.num_frames == other.num_frames
            && self.dim == other.dim
            && self.frame_shift_ms.to_bits() == other.frame_shift_ms.to_bits()
            && self.frames.iter().zip(&other.frames).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Writes `FMAT` v1: header, `T: u32`, `D: u32`, `frame_shift_ms: f32`, then
/// `T*D` row-major `f32` values. Returns the number of bytes written.
pub fn store_feature_matrix<W: Write + ?Sized>(m: &FeatureMatrix, sink: &mut W) -> Result<usize> {
    let mut n = ArtifactHeader { magic: FEATURE_MAGIC, version: FEATURE_VERSION }.write(sink)?;
    sink.write_all(&(m.num_frames as u32).to_le_bytes())?;
    sink.write_all(&(m.dim as u32).to_le_bytes())?;
    sink.write_all(&m.frame_shift_ms.to_le_bytes())?;
    n += 12;
    for v in &m.frames {
        sink.write_all(&v.to_le_bytes())?;
    }
    Ok(n + 4 * m.frames.len())
}

pub fn load_feature_matrix<R: Read + ?Sized>(source: &mut R) -> Result<FeatureMatrix> {
    ArtifactHeader::read_expect(source, FEATURE_MAGIC, FEATURE_VERSION)?;
    let t = read_u32(source, "frame count")?;
    let d = read_u32(source, "feature dimension")?;
    let shift = read_f32(source, "frame shift")?;
    let n = checked_len(t, d, "feature matrix")?;
    let frames = read_f32_vec(source, n, "feature payload")?;
    FeatureMatrix::new(t as usize, d as usize, frames, shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hex(s: &str) -> Vec<u8> {
        s.split_whitespace().map(|b| u8::from_str_radix(b, 16).unwrap()).collect()
    }

    #[test]
    fn minimal_matrix_is_24_bytes() {
        let m = FeatureMatrix::from_rows(&[vec![0.0]]).unwrap();
        let mut buf = Vec::new();
        assert_eq!(store_feature_matrix(&m, &mut buf).unwrap(), 24);
        assert_eq!(buf.len(), 24);
    }

    #[test]
    fn three_by_two_matches_hex_fixture() {
        let m = FeatureMatrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 0.0], vec![3.0, 0.25]]).unwrap();
        let mut buf = Vec::new();
        assert_eq!(store_feature_matrix(&m, &mut buf).unwrap(), 44);
        let expected = hex(
            "46 4d 41 54  01 00 00 00  03 00 00 00  02 00 00 00  00 00 a0 41
             00 00 80 3f  00 00 00 c0
             00 00 00 3f  00 00 00 00
             00 00 40 40  00 00 80 3e",
        );
        assert_eq!(buf, expected);
        let back = load_feature_matrix(&mut expected.as_slice()).unwrap();
        assert!(back.bit_eq(&m));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let m = FeatureMatrix::from_rows(&[vec![1.0]]).unwrap();
        let mut buf = Vec::new();
        store_feature_matrix(&m, &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(load_feature_matrix(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_version_is_format_error() {
        let m = FeatureMatrix::from_rows(&[vec![1.0]]).unwrap();
        let mut buf = Vec::new();
        store_feature_matrix(&m, &mut buf).unwrap();
        buf[4] = 2;
        assert!(matches!(load_feature_matrix(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn short_payload_is_truncation_error() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"FMAT");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&20.0f32.to_le_bytes());
        for v in [1.0f32, 2.0, 3.0] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(load_feature_matrix(&mut buf.as_slice()), Err(Error::Truncation(_))));
    }

    #[test]
    fn nan_payload_is_validation_error() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"FMAT");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&20.0f32.to_le_bytes());
        buf.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(load_feature_matrix(&mut buf.as_slice()), Err(Error::Validation(_))));
    }

    #[test]
    fn huge_declared_size_fails_without_allocating() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"FMAT");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&u32::MAX.to_le_bytes());
        buf.extend_from_slice(&u32::MAX.to_le_bytes());
        buf.extend_from_slice(&20.0f32.to_le_bytes());
        assert!(matches!(load_feature_matrix(&mut buf.as_slice()), Err(Error::Truncation(_))));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            t in 1usize..20,
            d in 1usize..6,
            seed in proptest::collection::vec(-1e6f32..1e6, 120),
            shift in 1.0f32..50.0,
        ) {
            let frames: Vec<f32> = (0..t * d).map(|i| seed[i % seed.len()]).collect();
            let m = FeatureMatrix::new(t, d, frames, shift).unwrap();
            let mut buf = Vec::new();
            let n = store_feature_matrix(&m, &mut buf).unwrap();
            prop_assert_eq!(n, 20 + 4 * t * d);
            let back = load_feature_matrix(&mut buf.as_slice()).unwrap();
            prop_assert!(back.bit_eq(&m));
        }
    }
}
