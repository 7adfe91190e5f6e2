use std::io::{self, Read, Write};

use crate::error::{Error, Result};

/// Magic tag and version that open every binary artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArtifactHeader {
    pub magic: [u8; 4],
    pub version: u32,
}

impl ArtifactHeader {
    pub const SIZE: usize = 8;

    pub fn write<W: Write + ?Sized>(&self, w: &mut W) -> Result<usize> {
        w.write_all(&self.magic)?;
        w.write_all(&self.version.to_le_bytes())?;
        Ok(Self::SIZE)
    }

    /// Reads a header and checks it against the expected tag and version.
    pub fn read_expect<R: Read + ?Sized>(r: &mut R, magic: [u8; 4], version: u32) -> Result<Self> {
        let mut found = [0u8; 4];
        read_exact(r, &mut found, "magic")?;
        if found != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&found),
                String::from_utf8_lossy(&magic)
            )));
        }
        let v = read_u32(r, "version")?;
        if v != version {
            return Err(Error::Format(format!(
                "unsupported {} version {v}, expected {version}",
                String::from_utf8_lossy(&magic)
            )));
        }
        Ok(ArtifactHeader { magic, version: v })
    }
}

pub(crate) fn read_exact<R: Read + ?Sized>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncation(format!("stream ended while reading {what}")),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read + ?Sized>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read + ?Sized>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f32<R: Read + ?Sized>(r: &mut R, what: &str) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(f32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read + ?Sized>(r: &mut R, what: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}

// Payload readers grow their buffers incrementally so a corrupt length field
// cannot trigger a huge up-front allocation.
const CHUNK: usize = 1 << 16;

pub(crate) fn read_f32_vec<R: Read + ?Sized>(r: &mut R, n: usize, what: &str) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(n.min(CHUNK));
    let mut buf = vec![0u8; 4 * n.min(CHUNK)];
    let mut remaining = n;
    while remaining > 0 {
        let m = remaining.min(CHUNK);
        let bytes = &mut buf[..4 * m];
        read_exact(r, bytes, what)?;
        out.extend(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
        remaining -= m;
    }
    Ok(out)
}

pub(crate) fn read_f64_vec<R: Read + ?Sized>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n.min(CHUNK));
    let mut buf = vec![0u8; 8 * n.min(CHUNK)];
    let mut remaining = n;
    while remaining > 0 {
        let m = remaining.min(CHUNK);
        let bytes = &mut buf[..8 * m];
        read_exact(r, bytes, what)?;
        out.extend(bytes.chunks_exact(8).map(|c| {
            f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
        }));
        remaining -= m;
    }
    Ok(out)
}

pub(crate) fn write_f64s<W: Write + ?Sized>(w: &mut W, xs: &[f64]) -> Result<usize> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(8 * xs.len())
}

pub(crate) fn checked_len(a: u32, b: u32, what: &str) -> Result<usize> {
    (a as usize)
        .checked_mul(b as usize)
        .ok_or_else(|| Error::Format(format!("{what} size overflows: {a} x {b}")))
}
