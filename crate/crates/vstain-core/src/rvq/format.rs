//! Bit-exact token-pyramid wire format.
//!
//! Layout: magic `"RVQP"`, version `u8`, scale count `u8`, per-scale
//! `(h: u16, w: u16)`, codebook hash `u64`, then per-scale indices as
//! `u16`, all little-endian, row-major. Token storage as `u16` caps the
//! vocabulary at 65536.

use ndarray::Array2;

use super::CodecError;
use crate::domain::{ScaleSchedule, TokenPyramid};

pub const PYRAMID_MAGIC: [u8; 4] = *b"RVQP";
pub const PYRAMID_VERSION: u8 = 1;

pub fn serialize_pyramid(pyramid: &TokenPyramid) -> Result<Vec<u8>, CodecError> {
    if pyramid.max_index() as usize > u16::MAX as usize {
        return Err(CodecError::VocabTooLarge(pyramid.max_index() as usize + 1));
    }
    let mut out = Vec::with_capacity(
        4 + 1 + 1 + 4 * pyramid.num_scales() + 8 + 2 * pyramid.schedule().total_positions(),
    );
    out.extend_from_slice(&PYRAMID_MAGIC);
    out.push(PYRAMID_VERSION);
    out.push(pyramid.num_scales() as u8);
    for &(h, w) in pyramid.schedule().scales() {
        out.extend_from_slice(&(h as u16).to_le_bytes());
        out.extend_from_slice(&(w as u16).to_le_bytes());
    }
    out.extend_from_slice(&pyramid.codebook_hash().to_le_bytes());
    for grid in pyramid.indices() {
        for &idx in grid.iter() {
            out.extend_from_slice(&(idx as u16).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.bytes.len() {
            return Err(CodecError::Truncated {
                needed: self.pos + n - self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn deserialize_pyramid(bytes: &[u8]) -> Result<TokenPyramid, CodecError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != PYRAMID_MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = r.u8()?;
    if version != PYRAMID_VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let k = r.u8()? as usize;
    let mut scales = Vec::with_capacity(k);
    for _ in 0..k {
        let h = r.u16()? as usize;
        let w = r.u16()? as usize;
        if h == 0 || w == 0 {
            return Err(CodecError::InvalidScaleDims { h, w });
        }
        scales.push((h, w));
    }
    let hash = r.u64()?;
    let mut grids = Vec::with_capacity(k);
    for &(h, w) in &scales {
        let mut grid = Array2::<u32>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                grid[[y, x]] = r.u16()? as u32;
            }
        }
        grids.push(grid);
    }
    if r.pos != bytes.len() {
        return Err(CodecError::TrailingBytes(bytes.len() - r.pos));
    }
    // Vocabulary bounds can only be checked against a codebook at
    // decode time; the format itself stores u16 tokens.
    TokenPyramid::new(ScaleSchedule::new(scales), grids, hash, u16::MAX as usize + 1)
        .map_err(|_| CodecError::Truncated { needed: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pyramid(rng: &mut ChaCha8Rng) -> TokenPyramid {
        let k = rng.random_range(1..=4usize);
        let mut scales = Vec::new();
        let mut side = rng.random_range(1..=3usize);
        for _ in 0..k {
            scales.push((side, side));
            side += rng.random_range(0..=2usize);
        }
        let vocab = rng.random_range(2..=64usize);
        let grids = scales
            .iter()
            .map(|&(h, w)| Array2::from_shape_fn((h, w), |_| rng.random_range(0..vocab) as u32))
            .collect();
        TokenPyramid::new(ScaleSchedule::new(scales), grids, rng.random(), vocab).unwrap()
    }

    #[test]
    fn round_trip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let p = random_pyramid(&mut rng);
            let bytes = serialize_pyramid(&p).unwrap();
            let q = deserialize_pyramid(&bytes).unwrap();
            assert_eq!(p, q);
            // Byte stream itself round-trips bit-exactly too.
            assert_eq!(bytes, serialize_pyramid(&q).unwrap());
        }
    }

    #[test]
    fn payload_length_matches_header_layout() {
        // K=1 with an 8x8 grid: 4 magic + 1 version + 1 K + 4 dims
        // + 8 hash + 128 index bytes.
        let grid = Array2::<u32>::zeros((8, 8));
        let p = TokenPyramid::new(ScaleSchedule::new(vec![(8, 8)]), vec![grid], 7, 16).unwrap();
        let bytes = serialize_pyramid(&p).unwrap();
        assert_eq!(bytes.len(), 4 + 1 + 1 + 4 + 8 + 128);
    }

    #[test]
    fn bad_magic_rejected() {
        let grid = Array2::<u32>::zeros((2, 2));
        let p = TokenPyramid::new(ScaleSchedule::new(vec![(2, 2)]), vec![grid], 0, 4).unwrap();
        let mut bytes = serialize_pyramid(&p).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            deserialize_pyramid(&bytes),
            Err(CodecError::BadMagic)
        ));
    }

    #[test]
    fn unsupported_version_rejected() {
        let grid = Array2::<u32>::zeros((2, 2));
        let p = TokenPyramid::new(ScaleSchedule::new(vec![(2, 2)]), vec![grid], 0, 4).unwrap();
        let mut bytes = serialize_pyramid(&p).unwrap();
        bytes[4] = 99;
        assert!(matches!(
            deserialize_pyramid(&bytes),
            Err(CodecError::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn truncation_rejected() {
        let grid = Array2::<u32>::zeros((2, 2));
        let p = TokenPyramid::new(ScaleSchedule::new(vec![(2, 2)]), vec![grid], 0, 4).unwrap();
        let bytes = serialize_pyramid(&p).unwrap();
        for cut in 1..bytes.len() {
            assert!(
                matches!(
                    deserialize_pyramid(&bytes[..cut]),
                    Err(CodecError::Truncated { .. })
                ),
                "prefix of {cut} bytes must be reported truncated"
            );
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let grid = Array2::<u32>::zeros((2, 2));
        let p = TokenPyramid::new(ScaleSchedule::new(vec![(2, 2)]), vec![grid], 0, 4).unwrap();
        let mut bytes = serialize_pyramid(&p).unwrap();
        bytes.push(0);
        assert!(matches!(
            deserialize_pyramid(&bytes),
            Err(CodecError::TrailingBytes(1))
        ));
    }

    #[test]
    fn oversized_vocabulary_cannot_serialize() {
        let mut grid = Array2::<u32>::zeros((1, 1));
        grid[[0, 0]] = 70_000;
        let p = TokenPyramid::new(ScaleSchedule::new(vec![(1, 1)]), vec![grid], 0, 80_000).unwrap();
        assert!(matches!(
            serialize_pyramid(&p),
            Err(CodecError::VocabTooLarge(_))
        ));
    }
}
