//! VOL1 container: a fixed 29-byte little-endian header followed by the
//! row-major payload.
//!
//! ```text
//! "VOL1" | dtype u8 (0 = f32, 1 = u8 mask) | D,H,W u32 x3 | spacing f32 x3 | payload
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Dims3, Mask3D, Result, Volume3D, VolumeError, UNIT_SPACING};

const MAGIC: &[u8; 4] = b"VOL1";
const HEADER_LEN: usize = 4 + 1 + 12 + 12;
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_MASK: u8 = 1;

/// Decoded contents of a VOL1 file.
#[derive(Debug, Clone, PartialEq)]
pub enum VolFile {
    Volume(Volume3D),
    Mask(Mask3D, [f32; 3]),
}

impl VolFile {
    pub fn dims(&self) -> Dims3 {
        match self {
            VolFile::Volume(v) => v.dims(),
            VolFile::Mask(m, _) => m.dims(),
        }
    }

    pub fn dtype(&self) -> u8 {
        match self {
            VolFile::Volume(_) => DTYPE_F32,
            VolFile::Mask(..) => DTYPE_MASK,
        }
    }

    /// Binary view: masks pass through, intensity volumes are thresholded at 0.5.
    pub fn into_mask(self) -> Mask3D {
        match self {
            VolFile::Volume(v) => Mask3D::from_threshold(&v, 0.5),
            VolFile::Mask(m, _) => m,
        }
    }
}

fn header(dtype: u8, dims: Dims3, spacing: [f32; 3]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    out.push(dtype);
    for n in dims.as_array() {
        let n = u32::try_from(n).map_err(|_| VolumeError::DimsOverflow(dims.to_string()))?;
        out.extend_from_slice(&n.to_le_bytes());
    }
    for s in spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_volume(v: &Volume3D) -> Result<Vec<u8>> {
    let mut out = header(DTYPE_F32, v.dims(), v.spacing())?;
    out.reserve(v.data().len() * 4);
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_mask(m: &Mask3D, spacing: [f32; 3]) -> Result<Vec<u8>> {
    let mut out = header(DTYPE_MASK, m.dims(), spacing)?;
    out.extend_from_slice(m.data());
    Ok(out)
}

/// Parses a complete VOL1 byte buffer.
pub fn decode(bytes: &[u8]) -> Result<VolFile> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(VolumeError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(VolumeError::TruncatedHeader(bytes.len()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(VolumeError::BadMagic(magic));
    }
    let dtype = bytes[4];
    let elem = match dtype {
        DTYPE_F32 => 4usize,
        DTYPE_MASK => 1usize,
        other => return Err(VolumeError::UnknownDtype(other)),
    };
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let dims = Dims3::new(u32_at(5) as usize, u32_at(9) as usize, u32_at(13) as usize);
    let spacing = [f32_at(17), f32_at(21), f32_at(25)];
    let count = dims.validate()?;
    let expected = count
        .checked_mul(elem)
        .ok_or_else(|| VolumeError::DimsOverflow(dims.to_string()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(VolumeError::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(VolumeError::TrailingBytes(payload.len() - expected));
    }
    match dtype {
        DTYPE_F32 => {
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(VolFile::Volume(Volume3D::with_spacing(dims, data, spacing)?))
        }
        _ => Ok(VolFile::Mask(Mask3D::new(dims, payload.to_vec())?, spacing)),
    }
}

pub fn read_vol1(path: impl AsRef<Path>) -> Result<VolFile> {
    decode(&fs::read(path)?)
}

pub fn write_vol1(file: &VolFile, path: impl AsRef<Path>) -> Result<()> {
    let bytes = match file {
        VolFile::Volume(v) => encode_volume(v)?,
        VolFile::Mask(m, spacing) => encode_mask(m, *spacing)?,
    };
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Loads an intensity volume (dtype 0).
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    match read_vol1(path)? {
        VolFile::Volume(v) => Ok(v),
        VolFile::Mask(..) => Err(VolumeError::WrongDtype {
            expected: DTYPE_F32,
            found: DTYPE_MASK,
        }),
    }
}

pub fn save_volume(v: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_volume(v)?)?;
    Ok(())
}

/// Loads a binary mask (dtype 1).
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask3D> {
    match read_vol1(path)? {
        VolFile::Mask(m, _) => Ok(m),
        VolFile::Volume(_) => Err(VolumeError::WrongDtype {
            expected: DTYPE_MASK,
            found: DTYPE_F32,
        }),
    }
}

pub fn save_mask(m: &Mask3D, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_mask(m, UNIT_SPACING)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ascending(dims: Dims3) -> Volume3D {
        Volume3D::new(dims, (0..dims.len()).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let v = ascending(Dims3::cube(4));
        let bytes = encode_volume(&v).unwrap();
        assert_eq!(bytes.len(), 29 + 64 * 4);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, VolFile::Volume(v.clone()));
        assert_eq!(encode_volume(&v).unwrap(), bytes);
    }

    #[test]
    fn short_payload_is_truncation() {
        let v = ascending(Dims3::cube(2));
        let mut bytes = encode_volume(&v).unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            decode(&bytes),
            Err(VolumeError::TruncatedPayload {
                expected: 32,
                actual: 28
            })
        ));
    }

    #[test]
    fn header_errors_are_distinct() {
        let v = ascending(Dims3::cube(2));
        let good = encode_volume(&v).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(decode(&bad).unwrap_err().code(), "bad-magic");

        let mut bad = good.clone();
        bad[4] = 9;
        assert_eq!(decode(&bad).unwrap_err().code(), "unknown-dtype");

        assert_eq!(decode(&good[..10]).unwrap_err().code(), "truncated-header");

        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(decode(&bad).unwrap_err().code(), "trailing-bytes");

        // D = H = W = u32::MAX overflows the voxel count on every platform
        let mut bad = good.clone();
        for o in [5, 9, 13] {
            bad[o..o + 4].copy_from_slice(&u32::MAX.to_le_bytes());
        }
        assert_eq!(decode(&bad).unwrap_err().code(), "dims-overflow");

        let mut bad = good;
        bad[5..9].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(decode(&bad).unwrap_err().code(), "zero-dim");
    }

    #[test]
    fn mask_round_trip_and_dtype_checks() {
        let m = Mask3D::from_fn(Dims3::new(2, 3, 4), |d, h, w| (d + h + w) % 2 == 0).unwrap();
        let bytes = encode_mask(&m, [1.0, 0.5, 0.5]).unwrap();
        match decode(&bytes).unwrap() {
            VolFile::Mask(back, spacing) => {
                assert_eq!(back, m);
                assert_eq!(spacing, [1.0, 0.5, 0.5]);
            }
            other => panic!("expected mask, got {other:?}"),
        }
        let mut bad = bytes;
        let last = bad.len() - 1;
        bad[last] = 3;
        assert_eq!(decode(&bad).unwrap_err().code(), "non-binary");
    }
}
