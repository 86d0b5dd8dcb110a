//! Dense volumetric types, slice access, and intensity preprocessing.
//!
//! Voxels are stored row-major over `(d, h, w)` with `w` varying fastest.
//! Axial slices are planes of constant `d`.

mod io;
mod preprocess;

pub use io::{
    decode, encode_mask, encode_volume, load_mask, load_volume, read_vol1, save_mask, save_volume, write_vol1, VolFile,
    DTYPE_F32, DTYPE_MASK,
};
pub use preprocess::{crop_to_nonzero_then_fit, minmax_normalize, nonzero_fit_plan, FitPlan};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("dimensions must be positive, got {0}")]
    ZeroDim(Dims3),
    #[error("voxel count of {0} overflows")]
    DimsOverflow(String),
    #[error("data length {actual} does not match dims {dims} ({expected} voxels)")]
    LengthMismatch {
        dims: Dims3,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite intensity {value} at voxel {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("mask value {value} at voxel {index} is not 0 or 1")]
    NonBinary { index: usize, value: u8 },
    #[error("slice index {index} out of range for depth {depth}")]
    SliceOutOfRange { index: usize, depth: usize },
    #[error("slice {index} has dims {found:?}, expected {expected:?}")]
    InconsistentSlice {
        index: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("cannot stack an empty slice list")]
    NoSlices,
    #[error("dims mismatch: {0} vs {1}")]
    DimsMismatch(Dims3, Dims3),
    #[error("bad magic {0:?}, expected \"VOL1\"")]
    BadMagic([u8; 4]),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("expected dtype {expected}, file has {found}")]
    WrongDtype { expected: u8, found: u8 },
    #[error("header truncated: {0} bytes, need 29")]
    TruncatedHeader(usize),
    #[error("payload truncated: {actual} bytes, need {expected}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("spacing must be finite and positive, got {0:?}")]
    BadSpacing([f32; 3]),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl VolumeError {
    /// Stable short code, used for CLI exit reporting.
    pub fn code(&self) -> &'static str {
        match self {
            VolumeError::ZeroDim(_) => "zero-dim",
            VolumeError::DimsOverflow(_) => "dims-overflow",
            VolumeError::LengthMismatch { .. } => "length-mismatch",
            VolumeError::NonFinite { .. } => "non-finite",
            VolumeError::NonBinary { .. } => "non-binary",
            VolumeError::SliceOutOfRange { .. } => "slice-out-of-range",
            VolumeError::InconsistentSlice { .. } => "inconsistent-slice",
            VolumeError::NoSlices => "no-slices",
            VolumeError::DimsMismatch(..) => "dims-mismatch",
            VolumeError::BadMagic(_) => "bad-magic",
            VolumeError::UnknownDtype(_) => "unknown-dtype",
            VolumeError::WrongDtype { .. } => "wrong-dtype",
            VolumeError::TruncatedHeader(_) => "truncated-header",
            VolumeError::TruncatedPayload { .. } => "truncated-payload",
            VolumeError::TrailingBytes(_) => "trailing-bytes",
            VolumeError::BadSpacing(_) => "bad-spacing",
            VolumeError::Io(_) => "io",
        }
    }
}

pub type Result<T, E = VolumeError> = std::result::Result<T, E>;

/// Extent of a volume as `(depth, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims3 {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims3 {
    pub const fn new(d: usize, h: usize, w: usize) -> Self {
        Dims3 { d, h, w }
    }

    pub const fn cube(n: usize) -> Self {
        Dims3 { d: n, h: n, w: n }
    }

    /// Voxel count; `None` on overflow.
    pub fn checked_len(&self) -> Option<usize> {
        self.d.checked_mul(self.h)?.checked_mul(self.w)
    }

    pub fn len(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_extent(&self) -> usize {
        self.d.min(self.h).min(self.w)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.d, self.h, self.w]
    }

    #[inline]
    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.h + h) * self.w + w
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let w = index % self.w;
        let rest = index / self.w;
        [rest / self.h, rest % self.h, w]
    }

    pub(crate) fn validate(&self) -> Result<usize> {
        if self.d == 0 || self.h == 0 || self.w == 0 {
            return Err(VolumeError::ZeroDim(*self));
        }
        self.checked_len()
            .ok_or_else(|| VolumeError::DimsOverflow(self.to_string()))
    }
}

impl std::fmt::Display for Dims3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.d, self.h, self.w)
    }
}

impl std::str::FromStr for Dims3 {
    type Err = String;

    /// Parses `D,H,W` (also accepts `x` as separator).
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split([',', 'x']).map(str::trim).collect();
        if parts.len() != 3 {
            return Err(format!("expected D,H,W, got {s:?}"));
        }
        let mut out = [0usize; 3];
        for (slot, part) in out.iter_mut().zip(&parts) {
            *slot = part.parse().map_err(|e| format!("bad dimension {part:?}: {e}"))?;
        }
        Ok(Dims3::new(out[0], out[1], out[2]))
    }
}

pub const UNIT_SPACING: [f32; 3] = [1.0, 1.0, 1.0];

/// Scalar intensity field.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: Dims3,
    data: Vec<f32>,
    spacing: [f32; 3],
}

impl Volume3D {
    pub fn new(dims: Dims3, data: Vec<f32>) -> Result<Self> {
        Self::with_spacing(dims, data, UNIT_SPACING)
    }

    pub fn with_spacing(dims: Dims3, data: Vec<f32>, spacing: [f32; 3]) -> Result<Self> {
        let expected = dims.validate()?;
        if data.len() != expected {
            return Err(VolumeError::LengthMismatch {
                dims,
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(VolumeError::NonFinite { index, value });
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(VolumeError::BadSpacing(spacing));
        }
        Ok(Volume3D { dims, data, spacing })
    }

    pub fn zeros(dims: Dims3) -> Result<Self> {
        let n = dims.validate()?;
        Ok(Volume3D {
            dims,
            data: vec![0.0; n],
            spacing: UNIT_SPACING,
        })
    }

    pub fn from_fn(dims: Dims3, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        dims.validate()?;
        let mut data = Vec::with_capacity(dims.len());
        for d in 0..dims.d {
            for h in 0..dims.h {
                for w in 0..dims.w {
                    data.push(f(d, h, w));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn get(&self, d: usize, h: usize, w: usize) -> f32 {
        self.data[self.dims.index(d, h, w)]
    }

    /// Axial plane `d = j` as a row-major `H*W` slice.
    pub fn slice_data(&self, j: usize) -> Result<&[f32]> {
        if j >= self.dims.d {
            return Err(VolumeError::SliceOutOfRange {
                index: j,
                depth: self.dims.d,
            });
        }
        let plane = self.dims.h * self.dims.w;
        Ok(&self.data[j * plane..(j + 1) * plane])
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Binary label field; every byte is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask3D {
    dims: Dims3,
    data: Vec<u8>,
}

impl Mask3D {
    pub fn new(dims: Dims3, data: Vec<u8>) -> Result<Self> {
        let expected = dims.validate()?;
        if data.len() != expected {
            return Err(VolumeError::LengthMismatch {
                dims,
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(VolumeError::NonBinary { index, value });
        }
        Ok(Mask3D { dims, data })
    }

    pub fn empty(dims: Dims3) -> Result<Self> {
        let n = dims.validate()?;
        Ok(Mask3D { dims, data: vec![0; n] })
    }

    pub fn from_fn(dims: Dims3, mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        dims.validate()?;
        let mut data = Vec::with_capacity(dims.len());
        for d in 0..dims.d {
            for h in 0..dims.h {
                for w in 0..dims.w {
                    data.push(f(d, h, w) as u8);
                }
            }
        }
        Ok(Mask3D { dims, data })
    }

    /// Foreground wherever `v > threshold`.
    pub fn from_threshold(v: &Volume3D, threshold: f32) -> Self {
        Mask3D {
            dims: v.dims(),
            data: v.data().iter().map(|&x| (x > threshold) as u8).collect(),
        }
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, d: usize, h: usize, w: usize) -> bool {
        self.data[self.dims.index(d, h, w)] != 0
    }

    pub fn set(&mut self, d: usize, h: usize, w: usize, value: bool) {
        let i = self.dims.index(d, h, w);
        self.data[i] = value as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn to_volume(&self) -> Volume3D {
        Volume3D {
            dims: self.dims,
            data: self.data.iter().map(|&v| v as f32).collect(),
            spacing: UNIT_SPACING,
        }
    }
}

/// One axial plane of a [`Mask3D`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceMask2D {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl SliceMask2D {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        let dims = Dims3::new(1, h, w);
        let expected = dims.validate()?;
        if data.len() != expected {
            return Err(VolumeError::LengthMismatch {
                dims,
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(VolumeError::NonBinary { index, value });
        }
        Ok(SliceMask2D { h, w, data })
    }

    pub fn empty(h: usize, w: usize) -> Result<Self> {
        Self::new(h, w, vec![0; h.saturating_mul(w)])
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.w + c] != 0
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        self.data[r * self.w + c] = value as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Foreground restricted to `bbox` (pixels outside cleared).
    pub fn restricted_to(&self, bbox: &BBox2D) -> SliceMask2D {
        let mut out = vec![0u8; self.data.len()];
        for r in bbox.row_min..=bbox.row_max.min(self.h - 1) {
            for c in bbox.col_min..=bbox.col_max.min(self.w - 1) {
                out[r * self.w + c] = self.data[r * self.w + c];
            }
        }
        SliceMask2D {
            h: self.h,
            w: self.w,
            data: out,
        }
    }
}

/// Inclusive axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox2D {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl BBox2D {
    /// Checks ordering and containment in an `h x w` plane.
    pub fn new(row_min: usize, row_max: usize, col_min: usize, col_max: usize) -> Option<Self> {
        (row_min <= row_max && col_min <= col_max).then_some(BBox2D {
            row_min,
            row_max,
            col_min,
            col_max,
        })
    }

    pub fn fits(&self, h: usize, w: usize) -> bool {
        self.row_min <= self.row_max && self.col_min <= self.col_max && self.row_max < h && self.col_max < w
    }

    pub fn pixel_count(&self) -> usize {
        (self.row_max - self.row_min + 1) * (self.col_max - self.col_min + 1)
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.row_min..=self.row_max).contains(&r) && (self.col_min..=self.col_max).contains(&c)
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.row_min, self.row_max, self.col_min, self.col_max]
    }
}

/// Axial slice `j` of `m`.
pub fn extract_slice(m: &Mask3D, j: usize) -> Result<SliceMask2D> {
    let dims = m.dims();
    if j >= dims.d {
        return Err(VolumeError::SliceOutOfRange {
            index: j,
            depth: dims.d,
        });
    }
    let plane = dims.h * dims.w;
    Ok(SliceMask2D {
        h: dims.h,
        w: dims.w,
        data: m.data[j * plane..(j + 1) * plane].to_vec(),
    })
}

/// Stacks axial slices in order into a volume of depth `slices.len()`.
pub fn stack_slices(slices: &[SliceMask2D]) -> Result<Mask3D> {
    let first = slices.first().ok_or(VolumeError::NoSlices)?;
    let expected = first.shape();
    let mut data = Vec::with_capacity(slices.len() * first.data.len());
    for (index, s) in slices.iter().enumerate() {
        if s.shape() != expected {
            return Err(VolumeError::InconsistentSlice {
                index,
                expected,
                found: s.shape(),
            });
        }
        data.extend_from_slice(&s.data);
    }
    Mask3D::new(Dims3::new(slices.len(), expected.0, expected.1), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_rejects_nan_and_bad_length() {
        let dims = Dims3::cube(2);
        assert!(matches!(
            Volume3D::new(dims, vec![0.0; 7]),
            Err(VolumeError::LengthMismatch { .. })
        ));
        let mut data = vec![0.0; 8];
        data[3] = f32::NAN;
        assert!(matches!(
            Volume3D::new(dims, data),
            Err(VolumeError::NonFinite { index: 3, .. })
        ));
        assert!(matches!(
            Volume3D::new(Dims3::new(0, 2, 2), vec![]),
            Err(VolumeError::ZeroDim(_))
        ));
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(matches!(
            Mask3D::new(Dims3::cube(1), vec![2]),
            Err(VolumeError::NonBinary { .. })
        ));
    }

    #[test]
    fn extract_single_foreground_pixel() {
        let dims = Dims3::new(2, 3, 3);
        let m = Mask3D::from_fn(dims, |d, h, w| (d, h, w) == (0, 1, 1)).unwrap();
        let s = extract_slice(&m, 0).unwrap();
        assert_eq!(s.count(), 1);
        assert!(s.get(1, 1));
        assert!(extract_slice(&m, 1).unwrap().is_empty());
    }

    #[test]
    fn stack_of_empty_slices_is_empty_mask() {
        let slices = vec![SliceMask2D::empty(3, 4).unwrap(); 5];
        let m = stack_slices(&slices).unwrap();
        assert_eq!(m.dims(), Dims3::new(5, 3, 4));
        assert!(m.is_empty());
    }

    #[test]
    fn slice_errors() {
        let m = Mask3D::empty(Dims3::cube(2)).unwrap();
        assert!(matches!(
            extract_slice(&m, 2),
            Err(VolumeError::SliceOutOfRange { index: 2, depth: 2 })
        ));
        let slices = vec![SliceMask2D::empty(2, 2).unwrap(), SliceMask2D::empty(2, 3).unwrap()];
        assert!(matches!(
            stack_slices(&slices),
            Err(VolumeError::InconsistentSlice { index: 1, .. })
        ));
        assert!(matches!(stack_slices(&[]), Err(VolumeError::NoSlices)));
    }

    #[test]
    fn dims_parse() {
        assert_eq!("4,5,6".parse::<Dims3>().unwrap(), Dims3::new(4, 5, 6));
        assert_eq!("128x128x128".parse::<Dims3>().unwrap(), Dims3::cube(128));
        assert!("4,5".parse::<Dims3>().is_err());
    }

    #[test]
    fn coords_inverts_index() {
        let dims = Dims3::new(3, 4, 5);
        for i in 0..dims.len() {
            let [d, h, w] = dims.coords(i);
            assert_eq!(dims.index(d, h, w), i);
        }
    }
}
