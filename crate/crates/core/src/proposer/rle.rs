//! Run-length codec for binary slices.
//!
//! Runs alternate background/foreground over the row-major pixel order and
//! always start with a background run, which is zero-length when the first
//! pixel is foreground. Zero-length runs appear nowhere else in encoder
//! output.

use thiserror::Error;

use crate::volume::SliceMask2D;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RleError {
    #[error("runs sum to {actual}, expected {expected}")]
    SumMismatch { expected: u64, actual: u64 },
    #[error("slice dims {0}x{1} are not positive")]
    BadDims(usize, usize),
}

pub fn encode(mask: &SliceMask2D) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = 0u8;
    let mut len = 0u32;
    for &px in mask.data() {
        if px == current {
            len += 1;
        } else {
            runs.push(len);
            current = px;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn decode(runs: &[u32], h: usize, w: usize) -> Result<SliceMask2D, RleError> {
    if h == 0 || w == 0 {
        return Err(RleError::BadDims(h, w));
    }
    let expected = (h as u64) * (w as u64);
    let actual: u64 = runs.iter().map(|&r| r as u64).sum();
    if actual != expected {
        return Err(RleError::SumMismatch { expected, actual });
    }
    let mut data = Vec::with_capacity(expected as usize);
    for (i, &r) in runs.iter().enumerate() {
        data.extend(std::iter::repeat_n((i % 2) as u8, r as usize));
    }
    Ok(SliceMask2D::new(h, w, data).expect("decoded pixels are binary and sized"))
}
