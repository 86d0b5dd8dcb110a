use serde::Serialize;

use super::{FourierError, Result};
use crate::volume::Dims3;

/// Centered low-frequency cube of half-width `b`, clamped at array borders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FreqCube {
    dims: Dims3,
    b: usize,
    center: [usize; 3],
}

/// `b = floor(L * min(D, H, W))`, centered on the DC bin of a shifted spectrum.
pub fn cube_from_l(dims: Dims3, l: f64) -> Result<FreqCube> {
    if !(l.is_finite() && l > 0.0 && l < 1.0) {
        return Err(FourierError::InvalidL(l));
    }
    let b = (l * dims.min_extent() as f64).floor() as usize;
    Ok(FreqCube::new(dims, b))
}

impl FreqCube {
    pub fn new(dims: Dims3, b: usize) -> Self {
        FreqCube {
            dims,
            b,
            center: [dims.d / 2, dims.h / 2, dims.w / 2],
        }
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn half_width(&self) -> usize {
        self.b
    }

    pub fn center(&self) -> [usize; 3] {
        self.center
    }

    pub fn contains(&self, d: usize, h: usize, w: usize) -> bool {
        [d, h, w]
            .iter()
            .zip(&self.center)
            .all(|(&i, &c)| i.abs_diff(c) <= self.b)
    }

    /// Inclusive index range per axis after clamping.
    pub fn axis_ranges(&self) -> [std::ops::RangeInclusive<usize>; 3] {
        let n = self.dims.as_array();
        std::array::from_fn(|a| {
            let lo = self.center[a].saturating_sub(self.b);
            let hi = (self.center[a] + self.b).min(n[a] - 1);
            lo..=hi
        })
    }

    pub fn member_count(&self) -> usize {
        self.axis_ranges().iter().map(|r| r.end() - r.start() + 1).product()
    }

    /// Flat indices of member bins in row-major order.
    pub fn member_indices(&self) -> impl Iterator<Item = usize> + '_ {
        let [rd, rh, rw] = self.axis_ranges();
        let dims = self.dims;
        rd.flat_map(move |d| {
            let rw = rw.clone();
            rh.clone()
                .flat_map(move |h| rw.clone().map(move |w| dims.index(d, h, w)))
        })
    }
}
