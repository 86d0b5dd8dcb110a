use super::{Dims3, Mask3D, Volume3D};

/// Per-volume min-max scaling into `[0, 1]`. A constant volume maps to zeros.
pub fn minmax_normalize(v: &Volume3D) -> Volume3D {
    let (lo, hi) = v.min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    let range = hi - lo;
    let data = if range > 0.0 {
        v.data().iter().map(|&x| ((x as f64 - lo) / range) as f32).collect()
    } else {
        vec![0.0; v.data().len()]
    };
    Volume3D::with_spacing(v.dims(), data, v.spacing()).expect("normalized values are finite")
}

/// Per-axis placement of a source interval into a target extent.
#[derive(Debug, Clone, Copy)]
struct AxisFit {
    /// First source index copied.
    src_start: usize,
    /// First destination index written.
    dst_start: usize,
    len: usize,
}

fn fit_axis(lo: usize, extent: usize, target: usize) -> AxisFit {
    if extent >= target {
        // centered crop; odd surplus drops the extra voxel on the high side
        AxisFit {
            src_start: lo + (extent - target) / 2,
            dst_start: 0,
            len: target,
        }
    } else {
        AxisFit {
            src_start: lo,
            dst_start: (target - extent) / 2,
            len: extent,
        }
    }
}

/// Crop/pad placement derived from one volume, reusable for its label so
/// image and mask stay aligned.
#[derive(Debug, Clone)]
pub struct FitPlan {
    source: Dims3,
    target: Dims3,
    /// `None` when the reference volume had no nonzero voxel.
    axes: Option<[AxisFit; 3]>,
}

impl FitPlan {
    pub fn target(&self) -> Dims3 {
        self.target
    }

    fn apply_raw<T: Copy + Default>(&self, src: &[T]) -> Vec<T> {
        let mut data = vec![T::default(); self.target.len()];
        let Some(fits) = self.axes else {
            return data;
        };
        for dd in 0..fits[0].len {
            for hh in 0..fits[1].len {
                let s = self
                    .source
                    .index(fits[0].src_start + dd, fits[1].src_start + hh, fits[2].src_start);
                let t = self
                    .target
                    .index(fits[0].dst_start + dd, fits[1].dst_start + hh, fits[2].dst_start);
                data[t..t + fits[2].len].copy_from_slice(&src[s..s + fits[2].len]);
            }
        }
        data
    }

    pub fn apply(&self, v: &Volume3D) -> super::Result<Volume3D> {
        if v.dims() != self.source {
            return Err(super::VolumeError::DimsMismatch(v.dims(), self.source));
        }
        Volume3D::with_spacing(self.target, self.apply_raw(v.data()), v.spacing())
    }

    pub fn apply_mask(&self, m: &Mask3D) -> super::Result<Mask3D> {
        if m.dims() != self.source {
            return Err(super::VolumeError::DimsMismatch(m.dims(), self.source));
        }
        Mask3D::new(self.target, self.apply_raw(m.data()))
    }
}

/// Plan for [`crop_to_nonzero_then_fit`] computed from `v`.
pub fn nonzero_fit_plan(v: &Volume3D, target: Dims3) -> super::Result<FitPlan> {
    target.validate()?;
    let dims = v.dims();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (i, &x) in v.data().iter().enumerate() {
        if x != 0.0 {
            any = true;
            let c = dims.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
    }
    let t = target.as_array();
    let axes = any.then(|| std::array::from_fn(|a| fit_axis(lo[a], hi[a] - lo[a] + 1, t[a])));
    Ok(FitPlan {
        source: dims,
        target,
        axes,
    })
}

/// Crops to the tight bounding box of nonzero voxels, then center-crops or
/// zero-pads each axis to `target`. An all-zero input yields a zero volume.
pub fn crop_to_nonzero_then_fit(v: &Volume3D, target: Dims3) -> super::Result<Volume3D> {
    nonzero_fit_plan(v, target)?.apply(v)
}
