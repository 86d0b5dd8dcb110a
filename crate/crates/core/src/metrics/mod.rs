//! Overlap and boundary metrics on binary volumes.
//!
//! HD95 pools the directed surface distances of both masks into one multiset
//! and takes its 95th percentile with linear interpolation between order
//! statistics (the same rule as numpy's default `percentile`). Distances are
//! in voxels unless a spacing is supplied.

mod components;
mod distance;

pub use components::{label_components, CCLabeling, Connectivity};
pub use distance::squared_edt;

use thiserror::Error;

use crate::volume::{Dims3, Mask3D, Volume3D};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("dims mismatch: {0} vs {1}")]
    DimsMismatch(Dims3, Dims3),
    #[error("HD95 is undefined: {0} mask is empty")]
    UndefinedHd95(&'static str),
    #[error("prediction value {value} at voxel {index} outside [0, 1]")]
    PredOutOfRange { index: usize, value: f32 },
    #[error("epsilon must be finite and non-negative, got {0}")]
    BadEpsilon(f64),
    #[error("connectivity must be 6 or 26, got {0}")]
    InvalidConnectivity(u32),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

fn same_dims(a: Dims3, b: Dims3) -> Result<()> {
    if a != b {
        return Err(MetricError::DimsMismatch(a, b));
    }
    Ok(())
}

/// `2|A n B| / (|A| + |B|)`; 1.0 when both masks are empty.
pub fn dice(a: &Mask3D, b: &Mask3D) -> Result<f64> {
    same_dims(a.dims(), b.dims())?;
    let (mut inter, mut sa, mut sb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        sa += x as usize;
        sb += y as usize;
    }
    if sa + sb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (sa + sb) as f64)
}

/// `1 - (2 sum(p g) + eps) / (sum(p^2) + sum(g^2) + eps)`.
pub fn soft_dice_loss(pred: &Volume3D, gt: &Mask3D, epsilon: f64) -> Result<f64> {
    same_dims(pred.dims(), gt.dims())?;
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(MetricError::BadEpsilon(epsilon));
    }
    let (mut pg, mut pp, mut gg) = (0.0f64, 0.0f64, 0.0f64);
    for (index, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(MetricError::PredOutOfRange { index, value: p });
        }
        let (p, g) = (p as f64, g as f64);
        pg += p * g;
        pp += p * p;
        gg += g * g;
    }
    let denom = pp + gg + epsilon;
    if denom == 0.0 {
        // empty prediction against empty ground truth with eps = 0
        return Ok(0.0);
    }
    Ok((1.0 - (2.0 * pg + epsilon) / denom).clamp(0.0, 1.0))
}

/// Foreground voxels with at least one background face neighbor; the
/// outside of the array counts as background. Raster order.
pub fn surface_voxels(m: &Mask3D) -> Vec<[usize; 3]> {
    let dims = m.dims();
    let mut out = Vec::new();
    for d in 0..dims.d {
        for h in 0..dims.h {
            for w in 0..dims.w {
                if !m.get(d, h, w) {
                    continue;
                }
                let on_border = d == 0 || h == 0 || w == 0 || d + 1 == dims.d || h + 1 == dims.h || w + 1 == dims.w;
                if on_border
                    || !m.get(d - 1, h, w)
                    || !m.get(d + 1, h, w)
                    || !m.get(d, h - 1, w)
                    || !m.get(d, h + 1, w)
                    || !m.get(d, h, w - 1)
                    || !m.get(d, h, w + 1)
                {
                    out.push([d, h, w]);
                }
            }
        }
    }
    out
}

/// Percentile `q` in `[0, 100]` of sorted data, linear between order statistics.
pub fn percentile_linear(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Pooled symmetric surface distances `d(x, S_b)` for `x` in `S_a` followed by
/// `d(y, S_a)` for `y` in `S_b`.
pub fn surface_distances(a: &Mask3D, b: &Mask3D, spacing: [f64; 3]) -> Result<Vec<f64>> {
    same_dims(a.dims(), b.dims())?;
    if a.is_empty() {
        return Err(MetricError::UndefinedHd95("first"));
    }
    if b.is_empty() {
        return Err(MetricError::UndefinedHd95("second"));
    }
    let dims = a.dims();
    let sa = surface_voxels(a);
    let sb = surface_voxels(b);
    let features = |s: &[[usize; 3]]| {
        let mut f = vec![false; dims.len()];
        for &[d, h, w] in s {
            f[dims.index(d, h, w)] = true;
        }
        f
    };
    let to_b = squared_edt(&features(&sb), dims, spacing);
    let to_a = squared_edt(&features(&sa), dims, spacing);
    let mut pooled = Vec::with_capacity(sa.len() + sb.len());
    pooled.extend(sa.iter().map(|&[d, h, w]| to_b[dims.index(d, h, w)].sqrt()));
    pooled.extend(sb.iter().map(|&[d, h, w]| to_a[dims.index(d, h, w)].sqrt()));
    Ok(pooled)
}

/// HD95 in voxel units.
pub fn hd95(a: &Mask3D, b: &Mask3D) -> Result<f64> {
    hd95_with_spacing(a, b, [1.0; 3])
}

pub fn hd95_with_spacing(a: &Mask3D, b: &Mask3D, spacing: [f64; 3]) -> Result<f64> {
    let mut pooled = surface_distances(a, b, spacing)?;
    pooled.sort_by(f64::total_cmp);
    Ok(percentile_linear(&pooled, 95.0).expect("nonempty masks have surfaces"))
}
