//! Exact squared Euclidean distance transform (separable lower-envelope
//! method), with per-axis weights for anisotropic spacing.

use crate::volume::Dims3;

/// One line: `out[p] = min_q weight * (p - q)^2 + f[q]`.
fn transform_line(f: &[f64], weight: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k: usize = 0;
    let mut started = false;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if !started {
            started = true;
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            continue;
        }
        let qf = q as f64;
        let mut s;
        loop {
            let p = v[k] as f64;
            s = ((f[q] + weight * qf * qf) - (f[v[k]] + weight * p * p)) / (2.0 * weight * (qf - p));
            if s <= z[k] {
                // z[0] is -inf, so k never underflows
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    if !started {
        out.fill(f64::INFINITY);
        return;
    }
    let mut j = 0;
    for (p, slot) in out.iter_mut().enumerate() {
        let pf = p as f64;
        while z[j + 1] < pf {
            j += 1;
        }
        let dq = pf - v[j] as f64;
        *slot = weight * dq * dq + f[v[j]];
    }
}

/// Squared distance from every voxel to the nearest `true` voxel in `features`.
/// `spacing` scales each axis; voxels with no feature anywhere get `+inf`.
pub fn squared_edt(features: &[bool], dims: Dims3, spacing: [f64; 3]) -> Vec<f64> {
    assert_eq!(features.len(), dims.len());
    let mut grid: Vec<f64> = features.iter().map(|&f| if f { 0.0 } else { f64::INFINITY }).collect();
    let n_max = dims.d.max(dims.h).max(dims.w);
    let mut line = vec![0.0; n_max];
    let mut out = vec![0.0; n_max];
    let mut v = vec![0usize; n_max];
    let mut z = vec![0.0; n_max + 1];

    let axes = [
        (dims.w, 1usize, spacing[2]),
        (dims.h, dims.w, spacing[1]),
        (dims.d, dims.h * dims.w, spacing[0]),
    ];
    for (len, stride, sp) in axes {
        let weight = sp * sp;
        for start in 0..dims.len() {
            // a line starts where its coordinate along this axis is zero
            if (start / stride) % len != 0 {
                continue;
            }
            for (k, slot) in line[..len].iter_mut().enumerate() {
                *slot = grid[start + k * stride];
            }
            transform_line(&line[..len], weight, &mut out[..len], &mut v[..len], &mut z[..len + 1]);
            for (k, &val) in out[..len].iter().enumerate() {
                grid[start + k * stride] = val;
            }
        }
    }
    grid
}
