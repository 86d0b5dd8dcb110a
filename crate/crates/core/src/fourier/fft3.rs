//! Separable 3D FFT over row-major `(d, h, w)` buffers, and 3D fftshift.
//!
//! Each axis is brought to the contiguous position by a transpose so rustfft
//! can process all lines of that axis in one batched call. Plans come from
//! rustfft's planner, which picks mixed-radix kernels where the length
//! factors and falls back to Bluestein's algorithm for large primes.

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::volume::Dims3;

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Unnormalized transform along every axis. The inverse direction does not
/// divide by `N`.
pub fn fft3_in_place(data: &mut [Complex64], dims: Dims3, direction: FftDirection) {
    assert_eq!(data.len(), dims.len(), "buffer length must equal D*H*W");
    let mut planner = FftPlanner::<f64>::new();
    let mut tmp = vec![Complex64::default(); data.len()];

    // w: already contiguous
    planner.plan_fft(dims.w, direction).process(data);

    // h: transpose each (H x W) plane to (W x H)
    let plane = dims.h * dims.w;
    let fft_h = planner.plan_fft(dims.h, direction);
    for (src, dst) in data.chunks_exact(plane).zip(tmp.chunks_exact_mut(plane)) {
        transpose(src, dst, dims.h, dims.w);
    }
    fft_h.process(&mut tmp);
    for (src, dst) in tmp.chunks_exact(plane).zip(data.chunks_exact_mut(plane)) {
        transpose(src, dst, dims.w, dims.h);
    }

    // d: view as (D x HW)
    let fft_d = planner.plan_fft(dims.d, direction);
    transpose(data, &mut tmp, dims.d, plane);
    fft_d.process(&mut tmp);
    transpose(&tmp, data, plane, dims.d);
}

fn shift3(src: &[Complex64], dims: Dims3, forward: bool) -> Vec<Complex64> {
    let [nd, nh, nw] = dims.as_array();
    // forward moves bin 0 to n/2; inverse moves n/2 back to 0
    let off = |n: usize| if forward { n / 2 } else { n - n / 2 };
    let (od, oh, ow) = (off(nd), off(nh), off(nw));
    let mut out = vec![Complex64::default(); src.len()];
    for d in 0..nd {
        let dd = (d + od) % nd;
        for h in 0..nh {
            let hh = (h + oh) % nh;
            let src_row = dims.index(d, h, 0);
            let dst_row = dims.index(dd, hh, 0);
            for w in 0..nw {
                out[dst_row + (w + ow) % nw] = src[src_row + w];
            }
        }
    }
    out
}

/// Moves the zero-frequency bin from index 0 to `n / 2` on each axis.
pub fn fftshift3(src: &[Complex64], dims: Dims3) -> Vec<Complex64> {
    shift3(src, dims, true)
}

/// Inverse of [`fftshift3`], also for odd lengths.
pub fn ifftshift3(src: &[Complex64], dims: Dims3) -> Vec<Complex64> {
    shift3(src, dims, false)
}
