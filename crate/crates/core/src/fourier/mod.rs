//! Low-frequency amplitude transplantation between volumes.
//!
//! Both volumes are taken to a centered 3D spectrum, the source amplitude is
//! overwritten by the target amplitude inside a small cube around the DC bin,
//! and the result is recombined with the untouched source phase and inverted.
//! Amplitude carries contrast and intensity statistics; phase carries the
//! spatial layout, so the output keeps source anatomy with target appearance.

mod cube;
mod fft3;

pub use cube::{cube_from_l, FreqCube};
pub use fft3::{fft3_in_place, fftshift3, ifftshift3};

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftDirection;
use thiserror::Error;

use crate::volume::{Dims3, Volume3D};

/// Range of `L` where no diagnostics note is attached.
pub const RECOMMENDED_L: std::ops::RangeInclusive<f64> = 0.01..=0.03;

#[derive(Debug, Error, PartialEq)]
pub enum FourierError {
    #[error("L must lie in (0, 1), got {0}")]
    InvalidL(f64),
    #[error("spectrum dims mismatch: {0} vs {1}")]
    DimsMismatch(Dims3, Dims3),
    #[error("spectrum is not centered; fftshift before cube operations or inversion")]
    NotCentered,
    #[error("bad spectrum: {0}")]
    BadSpectrum(String),
}

pub type Result<T, E = FourierError> = std::result::Result<T, E>;

/// Polar form of a 3D spectrum. Amplitude is non-negative; phase lies in
/// `(-pi, pi]` and is 0 wherever amplitude is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum3D {
    dims: Dims3,
    amplitude: Vec<f64>,
    phase: Vec<f64>,
    centered: bool,
}

fn canonical_phase(c: Complex64, amplitude: f64) -> f64 {
    if amplitude == 0.0 {
        return 0.0;
    }
    let p = c.im.atan2(c.re);
    if p <= -PI {
        PI
    } else {
        p
    }
}

impl Spectrum3D {
    pub fn from_complex(dims: Dims3, data: &[Complex64], centered: bool) -> Self {
        assert_eq!(data.len(), dims.len(), "complex buffer length");
        let amplitude: Vec<f64> = data.iter().map(|c| c.norm()).collect();
        let phase = data
            .iter()
            .zip(&amplitude)
            .map(|(&c, &a)| canonical_phase(c, a))
            .collect();
        Spectrum3D {
            dims,
            amplitude,
            phase,
            centered,
        }
    }

    pub fn from_polar(dims: Dims3, amplitude: Vec<f64>, phase: Vec<f64>, centered: bool) -> Result<Self> {
        let n = dims.len();
        if amplitude.len() != n || phase.len() != n {
            return Err(FourierError::BadSpectrum(format!(
                "plane lengths {}/{} do not match {dims}",
                amplitude.len(),
                phase.len()
            )));
        }
        if let Some(a) = amplitude.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(FourierError::BadSpectrum(format!("amplitude {a} not finite and >= 0")));
        }
        if let Some(p) = phase.iter().find(|p| !(p.is_finite() && **p > -PI && **p <= PI)) {
            return Err(FourierError::BadSpectrum(format!("phase {p} outside (-pi, pi]")));
        }
        Ok(Spectrum3D {
            dims,
            amplitude,
            phase,
            centered,
        })
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn amplitude(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Index of the zero-frequency bin in a centered spectrum.
    pub fn dc_index(&self) -> usize {
        self.dims.index(self.dims.d / 2, self.dims.h / 2, self.dims.w / 2)
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.amplitude
            .iter()
            .zip(&self.phase)
            .map(|(&a, &p)| Complex64::from_polar(a, p))
            .collect()
    }
}

/// Forward 3D FFT with the zero-frequency bin moved to
/// `(D/2, H/2, W/2)` (integer division).
pub fn fft3_centered(v: &Volume3D) -> Spectrum3D {
    let dims = v.dims();
    let mut buf: Vec<Complex64> = v.data().iter().map(|&x| Complex64::new(x as f64, 0.0)).collect();
    fft3_in_place(&mut buf, dims, FftDirection::Forward);
    let shifted = fftshift3(&buf, dims);
    Spectrum3D::from_complex(dims, &shifted, true)
}

/// Real part of an inverse transform, plus the largest discarded imaginary
/// magnitude.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub volume: Volume3D,
    pub max_imag_residue: f64,
}

pub fn ifft3_centered(s: &Spectrum3D) -> Result<Reconstruction> {
    if !s.centered {
        return Err(FourierError::NotCentered);
    }
    let dims = s.dims;
    let mut buf = ifftshift3(&s.to_complex(), dims);
    fft3_in_place(&mut buf, dims, FftDirection::Inverse);
    let scale = 1.0 / dims.len() as f64;
    let mut max_imag_residue = 0.0f64;
    let data = buf
        .iter()
        .map(|c| {
            max_imag_residue = max_imag_residue.max((c.im * scale).abs());
            (c.re * scale) as f32
        })
        .collect();
    let volume = Volume3D::new(dims, data).map_err(|e| FourierError::BadSpectrum(e.to_string()))?;
    Ok(Reconstruction {
        volume,
        max_imag_residue,
    })
}

/// Source spectrum with its amplitude replaced by the target's inside `cube`.
/// Phase is copied from the source unchanged.
pub fn amplitude_swap(src: &Spectrum3D, tgt: &Spectrum3D, cube: &FreqCube) -> Result<Spectrum3D> {
    if src.dims != tgt.dims {
        return Err(FourierError::DimsMismatch(src.dims, tgt.dims));
    }
    if cube.dims() != src.dims {
        return Err(FourierError::DimsMismatch(src.dims, cube.dims()));
    }
    if !src.centered || !tgt.centered {
        return Err(FourierError::NotCentered);
    }
    let mut amplitude = src.amplitude.clone();
    for i in cube.member_indices() {
        amplitude[i] = tgt.amplitude[i];
    }
    Ok(Spectrum3D {
        dims: src.dims,
        amplitude,
        phase: src.phase.clone(),
        centered: true,
    })
}

#[derive(Debug, Clone)]
pub struct FdaOutcome {
    pub adapted: Volume3D,
    pub cube: FreqCube,
    pub max_imag_residue: f64,
    /// Non-fatal remarks, e.g. `L` outside the recommended band.
    pub notes: Vec<String>,
}

/// Transplants the target's low-frequency amplitude into the source.
/// The output is not clamped and may contain negative intensities.
pub fn apply_fda(src: &Volume3D, tgt: &Volume3D, l: f64) -> Result<FdaOutcome> {
    if src.dims() != tgt.dims() {
        return Err(FourierError::DimsMismatch(src.dims(), tgt.dims()));
    }
    let cube = cube_from_l(src.dims(), l)?;
    let mut notes = Vec::new();
    if !RECOMMENDED_L.contains(&l) {
        notes.push(format!(
            "L = {l} lies outside the recommended band [{}, {}]",
            RECOMMENDED_L.start(),
            RECOMMENDED_L.end()
        ));
    }
    let s = fft3_centered(src);
    let t = fft3_centered(tgt);
    let fused = amplitude_swap(&s, &t, &cube)?;
    let recon = ifft3_centered(&fused)?;
    let adapted = Volume3D::with_spacing(src.dims(), recon.volume.into_data(), src.spacing())
        .map_err(|e| FourierError::BadSpectrum(e.to_string()))?;
    Ok(FdaOutcome {
        adapted,
        cube,
        max_imag_residue: recon.max_imag_residue,
        notes,
    })
}
