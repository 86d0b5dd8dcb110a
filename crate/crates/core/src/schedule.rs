//! Adversarial weight schedule and EMA teacher updates.
//!
//! The gradient reversal layer itself belongs to the external trainer: it is
//! the identity on the forward pass and multiplies the discriminator gradient
//! by `-lambda(t)` on the way back. This module only supplies `lambda(t)`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("alpha must lie in (0, 1), got {0}")]
    AlphaOutOfRange(f64),
    #[error("parameter length mismatch: teacher {teacher}, student {student}")]
    LengthMismatch { teacher: usize, student: usize },
    #[error("parameter tag mismatch: teacher {teacher:?}, student {student:?}")]
    TagMismatch { teacher: String, student: String },
    #[error("non-finite parameter at index {0}")]
    NonFinite(usize),
    #[error("bad PVEC file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ScheduleError> = std::result::Result<T, E>;

/// Warm-up, logistic ramp, then a pinned plateau.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSchedule {
    pub lambda_max: f64,
    pub gamma: f64,
    pub t0: f64,
    #[serde(default, alias = "warmup")]
    pub warmup_epochs: u32,
    /// Epoch from which lambda is exactly `lambda_max`. Defaults to
    /// `t0 + 5 / gamma`, where the logistic is within 0.7% of the plateau.
    #[serde(default)]
    pub freeze_after: Option<f64>,
}

impl LambdaSchedule {
    pub fn new(lambda_max: f64, gamma: f64, t0: f64, warmup_epochs: u32) -> Result<Self> {
        let s = LambdaSchedule {
            lambda_max,
            gamma,
            t0,
            warmup_epochs,
            freeze_after: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_freeze_after(mut self, epoch: f64) -> Result<Self> {
        self.freeze_after = Some(epoch);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_max.is_finite() && self.lambda_max > 0.0) {
            return Err(ScheduleError::InvalidSchedule(format!(
                "lambda_max must be positive, got {}",
                self.lambda_max
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(ScheduleError::InvalidSchedule(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !self.t0.is_finite() {
            return Err(ScheduleError::InvalidSchedule("t0 must be finite".into()));
        }
        if let Some(f) = self.freeze_after {
            if !f.is_finite() {
                return Err(ScheduleError::InvalidSchedule("freeze_after must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn freeze_epoch(&self) -> f64 {
        self.freeze_after.unwrap_or(self.t0 + 5.0 / self.gamma)
    }

    /// Adversarial weight at epoch `t`.
    pub fn lambda_at(&self, t: f64) -> f64 {
        if t < self.warmup_epochs as f64 {
            return 0.0;
        }
        if t >= self.freeze_epoch() {
            return self.lambda_max;
        }
        self.lambda_max / (1.0 + (-self.gamma * (t - self.t0)).exp())
    }
}

/// Flat parameter vector with an opaque shape tag. The toolkit never
/// interprets the layout; it only checks that blended vectors agree.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    tag: String,
    values: Vec<f32>,
}

const PVEC_MAGIC: &[u8; 4] = b"PVEC";

impl ParamVector {
    pub fn new(tag: impl Into<String>, values: Vec<f32>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ScheduleError::NonFinite(i));
        }
        Ok(ParamVector {
            tag: tag.into(),
            values,
        })
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `magic "PVEC" | u32 tag length | tag | u64 count | f32 payload`, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.tag.len() + 4 * self.values.len());
        out.extend_from_slice(PVEC_MAGIC);
        out.extend_from_slice(&(self.tag.len() as u32).to_le_bytes());
        out.extend_from_slice(self.tag.as_bytes());
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let take = |at: usize, n: usize| -> Result<&[u8]> {
            bytes
                .get(
                    at..at
                        .checked_add(n)
                        .ok_or_else(|| ScheduleError::Format("length overflow".into()))?,
                )
                .ok_or_else(|| ScheduleError::Format(format!("truncated at byte {at}")))
        };
        if take(0, 4)? != PVEC_MAGIC {
            return Err(ScheduleError::Format("bad magic".into()));
        }
        let tag_len = u32::from_le_bytes(take(4, 4)?.try_into().unwrap()) as usize;
        let tag = std::str::from_utf8(take(8, tag_len)?)
            .map_err(|e| ScheduleError::Format(format!("tag is not UTF-8: {e}")))?
            .to_string();
        let at = 8 + tag_len;
        let count = u64::from_le_bytes(take(at, 8)?.try_into().unwrap());
        let count = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| ScheduleError::Format("count overflows".into()))?;
        let payload = take(at + 8, count)?;
        if bytes.len() != at + 8 + count {
            return Err(ScheduleError::Format(format!(
                "{} trailing bytes",
                bytes.len() - at - 8 - count
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ParamVector::new(tag, values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// `alpha * teacher + (1 - alpha) * student`, elementwise, evaluated in f64.
pub fn ema_blend(teacher: &ParamVector, student: &ParamVector, alpha: f64) -> Result<ParamVector> {
    if !(alpha.is_finite() && alpha > 0.0 && alpha < 1.0) {
        return Err(ScheduleError::AlphaOutOfRange(alpha));
    }
    if teacher.len() != student.len() {
        return Err(ScheduleError::LengthMismatch {
            teacher: teacher.len(),
            student: student.len(),
        });
    }
    if teacher.tag != student.tag {
        return Err(ScheduleError::TagMismatch {
            teacher: teacher.tag.clone(),
            student: student.tag.clone(),
        });
    }
    let values = teacher
        .values
        .iter()
        .zip(&student.values)
        .map(|(&t, &s)| (alpha * t as f64 + (1.0 - alpha) * s as f64) as f32)
        .collect();
    Ok(ParamVector {
        tag: teacher.tag.clone(),
        values,
    })
}
