//! Pseudo-label curation with box-prompted slice proposals.
//!
//! The first adaptation cycle refines teacher labels slice by slice: a
//! proposal replaces the teacher slice when its confidence reaches
//! `tau_conf`. Later cycles keep the teacher labels as they are and decide
//! per volume whether to keep the case at all, from three statistics of the
//! proposals: mean confidence, overlap ratio against the prompt boxes, and
//! the number of 3D connected components of the stacked proposal masks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{label_components, Connectivity};
use crate::volume::{extract_slice, stack_slices, BBox2D, Dims3, Mask3D, SliceMask2D, VolumeError};

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("case has no prompted slices")]
    EmptyCase,
    #[error("duplicate proposal for slice {0}")]
    DuplicateSlice(usize),
    #[error("proposal slice {index} out of range for depth {depth}")]
    SliceOutOfRange { index: usize, depth: usize },
    #[error("proposal mask {found:?} does not match volume plane {expected:?}")]
    DimsMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("confidence {0} outside [0, 1]")]
    BadConfidence(f64),
    #[error("invalid threshold: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T, E = CurationError> = std::result::Result<T, E>;

/// Tightest box around the foreground of `s`; `None` for an empty slice.
pub fn bbox_of_slice(s: &SliceMask2D) -> Option<BBox2D> {
    let (h, w) = s.shape();
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..h {
        for c in 0..w {
            if s.get(r, c) {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    BBox2D::new(r0, r1, c0, c1).filter(|_| r0 != usize::MAX)
}

/// Axial slices of `m` with foreground, paired with their prompt boxes.
pub fn prompt_boxes(m: &Mask3D) -> Vec<(usize, BBox2D)> {
    (0..m.dims().d)
        .filter_map(|j| {
            let s = extract_slice(m, j).expect("j < depth");
            bbox_of_slice(&s).map(|b| (j, b))
        })
        .collect()
}

/// Proposer output for one prompted slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceProposal {
    pub slice_index: usize,
    pub mask: SliceMask2D,
    pub confidence: f64,
    pub bbox: BBox2D,
}

impl SliceProposal {
    pub fn new(slice_index: usize, mask: SliceMask2D, confidence: f64, bbox: BBox2D) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(CurationError::BadConfidence(confidence));
        }
        let (h, w) = mask.shape();
        if !bbox.fits(h, w) {
            return Err(CurationError::InvalidConfig(format!(
                "bbox {:?} outside {h}x{w} plane",
                bbox.as_array()
            )));
        }
        Ok(SliceProposal {
            slice_index,
            mask,
            confidence,
            bbox,
        })
    }
}

fn sorted_checked(proposals: &[SliceProposal]) -> Result<Vec<&SliceProposal>> {
    let mut sorted: Vec<&SliceProposal> = proposals.iter().collect();
    sorted.sort_by_key(|p| p.slice_index);
    for pair in sorted.windows(2) {
        if pair[0].slice_index == pair[1].slice_index {
            return Err(CurationError::DuplicateSlice(pair[0].slice_index));
        }
    }
    if let Some(first) = sorted.first() {
        let shape = first.mask.shape();
        if let Some(p) = sorted.iter().find(|p| p.mask.shape() != shape) {
            return Err(CurationError::DimsMismatch {
                expected: shape,
                found: p.mask.shape(),
            });
        }
    }
    Ok(sorted)
}

fn check_unit_open(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0 && v < 1.0) {
        return Err(CurationError::InvalidConfig(format!(
            "{name} must lie in (0, 1), got {v}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    pub tau_conf: f64,
}

impl RefineConfig {
    pub fn new(tau_conf: f64) -> Result<Self> {
        check_unit_open("tau_conf", tau_conf)?;
        Ok(RefineConfig { tau_conf })
    }

    pub fn validate(&self) -> Result<()> {
        check_unit_open("tau_conf", self.tau_conf)
    }
}

/// Outcome of refining one case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineSummary {
    pub prompted: usize,
    pub replaced: Vec<usize>,
}

/// Replaces each proposed slice of `y0` by its proposal when the confidence
/// is at least `tau_conf`. Slices without a proposal are kept.
pub fn refine_volume(y0: &Mask3D, proposals: &[SliceProposal], cfg: &RefineConfig) -> Result<Mask3D> {
    refine_volume_with_summary(y0, proposals, cfg).map(|(m, _)| m)
}

pub fn refine_volume_with_summary(
    y0: &Mask3D,
    proposals: &[SliceProposal],
    cfg: &RefineConfig,
) -> Result<(Mask3D, RefineSummary)> {
    cfg.validate()?;
    let dims = y0.dims();
    let sorted = sorted_checked(proposals)?;
    let mut slices: Vec<SliceMask2D> = (0..dims.d)
        .map(|j| extract_slice(y0, j))
        .collect::<std::result::Result<_, _>>()?;
    let mut replaced = Vec::new();
    for p in &sorted {
        if p.slice_index >= dims.d {
            return Err(CurationError::SliceOutOfRange {
                index: p.slice_index,
                depth: dims.d,
            });
        }
        if p.mask.shape() != (dims.h, dims.w) {
            return Err(CurationError::DimsMismatch {
                expected: (dims.h, dims.w),
                found: p.mask.shape(),
            });
        }
        if p.confidence >= cfg.tau_conf {
            slices[p.slice_index] = p.mask.clone();
            replaced.push(p.slice_index);
        }
    }
    let summary = RefineSummary {
        prompted: sorted.len(),
        replaced,
    };
    Ok((stack_slices(&slices)?, summary))
}

/// Arithmetic mean of proposal confidences, summed in slice order.
pub fn mean_confidence(proposals: &[SliceProposal]) -> Result<f64> {
    let sorted = sorted_checked(proposals)?;
    if sorted.is_empty() {
        return Err(CurationError::EmptyCase);
    }
    let sum: f64 = sorted.iter().map(|p| p.confidence).sum();
    Ok(sum / sorted.len() as f64)
}

/// Total proposal foreground over total prompt-box area. With `clip`,
/// foreground outside each box is ignored.
pub fn overlap_ratio(proposals: &[SliceProposal], clip: bool) -> Result<f64> {
    let sorted = sorted_checked(proposals)?;
    if sorted.is_empty() {
        return Err(CurationError::EmptyCase);
    }
    let (mut fg, mut area) = (0usize, 0usize);
    for p in sorted {
        fg += if clip {
            p.mask.restricted_to(&p.bbox).count()
        } else {
            p.mask.count()
        };
        area += p.bbox.pixel_count();
    }
    Ok(fg as f64 / area as f64)
}

/// Connected components of the proposal masks stacked at their slice
/// positions; slices between prompted ones are left empty.
pub fn proposal_components(proposals: &[SliceProposal], connectivity: Connectivity) -> Result<usize> {
    let sorted = sorted_checked(proposals)?;
    let (Some(first), Some(last)) = (sorted.first(), sorted.last()) else {
        return Err(CurationError::EmptyCase);
    };
    let (h, w) = first.mask.shape();
    let depth = last.slice_index - first.slice_index + 1;
    let mut data = vec![0u8; depth * h * w];
    for p in &sorted {
        let at = (p.slice_index - first.slice_index) * h * w;
        data[at..at + h * w].copy_from_slice(p.mask.data());
    }
    let stacked = Mask3D::new(Dims3::new(depth, h, w), data)?;
    Ok(label_components(&stacked, connectivity).count)
}

/// Proposal masks placed at their slices in a volume of `dims`; other
/// slices stay empty.
pub fn stack_proposals(proposals: &[SliceProposal], dims: Dims3) -> Result<Mask3D> {
    let sorted = sorted_checked(proposals)?;
    let plane = dims.h * dims.w;
    let mut data = vec![0u8; dims.validate()?];
    for p in sorted {
        if p.slice_index >= dims.d {
            return Err(CurationError::SliceOutOfRange {
                index: p.slice_index,
                depth: dims.d,
            });
        }
        if p.mask.shape() != (dims.h, dims.w) {
            return Err(CurationError::DimsMismatch {
                expected: (dims.h, dims.w),
                found: p.mask.shape(),
            });
        }
        data[p.slice_index * plane..(p.slice_index + 1) * plane].copy_from_slice(p.mask.data());
    }
    Ok(Mask3D::new(dims, data)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    pub tau_conf: f64,
    pub tau_overlap_lo: f64,
    pub tau_overlap_hi: f64,
    pub tau_cc: u32,
    #[serde(default)]
    pub connectivity: Connectivity,
    /// Count only proposal pixels inside the prompt box for the overlap ratio.
    #[serde(default)]
    pub clip_to_bbox: bool,
}

impl SelectConfig {
    pub fn new(tau_conf: f64, overlap: (f64, f64), tau_cc: u32) -> Result<Self> {
        let cfg = SelectConfig {
            tau_conf,
            tau_overlap_lo: overlap.0,
            tau_overlap_hi: overlap.1,
            tau_cc,
            connectivity: Connectivity::TwentySix,
            clip_to_bbox: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_connectivity(mut self, c: Connectivity) -> Self {
        self.connectivity = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_unit_open("tau_conf", self.tau_conf)?;
        let (lo, hi) = (self.tau_overlap_lo, self.tau_overlap_hi);
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(CurationError::InvalidConfig(format!(
                "overlap band needs 0 <= lo < hi <= 1, got [{lo}, {hi}]"
            )));
        }
        if self.tau_cc < 1 {
            return Err(CurationError::InvalidConfig("tau_cc must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Teacher mask empty: nothing to prompt.
    Empty,
    Filtered,
}

/// Per-volume selection verdict. `retained` always equals the conjunction of
/// the three pass flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub slice_count: usize,
    pub mean_conf: Option<f64>,
    pub overlap_ratio: Option<f64>,
    pub cc_count: Option<usize>,
    pub conf_pass: bool,
    pub overlap_pass: bool,
    pub cc_pass: bool,
    pub retained: bool,
    pub reason: Option<RejectReason>,
}

impl CaseReport {
    /// Automatic rejection of a case with no prompted slices.
    pub fn empty(case_id: impl Into<String>) -> Self {
        CaseReport {
            case_id: case_id.into(),
            slice_count: 0,
            mean_conf: None,
            overlap_ratio: None,
            cc_count: None,
            conf_pass: false,
            overlap_pass: false,
            cc_pass: false,
            retained: false,
            reason: Some(RejectReason::Empty),
        }
    }
}

/// Applies the retention predicate
/// `mean_conf >= tau_conf && overlap in [lo, hi] && cc_count <= tau_cc`.
pub fn select_case(case_id: &str, proposals: &[SliceProposal], cfg: &SelectConfig) -> Result<CaseReport> {
    cfg.validate()?;
    let mean_conf = mean_confidence(proposals)?;
    let overlap = overlap_ratio(proposals, cfg.clip_to_bbox)?;
    let cc = proposal_components(proposals, cfg.connectivity)?;
    Ok(judge(case_id, proposals.len(), mean_conf, overlap, cc, cfg))
}

/// The predicate on precomputed statistics.
pub fn judge(
    case_id: &str,
    slice_count: usize,
    mean_conf: f64,
    overlap: f64,
    cc_count: usize,
    cfg: &SelectConfig,
) -> CaseReport {
    let conf_pass = mean_conf >= cfg.tau_conf;
    let overlap_pass = overlap >= cfg.tau_overlap_lo && overlap <= cfg.tau_overlap_hi;
    let cc_pass = cc_count <= cfg.tau_cc as usize;
    let retained = conf_pass && overlap_pass && cc_pass;
    CaseReport {
        case_id: case_id.to_string(),
        slice_count,
        mean_conf: Some(mean_conf),
        overlap_ratio: Some(overlap),
        cc_count: Some(cc_count),
        conf_pass,
        overlap_pass,
        cc_pass,
        retained,
        reason: (!retained).then_some(RejectReason::Filtered),
    }
}

/// Aggregate over one cycle's reports. A case failing several criteria is
/// counted under each of them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationSummary {
    pub retained: usize,
    pub rejected: usize,
    pub rejected_by_conf: usize,
    pub rejected_by_overlap: usize,
    pub rejected_by_cc: usize,
    pub rejected_empty: usize,
}

impl CurationSummary {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a CaseReport>) -> Self {
        let mut s = CurationSummary::default();
        for r in reports {
            if r.retained {
                s.retained += 1;
                continue;
            }
            s.rejected += 1;
            if r.reason == Some(RejectReason::Empty) {
                s.rejected_empty += 1;
                continue;
            }
            s.rejected_by_conf += !r.conf_pass as usize;
            s.rejected_by_overlap += !r.overlap_pass as usize;
            s.rejected_by_cc += !r.cc_pass as usize;
        }
        s
    }
}
