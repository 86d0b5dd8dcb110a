//! Threshold grid search over the selection predicate.
//!
//! Proposals are gathered once; every grid point then only re-runs the
//! predicate on cached per-case statistics.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::cycles::{build_pool, gather_proposals, load_case_inputs, teacher_dir, CaseSource};
use super::fsutil::write_atomic;
use super::phase1::discover;
use super::seed::derive_seed;
use super::{DriverError, Result};
use crate::curation::{judge, mean_confidence, overlap_ratio, proposal_components, stack_proposals, SelectConfig};
use crate::metrics::dice;
use crate::volume::read_vol1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_conf")]
    pub tau_conf: Vec<f64>,
    #[serde(default = "default_lo")]
    pub tau_overlap_lo: Vec<f64>,
    #[serde(default = "default_hi")]
    pub tau_overlap_hi: Vec<f64>,
    #[serde(default = "default_cc")]
    pub tau_cc: Vec<u32>,
    /// Sweep a seeded random subset of this many target cases.
    #[serde(default)]
    pub subset: Option<usize>,
    /// Teacher predictions are taken as for this cycle.
    #[serde(default = "default_cycle")]
    pub cycle: u32,
    /// Retained-fraction band used as the objective without ground truth.
    #[serde(default = "default_band")]
    pub band: [f64; 2],
}

fn default_conf() -> Vec<f64> {
    vec![0.5, 0.6, 0.7, 0.8, 0.9]
}
fn default_lo() -> Vec<f64> {
    vec![0.3, 0.4, 0.5]
}
fn default_hi() -> Vec<f64> {
    vec![0.6, 0.7, 0.8]
}
fn default_cc() -> Vec<u32> {
    vec![1, 3, 5, 10, 20, 30, 50]
}
fn default_cycle() -> u32 {
    2
}
fn default_band() -> [f64; 2] {
    [0.5, 0.9]
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            tau_conf: default_conf(),
            tau_overlap_lo: default_lo(),
            tau_overlap_hi: default_hi(),
            tau_cc: default_cc(),
            subset: None,
            cycle: default_cycle(),
            band: default_band(),
        }
    }
}

impl GridSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DriverError::io(path, e))?;
        toml::from_str(&text).map_err(|e| DriverError::Config(format!("{}: {e}", path.display())))
    }

    /// Cartesian product in nested grid order, keeping `lo < hi`.
    pub fn configurations(&self, base: &SelectConfig) -> Result<Vec<SelectConfig>> {
        let mut out = Vec::new();
        for &c in &self.tau_conf {
            for &lo in &self.tau_overlap_lo {
                for &hi in &self.tau_overlap_hi {
                    if lo >= hi {
                        continue;
                    }
                    for &cc in &self.tau_cc {
                        let mut cfg = SelectConfig::new(c, (lo, hi), cc)?.with_connectivity(base.connectivity);
                        cfg.clip_to_bbox = base.clip_to_bbox;
                        out.push(cfg);
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(DriverError::EmptyGrid);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub rank: usize,
    pub tau_conf: f64,
    pub tau_overlap_lo: f64,
    pub tau_overlap_hi: f64,
    pub tau_cc: u32,
    pub retained: usize,
    pub rejected: usize,
    pub score: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "rank,tau_conf,tau_overlap_lo,tau_overlap_hi,tau_cc,retained,rejected,score";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.rank,
            self.tau_conf,
            self.tau_overlap_lo,
            self.tau_overlap_hi,
            self.tau_cc,
            self.retained,
            self.rejected,
            self.score
        )
    }
}

struct CaseStats {
    slice_count: usize,
    mean_conf: f64,
    overlap: f64,
    cc: usize,
    /// Dice of the stacked proposals against ground truth.
    quality: Option<f64>,
}

/// Score of one configuration. With ground truth every retained case adds
/// `2 * quality - 1`, so keeping a case whose proposals disagree with the
/// truth costs. Without it the objective is 1 inside the retained-fraction
/// band and minus the distance to the band outside.
fn score(kept: &[&CaseStats], total: usize, with_gt: bool, band: [f64; 2]) -> f64 {
    if with_gt {
        return kept.iter().map(|s| 2.0 * s.quality.unwrap_or(0.0) - 1.0).sum();
    }
    let f = kept.len() as f64 / total.max(1) as f64;
    if f < band[0] {
        f - band[0]
    } else if f > band[1] {
        band[1] - f
    } else {
        1.0
    }
}

/// Ranks every grid configuration, best first; ties keep grid order. Writes
/// the table to `csv_out` when given.
pub fn grid_sweep(cfg: &RunConfig, grids: &GridSpec, csv_out: Option<&Path>) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if grids.band[0].is_nan() || grids.band[1].is_nan() || grids.band[0] > grids.band[1] {
        return Err(DriverError::Config(format!("sweep band {:?} is inverted", grids.band)));
    }
    let configs = grids.configurations(&cfg.select.to_config()?)?;
    let pool = build_pool(cfg)?;
    let mut targets = discover(cfg)?.targets;
    if let Some(n) = grids.subset.filter(|&n| n < targets.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "sweep"));
        targets.shuffle(&mut rng);
        targets.truncate(n.max(1));
        targets.sort();
    }
    let inputs = load_case_inputs(
        cfg,
        &targets,
        &teacher_dir(cfg, grids.cycle),
        CaseSource::Dataset,
        &pool,
    )?;
    let proposals = gather_proposals(cfg, &inputs)?;
    let base = cfg.select.to_config()?;

    let mut stats: Vec<Option<CaseStats>> = Vec::with_capacity(inputs.len());
    let mut with_gt = cfg.data.target_gt_dir.is_some();
    for (c, p) in inputs.iter().zip(&proposals) {
        if p.is_empty() {
            stats.push(None);
            continue;
        }
        let quality = match &cfg.data.target_gt_dir {
            Some(dir) => {
                let gp = dir.join(format!("{}.vol", c.case_id));
                if gp.is_file() {
                    let gt = read_vol1(&gp).map_err(|e| DriverError::volume(&gp, e))?.into_mask();
                    Some(dice(&stack_proposals(p, c.image.dims())?, &gt)?)
                } else {
                    with_gt = false;
                    None
                }
            }
            None => None,
        };
        stats.push(Some(CaseStats {
            slice_count: p.len(),
            mean_conf: mean_confidence(p)?,
            overlap: overlap_ratio(p, base.clip_to_bbox)?,
            cc: proposal_components(p, base.connectivity)?,
            quality,
        }));
    }

    let mut rows: Vec<SweepRow> = configs
        .iter()
        .map(|sc| {
            let kept: Vec<&CaseStats> = stats
                .iter()
                .flatten()
                .filter(|s| judge("", s.slice_count, s.mean_conf, s.overlap, s.cc, sc).retained)
                .collect();
            SweepRow {
                rank: 0,
                tau_conf: sc.tau_conf,
                tau_overlap_lo: sc.tau_overlap_lo,
                tau_overlap_hi: sc.tau_overlap_hi,
                tau_cc: sc.tau_cc,
                retained: kept.len(),
                rejected: stats.len() - kept.len(),
                score: score(&kept, stats.len(), with_gt, grids.band),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.score.total_cmp(&a.score));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    if let Some(p) = csv_out {
        let mut csv = String::from(SweepRow::CSV_HEADER);
        csv.push('\n');
        for r in &rows {
            csv.push_str(&r.csv_line());
            csv.push('\n');
        }
        write_atomic(p, csv.as_bytes())?;
    }
    Ok(rows)
}
