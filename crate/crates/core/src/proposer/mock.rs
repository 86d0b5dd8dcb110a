//! Deterministic stand-ins for a real mask proposer.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::wire::ProposalRequest;
use crate::driver::seed::{derive_seed, stable_hash};
use crate::volume::{extract_slice, load_mask, Mask3D, SliceMask2D};

pub trait MaskProposer: Send {
    fn name(&self) -> String;

    /// Mask and confidence for one box-prompted slice, or an error message
    /// to send back as an error record.
    fn propose(&mut self, req: &ProposalRequest) -> Result<(SliceMask2D, f64), String>;
}

fn check_conf(conf: f64) -> Result<f64, String> {
    if (0.0..=1.0).contains(&conf) {
        Ok(conf)
    } else {
        Err(format!("confidence {conf} outside [0, 1]"))
    }
}

/// Returns the ground-truth slice restricted to the prompt box.
pub struct OracleProposer {
    gt_dir: Option<PathBuf>,
    cache: BTreeMap<String, Mask3D>,
    conf: f64,
}

impl OracleProposer {
    /// Ground truth read lazily from `<gt_dir>/<case>.vol`.
    pub fn from_dir(gt_dir: impl Into<PathBuf>, conf: f64) -> Result<Self, String> {
        Ok(OracleProposer {
            gt_dir: Some(gt_dir.into()),
            cache: BTreeMap::new(),
            conf: check_conf(conf)?,
        })
    }

    pub fn from_masks(masks: BTreeMap<String, Mask3D>, conf: f64) -> Result<Self, String> {
        Ok(OracleProposer {
            gt_dir: None,
            cache: masks,
            conf: check_conf(conf)?,
        })
    }

    fn ground_truth(&mut self, case: &str) -> Result<&Mask3D, String> {
        if !self.cache.contains_key(case) {
            let dir = self
                .gt_dir
                .as_ref()
                .ok_or_else(|| format!("no ground truth for case {case:?}"))?;
            let path = dir.join(format!("{case}.vol"));
            let m = load_mask(&path).map_err(|e| format!("ground truth {}: {e}", path.display()))?;
            self.cache.insert(case.to_string(), m);
        }
        Ok(&self.cache[case])
    }
}

impl MaskProposer for OracleProposer {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn propose(&mut self, req: &ProposalRequest) -> Result<(SliceMask2D, f64), String> {
        let conf = self.conf;
        let gt = self.ground_truth(&req.case_id)?;
        let dims = gt.dims();
        if (dims.h, dims.w) != (req.h, req.w) || req.slice_index >= dims.d {
            return Err(format!(
                "ground truth dims {dims} do not match request slice {} of {}x{}",
                req.slice_index, req.h, req.w
            ));
        }
        let slice = extract_slice(gt, req.slice_index).map_err(|e| e.to_string())?;
        Ok((slice.restricted_to(&req.bbox), conf))
    }
}

/// Independent Bernoulli pixels inside the prompt box, seeded per
/// `(seed, case, slice)`.
pub struct NoiseProposer {
    seed: u64,
    density: f64,
    conf: f64,
}

impl NoiseProposer {
    pub fn new(seed: u64, density: f64, conf: f64) -> Result<Self, String> {
        if !(0.0..=1.0).contains(&density) {
            return Err(format!("density {density} outside [0, 1]"));
        }
        Ok(NoiseProposer {
            seed,
            density,
            conf: check_conf(conf)?,
        })
    }
}

impl MaskProposer for NoiseProposer {
    fn name(&self) -> String {
        "noise".into()
    }

    fn propose(&mut self, req: &ProposalRequest) -> Result<(SliceMask2D, f64), String> {
        let key = derive_seed(self.seed, &req.case_id) ^ stable_hash(&(req.slice_index as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let mut mask = SliceMask2D::empty(req.h, req.w).map_err(|e| e.to_string())?;
        let b = req.bbox;
        for r in b.row_min..=b.row_max {
            for c in b.col_min..=b.col_max {
                if rng.random::<f64>() < self.density {
                    mask.set(r, c, true);
                }
            }
        }
        Ok((mask, self.conf))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fill {
    Full,
    Empty,
}

/// Fills the whole prompt box, or nothing.
pub struct ConstantProposer {
    fill: Fill,
    conf: f64,
}

impl ConstantProposer {
    pub fn new(fill: Fill, conf: f64) -> Result<Self, String> {
        Ok(ConstantProposer {
            fill,
            conf: check_conf(conf)?,
        })
    }
}

impl MaskProposer for ConstantProposer {
    fn name(&self) -> String {
        match self.fill {
            Fill::Full => "constant-full".into(),
            Fill::Empty => "constant-empty".into(),
        }
    }

    fn propose(&mut self, req: &ProposalRequest) -> Result<(SliceMask2D, f64), String> {
        let mut mask = SliceMask2D::empty(req.h, req.w).map_err(|e| e.to_string())?;
        if self.fill == Fill::Full {
            let b = req.bbox;
            for r in b.row_min..=b.row_max {
                for c in b.col_min..=b.col_max {
                    mask.set(r, c, true);
                }
            }
        }
        Ok((mask, self.conf))
    }
}

/// Serializable description of one mock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MockSpec {
    Oracle { gt_dir: PathBuf, conf: f64 },
    Noise { seed: u64, density: f64, conf: f64 },
    Constant { fill: Fill, conf: f64 },
}

impl MockSpec {
    /// Relative `gt_dir` paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<Box<dyn MaskProposer>, String> {
        Ok(match self {
            MockSpec::Oracle { gt_dir, conf } => Box::new(OracleProposer::from_dir(base.join(gt_dir), *conf)?),
            MockSpec::Noise { seed, density, conf } => Box::new(NoiseProposer::new(*seed, *density, *conf)?),
            MockSpec::Constant { fill, conf } => Box::new(ConstantProposer::new(*fill, *conf)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    /// Exact case ids served by this route.
    #[serde(default)]
    pub cases: Vec<String>,
    /// Case-id prefix served by this route.
    #[serde(default)]
    pub prefix: Option<String>,
    pub proposer: MockSpec,
}

/// Routing table for a mixed mock: first matching route wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterSpec {
    #[serde(default = "default_router_name")]
    pub name: String,
    #[serde(default, rename = "route")]
    pub routes: Vec<RouteSpec>,
    #[serde(default)]
    pub default: Option<MockSpec>,
}

fn default_router_name() -> String {
    "routed".into()
}

impl RouterSpec {
    pub fn from_toml_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn build(&self, base: &Path) -> Result<RoutedProposer, String> {
        let routes = self
            .routes
            .iter()
            .map(|r| Ok((r.cases.clone(), r.prefix.clone(), r.proposer.build(base)?)))
            .collect::<Result<Vec<_>, String>>()?;
        let default = self.default.as_ref().map(|d| d.build(base)).transpose()?;
        Ok(RoutedProposer {
            name: self.name.clone(),
            routes,
            default,
        })
    }
}

type Route = (Vec<String>, Option<String>, Box<dyn MaskProposer>);

/// Dispatches each request to a mock chosen by case id.
pub struct RoutedProposer {
    name: String,
    routes: Vec<Route>,
    default: Option<Box<dyn MaskProposer>>,
}

impl MaskProposer for RoutedProposer {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn propose(&mut self, req: &ProposalRequest) -> Result<(SliceMask2D, f64), String> {
        let case = req.case_id.as_str();
        for (cases, prefix, p) in &mut self.routes {
            let hit = cases.iter().any(|c| c == case) || prefix.as_deref().is_some_and(|pre| case.starts_with(pre));
            if hit {
                return p.propose(req);
            }
        }
        match &mut self.default {
            Some(p) => p.propose(req),
            None => Err(format!("no route for case {case:?}")),
        }
    }
}
