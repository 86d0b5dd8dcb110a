//! Run configuration (TOML). Relative paths resolve against the directory of
//! the config file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{DriverError, Result};
use crate::curation::{RefineConfig, SelectConfig};
use crate::metrics::Connectivity;
use crate::proposer::SessionOptions;
use crate::schedule::LambdaSchedule;
use crate::volume::Dims3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Holds `images/<case>.vol` and `labels/<case>.vol`.
    pub source_dir: PathBuf,
    /// Holds `images/<case>.vol`.
    pub target_dir: PathBuf,
    /// Teacher predictions for trainerless cycles: `cycle_<t>/<case>.vol`,
    /// falling back to `<case>.vol`.
    pub predictions_dir: PathBuf,
    /// Optional target labels, used only for metric summaries and sweeps.
    #[serde(default)]
    pub target_gt_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    #[serde(default = "yes")]
    pub normalize: bool,
    /// Nonzero crop then center fit; labels follow their image's window.
    #[serde(default)]
    pub crop_to: Option<[usize; 3]>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            normalize: true,
            crop_to: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdaConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(rename = "L", default = "default_l")]
    pub l: f64,
    /// Draw a fresh target partner per source and epoch.
    #[serde(default)]
    pub resample_per_epoch: bool,
    /// Epoch count for resampled pairings and the exported lambda table.
    #[serde(default = "default_fda_epochs")]
    pub epochs: u32,
}

impl Default for FdaConfig {
    fn default() -> Self {
        FdaConfig {
            enabled: true,
            l: default_l(),
            resample_per_epoch: false,
            epochs: default_fda_epochs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectSection {
    pub tau_conf: f64,
    pub overlap: [f64; 2],
    pub tau_cc: u32,
    #[serde(default)]
    pub connectivity: Connectivity,
    #[serde(default)]
    pub clip_to_bbox: bool,
    #[serde(default)]
    pub on_reject: RejectPolicy,
}

/// What a rejected case contributes to the cycle's training set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectPolicy {
    #[default]
    Drop,
    /// Keep the teacher label, tagged `target-fallback` in the manifest.
    Teacher,
}

impl SelectSection {
    pub fn to_config(&self) -> Result<SelectConfig> {
        let mut cfg = SelectConfig::new(self.tau_conf, (self.overlap[0], self.overlap[1]), self.tau_cc)?
            .with_connectivity(self.connectivity);
        cfg.clip_to_bbox = self.clip_to_bbox;
        Ok(cfg)
    }
}

impl Default for SelectSection {
    /// Midpoints of the default sweep grids.
    fn default() -> Self {
        SelectSection {
            tau_conf: 0.7,
            overlap: [0.4, 0.7],
            tau_cc: 10,
            connectivity: Connectivity::default(),
            clip_to_bbox: false,
            on_reject: RejectPolicy::Drop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmaConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Blend after every `period`-th student checkpoint.
    #[serde(default = "one")]
    pub period: u32,
    /// Initial teacher parameters; the first student checkpoint otherwise.
    #[serde(default)]
    pub teacher_init: Option<PathBuf>,
}

impl Default for EmaConfig {
    fn default() -> Self {
        EmaConfig {
            alpha: default_alpha(),
            period: 1,
            teacher_init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposerConfig {
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Parallel child processes; cases are dealt round-robin.
    #[serde(default = "one_usize")]
    pub sessions: usize,
}

impl ProposerConfig {
    pub fn session_options(&self) -> SessionOptions {
        SessionOptions {
            timeout: Duration::from_secs_f64(self.timeout_secs),
            window: self.window,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceVariant {
    #[default]
    Original,
    Fda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub command: Vec<String>,
    /// Passed through to the trainer as a hint.
    #[serde(default = "default_trainer_epochs")]
    pub epochs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cycles")]
    pub cycles: u32,
    /// Worker pool size; `VOLADAPT_WORKERS` caps it.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Which source images enter the cycle manifests.
    #[serde(default)]
    pub source_variant: SourceVariant,
    pub data: DataConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub fda: FdaConfig,
    #[serde(default = "default_refine")]
    pub refine: RefineConfig,
    #[serde(default)]
    pub select: SelectSection,
    #[serde(default)]
    pub schedule: Option<LambdaSchedule>,
    #[serde(default)]
    pub ema: EmaConfig,
    pub proposer: ProposerConfig,
    #[serde(default)]
    pub trainer: Option<TrainerConfig>,
}

fn yes() -> bool {
    true
}
fn one() -> u32 {
    1
}
fn one_usize() -> usize {
    1
}
fn default_l() -> f64 {
    0.02
}
fn default_fda_epochs() -> u32 {
    1
}
fn default_alpha() -> f64 {
    0.99
}
fn default_timeout() -> f64 {
    30.0
}
fn default_window() -> usize {
    32
}
fn default_trainer_epochs() -> u32 {
    1
}
fn default_cycles() -> u32 {
    5
}
fn default_refine() -> RefineConfig {
    RefineConfig { tau_conf: 0.7 }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| DriverError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DriverError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.source_dir);
        fix(&mut self.data.target_dir);
        fix(&mut self.data.predictions_dir);
        if let Some(p) = &mut self.data.target_gt_dir {
            fix(p);
        }
        if let Some(p) = &mut self.ema.teacher_init {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DriverError::Config(m));
        if self.cycles < 1 {
            return bad("cycles must be at least 1".into());
        }
        let dirs = [
            &self.output_dir,
            &self.data.source_dir,
            &self.data.target_dir,
            &self.data.predictions_dir,
        ];
        for (i, a) in dirs.iter().enumerate() {
            for b in &dirs[i + 1..] {
                if a == b {
                    return bad(format!("directory {} is used twice", a.display()));
                }
            }
        }
        if self.data.target_gt_dir.as_ref() == Some(&self.output_dir) {
            return bad("target_gt_dir must differ from output_dir".into());
        }
        if !(self.fda.l > 0.0 && self.fda.l < 1.0) {
            return bad(format!("fda.L must lie in (0, 1), got {}", self.fda.l));
        }
        if self.fda.epochs < 1 {
            return bad("fda.epochs must be at least 1".into());
        }
        if self.source_variant == SourceVariant::Fda && !self.fda.enabled {
            return bad("source_variant = \"fda\" needs fda.enabled".into());
        }
        if let Some(t) = self.preprocess.crop_to {
            Dims3::new(t[0], t[1], t[2])
                .validate()
                .map_err(|e| DriverError::Config(format!("preprocess.crop_to: {e}")))?;
        }
        self.refine.validate()?;
        self.select.to_config()?;
        if let Some(s) = &self.schedule {
            s.validate()?;
        }
        if !(self.ema.alpha > 0.0 && self.ema.alpha < 1.0) {
            return bad(format!("ema.alpha must lie in (0, 1), got {}", self.ema.alpha));
        }
        if self.ema.period < 1 {
            return bad("ema.period must be at least 1".into());
        }
        if self.proposer.command.is_empty() {
            return bad("proposer.command is empty".into());
        }
        if !(self.proposer.timeout_secs.is_finite() && self.proposer.timeout_secs > 0.0) {
            return bad("proposer.timeout_secs must be positive".into());
        }
        if self.proposer.window < 1 || self.proposer.sessions < 1 {
            return bad("proposer.window and proposer.sessions must be at least 1".into());
        }
        if let Some(t) = &self.trainer {
            if t.command.is_empty() {
                return bad("trainer.command is empty".into());
            }
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }

    /// Pool size after applying the `VOLADAPT_WORKERS` cap.
    pub fn effective_workers(&self) -> usize {
        let requested = self
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let cap = std::env::var("VOLADAPT_WORKERS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0);
        cap.map_or(requested, |c| requested.min(c)).max(1)
    }

    /// Digest of every setting that affects outputs. The output location is
    /// excluded so identical runs in different directories agree.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.workers = None;
        super::fsutil::sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}
