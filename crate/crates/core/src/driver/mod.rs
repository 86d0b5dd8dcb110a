//! Two-phase orchestration at desk scale.
//!
//! Phase I ingests and preprocesses both datasets and translates every
//! source volume with [`apply_fda`](crate::fourier::apply_fda) against a
//! seeded random target partner. Phase II runs cycles `t = 1..=N`: cycle 1
//! refines teacher labels slice by slice, later cycles keep or drop whole
//! target cases. Each cycle writes a checksummed manifest, curation and
//! metric reports, then optionally hands off to an external trainer and
//! blends its checkpoints into the EMA teacher.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! run.json                      config digest, checked on resume
//! pairing.json                  source/target FDA partners
//! ingest/source/{images,labels}/<case>.vol
//! ingest/target/images/<case>.vol
//! phase1/images/<case>.vol      (phase1/epoch_<e>/... when resampling)
//! phase1/lambda.csv             when a schedule is configured
//! phase1/manifest.json          written last; marks phase I complete
//! cycle_<t>/labels/<case>.vol
//! cycle_<t>/manifest.json
//! cycle_<t>/curation.jsonl
//! cycle_<t>/metrics.csv
//! cycle_<t>/trainer/            trainer output (trainer mode)
//! cycle_<t>/teacher.pvec        EMA teacher (trainer mode)
//! cycle_<t>/done.json           written last; marks the cycle complete
//! ```

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod config;
pub mod fsutil;
pub mod manifest;
pub mod seed;

mod cycles;
mod phase1;
mod sweep;

pub use config::{RejectPolicy, RunConfig};
pub use cycles::{run, CycleReport, RunOptions, RunReport};
pub use manifest::{CycleManifest, ManifestEntry, Origin};
pub use phase1::{phase1_prepare, Pairing, PairingRecord};
pub use sweep::{grid_sweep, GridSpec, SweepRow};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{context}: {source}")]
    Volume {
        context: String,
        source: crate::volume::VolumeError,
    },
    #[error(transparent)]
    Fourier(#[from] crate::fourier::FourierError),
    #[error(transparent)]
    Curation(#[from] crate::curation::CurationError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error(transparent)]
    Schedule(#[from] crate::schedule::ScheduleError),
    #[error("proposer, case {case} slice {slice}: {source}")]
    Proposer {
        case: String,
        slice: usize,
        source: crate::proposer::ProtocolError,
    },
    #[error("proposer: {0}")]
    Session(#[from] crate::proposer::ProtocolError),
    #[error("trainer: {0}")]
    Trainer(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error("sweep grid is empty after requiring tau_overlap_lo < tau_overlap_hi")]
    EmptyGrid,
}

impl DriverError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DriverError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn volume(path: &Path, source: crate::volume::VolumeError) -> Self {
        DriverError::Volume {
            context: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = DriverError> = std::result::Result<T, E>;
