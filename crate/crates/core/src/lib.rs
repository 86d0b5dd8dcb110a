//! Volumetric domain-adaptation toolkit.
//!
//! * [`volume`]: volume and mask types, VOL1 I/O, preprocessing
//! * [`fourier`]: centered 3D spectra and low-frequency amplitude transplantation
//! * [`schedule`]: adversarial weight ramp and EMA teacher blending
//! * [`metrics`]: Dice, soft Dice, HD95, connected components
//! * [`curation`]: box prompts, confidence-gated refinement, volume selection
//! * [`proposer`]: MP1 child-process protocol for mask proposers, plus mocks
//! * [`driver`]: two-phase orchestration, manifests, threshold sweeps

pub mod curation;
pub mod driver;
pub mod fourier;
pub mod metrics;
pub mod proposer;
pub mod schedule;
pub mod volume;
