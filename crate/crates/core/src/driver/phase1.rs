//! Ingest, preprocessing and FDA pairing.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::fsutil::{list_cases, rel_string, sha256_hex, write_atomic};
use super::manifest::{CycleManifest, ManifestEntry, Origin};
use super::seed::derive_seed;
use super::{DriverError, Result};
use crate::fourier::apply_fda;
use crate::volume::{
    encode_mask, encode_volume, load_mask, load_volume, minmax_normalize, nonzero_fit_plan, Dims3, Mask3D, Volume3D,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingRecord {
    pub epoch: u32,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    #[serde(rename = "L")]
    pub l: f64,
    pub resample_per_epoch: bool,
    pub pairs: Vec<PairingRecord>,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Seeded partner choice: one draw per source in sorted order, per epoch when
/// resampling. Sources and targets must be sorted for reproducibility.
pub fn draw_pairing(
    sources: &[String],
    targets: &[String],
    seed: u64,
    epochs: u32,
    resample: bool,
) -> Vec<PairingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "pairing"));
    let rounds = if resample { epochs.max(1) } else { 1 };
    let mut out = Vec::with_capacity(sources.len() * rounds as usize);
    for epoch in 0..rounds {
        for s in sources {
            let k = rng.random_range(0..targets.len());
            out.push(PairingRecord {
                epoch,
                source: s.clone(),
                target: targets[k].clone(),
            });
        }
    }
    out
}

pub(crate) struct Dataset {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
}

pub(crate) fn ingest_source_image(out: &Path, case: &str) -> PathBuf {
    out.join("ingest/source/images").join(format!("{case}.vol"))
}

pub(crate) fn ingest_source_label(out: &Path, case: &str) -> PathBuf {
    out.join("ingest/source/labels").join(format!("{case}.vol"))
}

pub(crate) fn ingest_target_image(out: &Path, case: &str) -> PathBuf {
    out.join("ingest/target/images").join(format!("{case}.vol"))
}

pub(crate) fn fda_image(out: &Path, case: &str, epoch: Option<u32>) -> PathBuf {
    match epoch {
        None => out.join("phase1/images").join(format!("{case}.vol")),
        Some(e) => out.join(format!("phase1/epoch_{e:03}")).join(format!("{case}.vol")),
    }
}

pub(crate) fn discover(cfg: &RunConfig) -> Result<Dataset> {
    let src_img = cfg.data.source_dir.join("images");
    let src_lab = cfg.data.source_dir.join("labels");
    let sources = list_cases(&src_img)?;
    let labels = list_cases(&src_lab)?;
    if sources != labels {
        let a: BTreeSet<_> = sources.iter().collect();
        let b: BTreeSet<_> = labels.iter().collect();
        let odd: Vec<_> = a.symmetric_difference(&b).collect();
        return Err(DriverError::Dataset(format!(
            "source images and labels disagree on cases {odd:?}"
        )));
    }
    let targets = list_cases(&cfg.data.target_dir.join("images"))?;
    if sources.is_empty() {
        return Err(DriverError::Dataset(format!(
            "no source volumes in {}",
            src_img.display()
        )));
    }
    if targets.is_empty() {
        return Err(DriverError::Dataset(format!(
            "no target volumes in {}",
            cfg.data.target_dir.join("images").display()
        )));
    }
    Ok(Dataset { sources, targets })
}

fn preprocess(
    cfg: &RunConfig,
    img: Volume3D,
    label: Option<Mask3D>,
) -> crate::volume::Result<(Volume3D, Option<Mask3D>)> {
    let (img, label) = match cfg.preprocess.crop_to {
        Some([d, h, w]) => {
            let plan = nonzero_fit_plan(&img, Dims3::new(d, h, w))?;
            let label = label.map(|l| plan.apply_mask(&l)).transpose()?;
            (plan.apply(&img)?, label)
        }
        None => (img, label),
    };
    let img = if cfg.preprocess.normalize {
        minmax_normalize(&img)
    } else {
        img
    };
    Ok((img, label))
}

fn load_source(cfg: &RunConfig, case: &str) -> Result<(Volume3D, Mask3D)> {
    let ip = cfg.data.source_dir.join("images").join(format!("{case}.vol"));
    let lp = cfg.data.source_dir.join("labels").join(format!("{case}.vol"));
    let img = load_volume(&ip).map_err(|e| DriverError::volume(&ip, e))?;
    let lab = load_mask(&lp).map_err(|e| DriverError::volume(&lp, e))?;
    if img.dims() != lab.dims() {
        return Err(DriverError::Dataset(format!(
            "source {case}: image {} and label {} differ",
            img.dims(),
            lab.dims()
        )));
    }
    let (img, lab) = preprocess(cfg, img, Some(lab)).map_err(|e| DriverError::volume(&ip, e))?;
    Ok((img, lab.expect("label passed through")))
}

pub(crate) fn load_target(cfg: &RunConfig, case: &str) -> Result<Volume3D> {
    let ip = cfg.data.target_dir.join("images").join(format!("{case}.vol"));
    let img = load_volume(&ip).map_err(|e| DriverError::volume(&ip, e))?;
    Ok(preprocess(cfg, img, None).map_err(|e| DriverError::volume(&ip, e))?.0)
}

fn encode_vol(v: &Volume3D, path: &Path) -> Result<Vec<u8>> {
    encode_volume(v).map_err(|e| DriverError::volume(path, e))
}

/// Ingests both datasets, draws the FDA pairing and translates every source.
/// Writes `phase1/manifest.json` last and returns it.
pub fn phase1_prepare(cfg: &RunConfig, pool: &rayon::ThreadPool) -> Result<CycleManifest> {
    let out = cfg.output_dir.as_path();
    let ds = discover(cfg)?;
    let mut files: BTreeMap<String, String> = BTreeMap::new();

    let sources: Vec<(Volume3D, Mask3D)> = pool.install(|| {
        ds.sources
            .par_iter()
            .map(|c| load_source(cfg, c))
            .collect::<Result<_>>()
    })?;
    let targets: Vec<Volume3D> = pool.install(|| {
        ds.targets
            .par_iter()
            .map(|c| load_target(cfg, c))
            .collect::<Result<_>>()
    })?;

    let mut label_sums = Vec::with_capacity(sources.len());
    let mut orig_sums = Vec::with_capacity(sources.len());
    for (case, (img, lab)) in ds.sources.iter().zip(&sources) {
        let ip = ingest_source_image(out, case);
        let bytes = encode_vol(img, &ip)?;
        write_atomic(&ip, &bytes)?;
        orig_sums.push(sha256_hex(&bytes));
        let lp = ingest_source_label(out, case);
        let bytes = encode_mask(lab, img.spacing()).map_err(|e| DriverError::volume(&lp, e))?;
        write_atomic(&lp, &bytes)?;
        label_sums.push(sha256_hex(&bytes));
        files.insert(rel_string(out, &ip), orig_sums.last().unwrap().clone());
    }
    for (case, img) in ds.targets.iter().zip(&targets) {
        let p = ingest_target_image(out, case);
        let bytes = encode_vol(img, &p)?;
        write_atomic(&p, &bytes)?;
        files.insert(rel_string(out, &p), sha256_hex(&bytes));
    }

    let mut entries = Vec::new();
    let mut notes = BTreeSet::new();
    let pairs = draw_pairing(
        &ds.sources,
        &ds.targets,
        cfg.seed,
        cfg.fda.epochs,
        cfg.fda.resample_per_epoch,
    );
    if cfg.fda.enabled {
        let index: BTreeMap<&str, usize> = ds.targets.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let src_index: BTreeMap<&str, usize> = ds.sources.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let translated = pool.install(|| {
            pairs
                .par_iter()
                .map(|p| {
                    let s = &sources[src_index[p.source.as_str()]].0;
                    let t = &targets[index[p.target.as_str()]];
                    apply_fda(s, t, cfg.fda.l)
                        .map_err(|e| DriverError::Dataset(format!("FDA {} with {}: {e}", p.source, p.target)))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        for (p, outcome) in pairs.iter().zip(translated) {
            notes.extend(outcome.notes.iter().cloned());
            let epoch = cfg.fda.resample_per_epoch.then_some(p.epoch);
            let path = fda_image(out, &p.source, epoch);
            let bytes = encode_vol(&outcome.adapted, &path)?;
            write_atomic(&path, &bytes)?;
            let sum = sha256_hex(&bytes);
            if p.epoch == 0 {
                let i = src_index[p.source.as_str()];
                entries.push(ManifestEntry {
                    case_id: p.source.clone(),
                    origin: Origin::Source,
                    image: rel_string(out, &path),
                    image_sha256: sum,
                    label: rel_string(out, &ingest_source_label(out, &p.source)),
                    label_sha256: label_sums[i].clone(),
                });
            } else {
                files.insert(rel_string(out, &path), sum);
            }
        }
    } else {
        for (i, case) in ds.sources.iter().enumerate() {
            entries.push(ManifestEntry {
                case_id: case.clone(),
                origin: Origin::Source,
                image: rel_string(out, &ingest_source_image(out, case)),
                image_sha256: orig_sums[i].clone(),
                label: rel_string(out, &ingest_source_label(out, case)),
                label_sha256: label_sums[i].clone(),
            });
        }
    }

    let pairing = Pairing {
        l: cfg.fda.l,
        resample_per_epoch: cfg.fda.resample_per_epoch,
        pairs: if cfg.fda.enabled { pairs } else { Vec::new() },
        notes: notes.into_iter().collect(),
    };
    let mut text = serde_json::to_string_pretty(&pairing).expect("pairing serializes");
    text.push('\n');
    let pp = out.join("pairing.json");
    write_atomic(&pp, text.as_bytes())?;
    files.insert("pairing.json".into(), sha256_hex(text.as_bytes()));

    if let Some(s) = &cfg.schedule {
        let mut csv = String::from("epoch,lambda\n");
        for e in 0..cfg.fda.epochs {
            csv.push_str(&format!("{e},{}\n", s.lambda_at(e as f64)));
        }
        let p = out.join("phase1/lambda.csv");
        write_atomic(&p, csv.as_bytes())?;
        files.insert(rel_string(out, &p), sha256_hex(csv.as_bytes()));
    }

    let manifest = CycleManifest {
        cycle: 0,
        entries,
        refine: None,
        selection: None,
        files,
    };
    manifest.save(&out.join("phase1/manifest.json"))?;
    Ok(manifest)
}
