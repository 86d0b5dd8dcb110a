//! The self-training cycle loop with resumable, checksummed state.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RejectPolicy, RunConfig, SourceVariant};
use super::fsutil::{create_dir, list_cases, rel_string, sha256_file, sha256_hex, write_atomic};
use super::manifest::{CycleManifest, ManifestEntry, Origin, RefineTotals};
use super::phase1::{ingest_source_image, ingest_target_image, load_target, phase1_prepare};
use super::{DriverError, Result};
use crate::curation::{
    prompt_boxes, refine_volume_with_summary, select_case, CaseReport, CurationSummary, SliceProposal,
};
use crate::metrics::{dice, hd95};
use crate::proposer::{ProposalRequest, Session};
use crate::schedule::{ema_blend, ParamVector};
use crate::volume::{encode_mask, load_volume, read_vol1, BBox2D, Mask3D, Volume3D};

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Continue from the last completed cycle of an existing run.
    pub resume: bool,
    /// Return after completing this cycle, as if interrupted.
    pub stop_after_cycle: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct CycleReport {
    pub cycle: u32,
    pub manifest: CycleManifest,
    /// Completed by an earlier invocation and only verified now.
    pub resumed: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub phase1: CycleManifest,
    pub cycles: Vec<CycleReport>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunStamp {
    config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DoneMarker {
    cycle: u32,
    manifest_sha256: String,
    files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
struct RefineRecord<'a> {
    case_id: &'a str,
    prompted: usize,
    replaced: &'a [usize],
}

/// Where target images are read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CaseSource {
    /// Preprocessed copies under the output directory.
    Ingest,
    /// The target dataset, preprocessed on the fly.
    Dataset,
}

/// One target case ready for prompting.
pub(crate) struct CaseInput {
    pub case_id: String,
    pub image: Volume3D,
    pub teacher: Mask3D,
    pub boxes: Vec<(usize, BBox2D)>,
}

fn cycle_dir(out: &Path, t: u32) -> PathBuf {
    out.join(format!("cycle_{t}"))
}

pub(crate) fn teacher_dir(cfg: &RunConfig, t: u32) -> PathBuf {
    if cfg.trainer.is_some() && t >= 2 {
        return cycle_dir(&cfg.output_dir, t - 1).join("trainer/predictions");
    }
    let per_cycle = cfg.data.predictions_dir.join(format!("cycle_{t}"));
    if per_cycle.is_dir() {
        per_cycle
    } else {
        cfg.data.predictions_dir.clone()
    }
}

pub(crate) fn load_case_inputs(
    cfg: &RunConfig,
    targets: &[String],
    teacher_dir: &Path,
    source: CaseSource,
    pool: &rayon::ThreadPool,
) -> Result<Vec<CaseInput>> {
    pool.install(|| {
        targets
            .par_iter()
            .map(|case| {
                let image = match source {
                    CaseSource::Ingest => {
                        let ip = ingest_target_image(&cfg.output_dir, case);
                        load_volume(&ip).map_err(|e| DriverError::volume(&ip, e))?
                    }
                    CaseSource::Dataset => load_target(cfg, case)?,
                };
                let tp = teacher_dir.join(format!("{case}.vol"));
                if !tp.is_file() {
                    return Err(DriverError::Dataset(format!("no teacher prediction {}", tp.display())));
                }
                let teacher = read_vol1(&tp).map_err(|e| DriverError::volume(&tp, e))?.into_mask();
                if teacher.dims() != image.dims() {
                    return Err(DriverError::Dataset(format!(
                        "teacher prediction {} is {}, target image is {}",
                        tp.display(),
                        teacher.dims(),
                        image.dims()
                    )));
                }
                let boxes = prompt_boxes(&teacher);
                Ok(CaseInput {
                    case_id: case.clone(),
                    image,
                    teacher,
                    boxes,
                })
            })
            .collect()
    })
}

/// Case index, slice index, prompt box, answer.
type LaneItem = (usize, usize, BBox2D, crate::proposer::Proposal);

/// Prompts every box of every case through MP1 sessions, cases dealt
/// round-robin over `proposer.sessions` child processes. Any failed request
/// aborts.
pub(crate) fn gather_proposals(cfg: &RunConfig, cases: &[CaseInput]) -> Result<Vec<Vec<SliceProposal>>> {
    let total: usize = cases.iter().map(|c| c.boxes.len()).sum();
    let mut out: Vec<Vec<SliceProposal>> = cases.iter().map(|_| Vec::new()).collect();
    if total == 0 {
        return Ok(out);
    }
    let lanes = cfg.proposer.sessions.min(cases.len()).max(1);
    let opts = cfg.proposer.session_options();
    let lane_results: Vec<Result<Vec<LaneItem>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..lanes)
            .map(|lane| {
                s.spawn(move || -> Result<Vec<_>> {
                    let mut keys = Vec::new();
                    let mut reqs = Vec::new();
                    for (ci, c) in cases.iter().enumerate().filter(|(i, _)| i % lanes == lane) {
                        let dims = c.image.dims();
                        for &(j, bbox) in &c.boxes {
                            let image = c.image.slice_data(j).expect("box slice inside volume").to_vec();
                            keys.push((ci, j, bbox));
                            reqs.push(ProposalRequest {
                                case_id: c.case_id.clone(),
                                slice_index: j,
                                bbox,
                                h: dims.h,
                                w: dims.w,
                                image,
                            });
                        }
                    }
                    if reqs.is_empty() {
                        return Ok(Vec::new());
                    }
                    let session = Session::spawn(&cfg.proposer.command, opts)?;
                    let results = session.propose_many(&reqs);
                    session.shutdown();
                    keys.into_iter()
                        .zip(results)
                        .map(|((ci, j, bbox), r)| {
                            r.map(|p| (ci, j, bbox, p)).map_err(|source| DriverError::Proposer {
                                case: cases[ci].case_id.clone(),
                                slice: j,
                                source,
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("proposer lane panicked"))
            .collect()
    });
    for lane in lane_results {
        for (ci, j, bbox, p) in lane? {
            out[ci].push(SliceProposal::new(j, p.mask, p.confidence, bbox)?);
        }
    }
    Ok(out)
}

fn source_entries(cfg: &RunConfig, phase1: &CycleManifest) -> Result<Vec<ManifestEntry>> {
    let out = &cfg.output_dir;
    phase1
        .entries
        .iter()
        .map(|e| {
            let mut e = e.clone();
            if cfg.source_variant == SourceVariant::Original {
                e.image = rel_string(out, &ingest_source_image(out, &e.case_id));
                e.image_sha256 = phase1
                    .files
                    .get(&e.image)
                    .cloned()
                    .or_else(|| (!cfg.fda.enabled).then(|| e.image_sha256.clone()))
                    .ok_or_else(|| DriverError::Manifest {
                        path: out.join("phase1/manifest.json"),
                        message: format!("no checksum for {}", e.image),
                    })?;
            }
            Ok(e)
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn metrics_csv(cfg: &RunConfig, rows: &[(&str, &Mask3D, bool)]) -> Result<String> {
    let mut csv = String::from("case,included,dice,hd95_voxels\n");
    for &(case, label, included) in rows {
        let gt = match &cfg.data.target_gt_dir {
            Some(dir) => {
                let p = dir.join(format!("{case}.vol"));
                if p.is_file() {
                    Some(read_vol1(&p).map_err(|e| DriverError::volume(&p, e))?.into_mask())
                } else {
                    None
                }
            }
            None => None,
        };
        let (d, h) = match gt {
            Some(gt) => (Some(dice(label, &gt)?), hd95(label, &gt).ok()),
            None => (None, None),
        };
        csv.push_str(&format!("{case},{included},{},{}\n", fmt_opt(d), fmt_opt(h)));
    }
    Ok(csv)
}

fn run_trainer(cfg: &RunConfig, t: u32, cdir: &Path) -> Result<Vec<PathBuf>> {
    let trainer = cfg.trainer.as_ref().expect("trainer mode");
    let tdir = cdir.join("trainer");
    create_dir(&tdir)?;
    let mut cmd = Command::new(&trainer.command[0]);
    cmd.args(&trainer.command[1..])
        .arg("--manifest")
        .arg(cdir.join("manifest.json"))
        .arg("--out")
        .arg(&tdir)
        .arg("--epochs")
        .arg(trainer.epochs.to_string())
        .arg("--cycle")
        .arg(t.to_string())
        .stdin(Stdio::null());
    let prev = if t >= 2 {
        Some(cycle_dir(&cfg.output_dir, t - 1).join("teacher.pvec"))
    } else {
        None
    };
    if let Some(p) = prev.as_ref().filter(|p| p.is_file()) {
        cmd.arg("--teacher").arg(p);
    }
    let status = cmd
        .status()
        .map_err(|e| DriverError::Trainer(format!("cannot start {:?}: {e}", trainer.command[0])))?;
    if !status.success() {
        return Err(DriverError::Trainer(format!("cycle {t}: trainer exited with {status}")));
    }
    let mut students: Vec<PathBuf> = std::fs::read_dir(&tdir)
        .map_err(|e| DriverError::io(&tdir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "pvec")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("student"))
        })
        .collect();
    students.sort();
    if students.is_empty() {
        return Err(DriverError::Trainer(format!(
            "cycle {t}: no student*.pvec in {}",
            tdir.display()
        )));
    }
    if !tdir.join("predictions").is_dir() {
        return Err(DriverError::Trainer(format!(
            "cycle {t}: no predictions/ in {}",
            tdir.display()
        )));
    }
    Ok(students)
}

/// Blends student checkpoints into the teacher in file-name order, every
/// `period`-th checkpoint.
fn ema_update(cfg: &RunConfig, t: u32, students: &[PathBuf]) -> Result<ParamVector> {
    let prev = cycle_dir(&cfg.output_dir, t.saturating_sub(1)).join("teacher.pvec");
    let mut teacher = if t >= 2 && prev.is_file() {
        ParamVector::load(&prev)?
    } else if let Some(init) = &cfg.ema.teacher_init {
        ParamVector::load(init)?
    } else {
        ParamVector::load(&students[0])?
    };
    for (k, s) in students.iter().enumerate() {
        if (k as u32 + 1).is_multiple_of(cfg.ema.period) {
            teacher = ema_blend(&teacher, &ParamVector::load(s)?, cfg.ema.alpha)?;
        }
    }
    Ok(teacher)
}

fn collect_files(base: &Path, dir: &Path, into: &mut BTreeMap<String, String>) -> Result<()> {
    let rd = std::fs::read_dir(dir).map_err(|e| DriverError::io(dir, e))?;
    for entry in rd {
        let p = entry.map_err(|e| DriverError::io(dir, e))?.path();
        if p.is_dir() {
            collect_files(base, &p, into)?;
        } else {
            into.insert(rel_string(base, &p), sha256_file(&p)?);
        }
    }
    Ok(())
}

fn run_cycle(
    cfg: &RunConfig,
    t: u32,
    phase1: &CycleManifest,
    targets: &[String],
    pool: &rayon::ThreadPool,
) -> Result<CycleManifest> {
    let out = cfg.output_dir.as_path();
    let cdir = cycle_dir(out, t);
    create_dir(&cdir)?;
    let inputs = load_case_inputs(cfg, targets, &teacher_dir(cfg, t), CaseSource::Ingest, pool)?;
    let proposals = gather_proposals(cfg, &inputs)?;

    let mut entries = source_entries(cfg, phase1)?;
    let mut curation = String::new();
    // None marks a case left out of the training set
    let mut metric_rows: Vec<(&str, Mask3D, Option<Origin>)> = Vec::new();
    let (refine, selection) = if t == 1 {
        let refined = pool.install(|| {
            inputs
                .par_iter()
                .zip(&proposals)
                .map(|(c, p)| Ok(refine_volume_with_summary(&c.teacher, p, &cfg.refine)?))
                .collect::<Result<Vec<_>>>()
        })?;
        let mut totals = RefineTotals::default();
        for (c, (mask, summary)) in inputs.iter().zip(refined) {
            totals.cases += 1;
            totals.prompted_slices += summary.prompted;
            totals.replaced_slices += summary.replaced.len();
            let rec = RefineRecord {
                case_id: &c.case_id,
                prompted: summary.prompted,
                replaced: &summary.replaced,
            };
            curation.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            curation.push('\n');
            metric_rows.push((&c.case_id, mask, Some(Origin::TargetRefined)));
        }
        curation.push_str(&serde_json::to_string(&serde_json::json!({ "summary": totals })).unwrap());
        curation.push('\n');
        (Some(totals), None)
    } else {
        let scfg = cfg.select.to_config()?;
        let reports = pool.install(|| {
            inputs
                .par_iter()
                .zip(&proposals)
                .map(|(c, p)| {
                    if p.is_empty() {
                        Ok(CaseReport::empty(&c.case_id))
                    } else {
                        Ok(select_case(&c.case_id, p, &scfg)?)
                    }
                })
                .collect::<Result<Vec<_>>>()
        })?;
        for (c, r) in inputs.iter().zip(&reports) {
            curation.push_str(&serde_json::to_string(r).expect("report serializes"));
            curation.push('\n');
            let origin = match (r.retained, cfg.select.on_reject) {
                (true, _) => Some(Origin::TargetSelected),
                (false, RejectPolicy::Teacher) => Some(Origin::TargetFallback),
                (false, RejectPolicy::Drop) => None,
            };
            metric_rows.push((&c.case_id, c.teacher.clone(), origin));
        }
        let summary = CurationSummary::from_reports(&reports);
        curation.push_str(&serde_json::to_string(&serde_json::json!({ "summary": summary })).unwrap());
        curation.push('\n');
        (None, Some(summary))
    };

    for ((case, mask, origin), c) in metric_rows.iter().zip(&inputs) {
        let Some(origin) = *origin else {
            continue;
        };
        let lp = cdir.join("labels").join(format!("{case}.vol"));
        let bytes = encode_mask(mask, c.image.spacing()).map_err(|e| DriverError::volume(&lp, e))?;
        write_atomic(&lp, &bytes)?;
        entries.push(ManifestEntry {
            case_id: case.to_string(),
            origin,
            image: rel_string(out, &ingest_target_image(out, case)),
            image_sha256: sha256_file(&ingest_target_image(out, case))?,
            label: rel_string(out, &lp),
            label_sha256: sha256_hex(&bytes),
        });
    }

    let mut files = BTreeMap::new();
    let cp = cdir.join("curation.jsonl");
    write_atomic(&cp, curation.as_bytes())?;
    files.insert(rel_string(out, &cp), sha256_hex(curation.as_bytes()));
    let rows: Vec<(&str, &Mask3D, bool)> = metric_rows.iter().map(|(c, m, o)| (*c, m, o.is_some())).collect();
    let csv = metrics_csv(cfg, &rows)?;
    let mp = cdir.join("metrics.csv");
    write_atomic(&mp, csv.as_bytes())?;
    files.insert(rel_string(out, &mp), sha256_hex(csv.as_bytes()));

    let manifest = CycleManifest {
        cycle: t,
        entries,
        refine,
        selection,
        files,
    };
    let manifest_sha256 = manifest.save(&cdir.join("manifest.json"))?;

    let mut done_files = BTreeMap::new();
    if cfg.trainer.is_some() {
        let students = run_trainer(cfg, t, &cdir)?;
        let teacher = ema_update(cfg, t, &students)?;
        let tp = cdir.join("teacher.pvec");
        let bytes = teacher.to_bytes();
        write_atomic(&tp, &bytes)?;
        collect_files(out, &cdir.join("trainer"), &mut done_files)?;
        done_files.insert(rel_string(out, &tp), sha256_hex(&bytes));
    }
    let done = DoneMarker {
        cycle: t,
        manifest_sha256,
        files: done_files,
    };
    write_atomic(
        &cdir.join("done.json"),
        serde_json::to_string_pretty(&done)
            .expect("marker serializes")
            .as_bytes(),
    )?;
    Ok(manifest)
}

fn verify_cycle(out: &Path, t: u32) -> Result<CycleManifest> {
    let cdir = cycle_dir(out, t);
    let dp = cdir.join("done.json");
    let text = std::fs::read_to_string(&dp).map_err(|e| DriverError::io(&dp, e))?;
    let done: DoneMarker =
        serde_json::from_str(&text).map_err(|e| DriverError::Resume(format!("{}: {e}", dp.display())))?;
    let mp = cdir.join("manifest.json");
    if done.cycle != t || sha256_file(&mp)? != done.manifest_sha256 {
        return Err(DriverError::Resume(format!(
            "{} does not match its completion marker",
            mp.display()
        )));
    }
    let manifest = CycleManifest::load(&mp)?;
    if manifest.cycle != t {
        return Err(DriverError::Resume(format!(
            "{} claims cycle {}",
            mp.display(),
            manifest.cycle
        )));
    }
    manifest
        .verify(out, &mp)
        .map_err(|e| DriverError::Resume(e.to_string()))?;
    for (rel, sum) in &done.files {
        let p = out.join(rel);
        if !p.is_file() || &sha256_file(&p)? != sum {
            return Err(DriverError::Resume(format!("{rel} is missing or changed")));
        }
    }
    Ok(manifest)
}

/// Deletes `cycle_<k>` for every `k >= t`: a redone cycle invalidates all
/// later ones.
fn remove_cycles_from(out: &Path, t: u32) -> Result<()> {
    let rd = std::fs::read_dir(out).map_err(|e| DriverError::io(out, e))?;
    for entry in rd {
        let p = entry.map_err(|e| DriverError::io(out, e))?.path();
        let k = p
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("cycle_"))
            .and_then(|n| n.parse::<u32>().ok());
        if k.is_some_and(|k| k >= t) && p.is_dir() {
            std::fs::remove_dir_all(&p).map_err(|e| DriverError::io(&p, e))?;
        }
    }
    Ok(())
}

pub(crate) fn build_pool(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.effective_workers())
        .build()
        .map_err(|e| DriverError::Config(format!("worker pool: {e}")))
}

/// Phase I, then cycles `1..=N`. With `resume`, verified completed stages
/// are kept and the first incomplete cycle is redone from scratch.
pub fn run(cfg: &RunConfig, opts: RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let out = cfg.output_dir.as_path();
    create_dir(out)?;
    let pool = build_pool(cfg)?;
    let stamp = RunStamp {
        config_digest: cfg.digest(),
    };
    let sp = out.join("run.json");
    let resuming = if sp.is_file() {
        if !opts.resume {
            return Err(DriverError::Resume(format!(
                "{} already holds a run; pass --resume or choose another output directory",
                out.display()
            )));
        }
        let text = std::fs::read_to_string(&sp).map_err(|e| DriverError::io(&sp, e))?;
        let old: RunStamp =
            serde_json::from_str(&text).map_err(|e| DriverError::Resume(format!("{}: {e}", sp.display())))?;
        if old != stamp {
            return Err(DriverError::Resume(
                "configuration differs from the interrupted run".into(),
            ));
        }
        true
    } else {
        write_atomic(&sp, serde_json::to_string_pretty(&stamp).unwrap().as_bytes())?;
        false
    };

    let p1 = out.join("phase1/manifest.json");
    let phase1 = if resuming && p1.is_file() {
        let m = CycleManifest::load(&p1)?;
        m.verify(out, &p1).map_err(|e| DriverError::Resume(e.to_string()))?;
        m
    } else {
        phase1_prepare(cfg, &pool)?
    };
    let targets = list_cases(&out.join("ingest/target/images"))?;

    let mut report = RunReport {
        phase1,
        cycles: Vec::new(),
        stopped_early: false,
    };
    for t in 1..=cfg.cycles {
        let done = cycle_dir(out, t).join("done.json");
        let (manifest, resumed) = if resuming && done.is_file() {
            (verify_cycle(out, t)?, true)
        } else {
            remove_cycles_from(out, t)?;
            (run_cycle(cfg, t, &report.phase1, &targets, &pool)?, false)
        };
        report.cycles.push(CycleReport {
            cycle: t,
            manifest,
            resumed,
        });
        if opts.stop_after_cycle == Some(t) && t < cfg.cycles {
            report.stopped_early = true;
            break;
        }
    }
    Ok(report)
}
