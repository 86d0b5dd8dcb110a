use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use voladapt_core::curation::{refine_volume_with_summary, select_case, CaseReport, RefineConfig, SelectConfig};
use voladapt_core::driver::{self, GridSpec, RunConfig, RunOptions};
use voladapt_core::fourier::{apply_fda, fft3_centered};
use voladapt_core::metrics::{dice, hd95_with_spacing, label_components, Connectivity, MetricError};
use voladapt_core::proposer::{self, ConstantProposer, Fill, MaskProposer, NoiseProposer, OracleProposer, RouterSpec};
use voladapt_core::schedule::{ema_blend, LambdaSchedule, ParamVector};
use voladapt_core::volume::{
    crop_to_nonzero_then_fit, load_mask, load_volume, minmax_normalize, read_vol1, save_mask, save_volume, Dims3,
    VolFile, Volume3D,
};

mod mock_trainer;
mod proposals;

#[derive(Parser)]
#[command(name = "voladapt", version, about = "Volumetric domain adaptation toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Inspect and preprocess VOL1 files.
    #[command(subcommand)]
    Vol(VolCmd),
    /// Low-frequency amplitude transplantation.
    #[command(subcommand)]
    Fda(FdaCmd),
    /// Adversarial weight ramp.
    #[command(subcommand)]
    Schedule(ScheduleCmd),
    /// EMA teacher blending of PVEC checkpoints.
    #[command(subcommand)]
    Ema(EmaCmd),
    /// Segmentation metrics.
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Pseudo-label refinement and volume selection.
    #[command(subcommand)]
    Curate(CurateCmd),
    /// Two-phase self-training driver.
    #[command(subcommand)]
    Selftrain(SelftrainCmd),
    /// Serve a deterministic mock proposer over MP1 on stdin/stdout.
    MockProposer(MockProposerArgs),
    /// Deterministic stand-in for an external trainer.
    MockTrainer(MockTrainerArgs),
}

#[derive(Subcommand)]
enum VolCmd {
    /// Print header and value statistics as JSON.
    Info { input: PathBuf },
    /// Per-volume min-max scaling into [0, 1].
    Normalize {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nonzero crop, then center crop or pad to the target dims.
    Crop {
        input: PathBuf,
        #[arg(long)]
        target: Dims3,
        #[arg(long)]
        out: PathBuf,
        /// Label cropped with the image's window.
        #[arg(long, requires = "label_out")]
        label: Option<PathBuf>,
        #[arg(long)]
        label_out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum FdaCmd {
    Apply {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long = "L")]
        l: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write centered amplitude and phase as f32 volumes.
    Spectrum {
        input: PathBuf,
        #[arg(long)]
        out_amp: PathBuf,
        #[arg(long)]
        out_phase: PathBuf,
    },
}

#[derive(Subcommand)]
enum ScheduleCmd {
    Lambda {
        #[arg(long = "max")]
        lambda_max: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        t0: f64,
        #[arg(long, default_value_t = 0)]
        warmup: u32,
        #[arg(long)]
        freeze_after: Option<f64>,
        /// Epochs to evaluate; one value per output line.
        #[arg(long, num_args = 1.., required = true)]
        at: Vec<f64>,
    },
}

#[derive(Subcommand)]
enum EmaCmd {
    Blend {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        student: PathBuf,
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum MetricsCmd {
    /// Dice, HD95 and component counts. Exits with 2 when HD95 is undefined.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 26)]
        connectivity: u32,
        /// Use the prediction's voxel spacing for HD95.
        #[arg(long)]
        physical: bool,
    },
}

#[derive(Subcommand)]
enum CurateCmd {
    /// Confidence-gated slice replacement of a teacher mask.
    Refine {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Volume-level retention verdict as JSON.
    Select {
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long, default_value = "case")]
        case_id: String,
        #[arg(long)]
        tau_conf: f64,
        /// `lo:hi`, both inclusive.
        #[arg(long)]
        overlap: String,
        #[arg(long)]
        max_cc: u32,
        #[arg(long, default_value_t = 26)]
        connectivity: u32,
        /// Ignore proposal foreground outside each prompt box.
        #[arg(long)]
        clip: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunOverrides {
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cycles: Option<u32>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long = "L")]
    l: Option<f64>,
    /// Refinement confidence threshold.
    #[arg(long)]
    tau_refine: Option<f64>,
    #[arg(long)]
    tau_conf: Option<f64>,
    /// `lo:hi`.
    #[arg(long)]
    overlap: Option<String>,
    #[arg(long)]
    max_cc: Option<u32>,
}

#[derive(Subcommand)]
enum SelftrainCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: bool,
        /// Stop after this cycle as if interrupted.
        #[arg(long)]
        stop_after_cycle: Option<u32>,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Grid TOML; the default grids when omitted.
        #[arg(long)]
        grids: Option<PathBuf>,
        /// CSV path; `<output_dir>/sweep.csv` by default.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: RunOverrides,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MockKind {
    Oracle,
    Noise,
    Constant,
}

#[derive(Args)]
struct MockProposerArgs {
    /// Routing table TOML; overrides the single-mock flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "oracle")]
    kind: MockKind,
    #[arg(long)]
    gt_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    density: f64,
    #[arg(long, default_value_t = 0.95)]
    conf: f64,
    #[arg(long, default_value = "full")]
    fill: String,
    /// Answer queued requests in reverse order.
    #[arg(long)]
    reorder: bool,
}

#[derive(Args)]
struct MockTrainerArgs {
    #[arg(long)]
    fixtures: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    epochs: u32,
    #[arg(long)]
    cycle: u32,
    /// Previous EMA teacher; accepted and ignored.
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    params: usize,
}

fn parse_overlap(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s.split_once(':').context("overlap must be lo:hi")?;
    Ok((lo.trim().parse()?, hi.trim().parse()?))
}

fn connectivity(c: u32) -> Result<Connectivity> {
    Ok(Connectivity::try_from(c)?)
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn vol(cmd: VolCmd) -> Result<()> {
    match cmd {
        VolCmd::Info { input } => {
            let f = read_vol1(&input)?;
            let info = match &f {
                VolFile::Volume(v) => {
                    let (lo, hi) = v.min_max();
                    json!({"dtype": "f32", "dims": v.dims().as_array(), "spacing": v.spacing(), "min": lo, "max": hi})
                }
                VolFile::Mask(m, spacing) => {
                    json!({"dtype": "mask", "dims": m.dims().as_array(), "spacing": spacing, "foreground": m.count()})
                }
            };
            print_json(&info);
        }
        VolCmd::Normalize { input, out } => save_volume(&minmax_normalize(&load_volume(&input)?), &out)?,
        VolCmd::Crop {
            input,
            target,
            out,
            label,
            label_out,
        } => {
            let v = load_volume(&input)?;
            if let (Some(lp), Some(lo)) = (label, label_out) {
                let plan = voladapt_core::volume::nonzero_fit_plan(&v, target)?;
                save_mask(&plan.apply_mask(&load_mask(&lp)?)?, &lo)?;
                save_volume(&plan.apply(&v)?, &out)?;
            } else {
                save_volume(&crop_to_nonzero_then_fit(&v, target)?, &out)?;
            }
        }
    }
    Ok(())
}

fn fda(cmd: FdaCmd) -> Result<()> {
    match cmd {
        FdaCmd::Apply { src, tgt, l, out } => {
            let outcome = apply_fda(&load_volume(&src)?, &load_volume(&tgt)?, l)?;
            for n in &outcome.notes {
                eprintln!("note: {n}");
            }
            save_volume(&outcome.adapted, &out)?;
            print_json(&json!({
                "cube_half_width": outcome.cube.half_width(),
                "cube_members": outcome.cube.member_count(),
                "max_imag_residue": outcome.max_imag_residue,
            }));
        }
        FdaCmd::Spectrum {
            input,
            out_amp,
            out_phase,
        } => {
            let v = load_volume(&input)?;
            let s = fft3_centered(&v);
            let to_vol = |xs: &[f64]| Volume3D::new(s.dims(), xs.iter().map(|&x| x as f32).collect());
            save_volume(&to_vol(s.amplitude())?, &out_amp)?;
            save_volume(&to_vol(s.phase())?, &out_phase)?;
        }
    }
    Ok(())
}

fn schedule(cmd: ScheduleCmd) -> Result<()> {
    let ScheduleCmd::Lambda {
        lambda_max,
        gamma,
        t0,
        warmup,
        freeze_after,
        at,
    } = cmd;
    let mut s = LambdaSchedule::new(lambda_max, gamma, t0, warmup)?;
    if let Some(f) = freeze_after {
        s = s.with_freeze_after(f)?;
    }
    for t in at {
        println!("{}", s.lambda_at(t));
    }
    Ok(())
}

fn ema(cmd: EmaCmd) -> Result<()> {
    let EmaCmd::Blend {
        teacher,
        student,
        alpha,
        out,
    } = cmd;
    ema_blend(&ParamVector::load(&teacher)?, &ParamVector::load(&student)?, alpha)?.save(&out)?;
    Ok(())
}

fn metrics(cmd: MetricsCmd) -> Result<ExitCode> {
    let MetricsCmd::Eval {
        pred,
        gt,
        report,
        connectivity: c,
        physical,
    } = cmd;
    let conn = connectivity(c)?;
    let pf = read_vol1(&pred)?;
    let spacing = match &pf {
        VolFile::Volume(v) => v.spacing(),
        VolFile::Mask(_, s) => *s,
    };
    let p = pf.into_mask();
    let g = read_vol1(&gt)?.into_mask();
    let d = dice(&p, &g)?;
    let spacing = if physical { spacing.map(f64::from) } else { [1.0; 3] };
    let (h, code) = match hd95_with_spacing(&p, &g, spacing) {
        Ok(h) => (Some(h), ExitCode::SUCCESS),
        Err(MetricError::UndefinedHd95(which)) => {
            eprintln!("hd95 undefined: {which} mask is empty");
            (None, ExitCode::from(2))
        }
        Err(e) => return Err(e.into()),
    };
    let key = if physical { "hd95" } else { "hd95_voxels" };
    let mut v = json!({
        "dice": d,
        "cc_pred": label_components(&p, conn).count,
        "cc_gt": label_components(&g, conn).count,
        "connectivity": c,
    });
    v[key] = json!(h);
    match report {
        Some(path) => write_json(&path, &v)?,
        None => print_json(&v),
    }
    Ok(code)
}

fn curate(cmd: CurateCmd) -> Result<()> {
    match cmd {
        CurateCmd::Refine {
            teacher,
            proposals: pp,
            tau,
            out,
        } => {
            let y0 = load_mask(&teacher)?;
            let props = proposals::read(&pp)?;
            let (refined, summary) = refine_volume_with_summary(&y0, &props, &RefineConfig::new(tau)?)?;
            save_mask(&refined, &out)?;
            print_json(&json!({"prompted": summary.prompted, "replaced": summary.replaced}));
        }
        CurateCmd::Select {
            proposals: pp,
            case_id,
            tau_conf,
            overlap,
            max_cc,
            connectivity: c,
            clip,
            report,
        } => {
            let mut cfg =
                SelectConfig::new(tau_conf, parse_overlap(&overlap)?, max_cc)?.with_connectivity(connectivity(c)?);
            cfg.clip_to_bbox = clip;
            let props = proposals::read(&pp)?;
            let r = if props.is_empty() {
                CaseReport::empty(case_id)
            } else {
                select_case(&case_id, &props, &cfg)?
            };
            let v = serde_json::to_value(&r)?;
            match report {
                Some(path) => write_json(&path, &v)?,
                None => print_json(&v),
            }
        }
    }
    Ok(())
}

fn load_run_config(path: &Path, o: &RunOverrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(d) = &o.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(n) = o.cycles {
        cfg.cycles = n;
    }
    if let Some(w) = o.workers {
        cfg.workers = Some(w);
    }
    if let Some(l) = o.l {
        cfg.fda.l = l;
    }
    if let Some(t) = o.tau_refine {
        cfg.refine.tau_conf = t;
    }
    if let Some(t) = o.tau_conf {
        cfg.select.tau_conf = t;
    }
    if let Some(ov) = &o.overlap {
        let (lo, hi) = parse_overlap(ov)?;
        cfg.select.overlap = [lo, hi];
    }
    if let Some(c) = o.max_cc {
        cfg.select.tau_cc = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn selftrain(cmd: SelftrainCmd) -> Result<()> {
    match cmd {
        SelftrainCmd::Run {
            config,
            resume,
            stop_after_cycle,
            overrides,
        } => {
            let cfg = load_run_config(&config, &overrides)?;
            let report = driver::run(
                &cfg,
                RunOptions {
                    resume,
                    stop_after_cycle,
                },
            )?;
            for c in &report.cycles {
                let m = &c.manifest;
                let mut line = json!({"cycle": c.cycle, "resumed": c.resumed, "entries": m.entries.len()});
                if let Some(r) = &m.refine {
                    line["refine"] = serde_json::to_value(r)?;
                }
                if let Some(s) = &m.selection {
                    line["selection"] = serde_json::to_value(s)?;
                }
                println!("{line}");
            }
            if report.stopped_early {
                eprintln!(
                    "stopped after cycle {}; rerun with --resume to continue",
                    report.cycles.len()
                );
            }
        }
        SelftrainCmd::Sweep {
            config,
            grids,
            out,
            overrides,
        } => {
            let cfg = load_run_config(&config, &overrides)?;
            let grids = match grids {
                Some(p) => GridSpec::load(&p)?,
                None => GridSpec::default(),
            };
            let out = out.unwrap_or_else(|| cfg.output_dir.join("sweep.csv"));
            let rows = driver::grid_sweep(&cfg, &grids, Some(&out))?;
            if let Some(best) = rows.first() {
                println!("{}", serde_json::to_string(best)?);
            }
            eprintln!("{} configurations written to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn build_mock(a: &MockProposerArgs) -> Result<Box<dyn MaskProposer>> {
    if let Some(path) = &a.config {
        let spec = RouterSpec::from_toml_file(path).map_err(anyhow::Error::msg)?;
        let base = path.parent().unwrap_or(Path::new("."));
        return Ok(Box::new(spec.build(base).map_err(anyhow::Error::msg)?));
    }
    let p: Box<dyn MaskProposer> = match a.kind {
        MockKind::Oracle => {
            let dir = a.gt_dir.clone().context("--gt-dir is required for the oracle mock")?;
            Box::new(OracleProposer::from_dir(dir, a.conf).map_err(anyhow::Error::msg)?)
        }
        MockKind::Noise => Box::new(NoiseProposer::new(a.seed, a.density, a.conf).map_err(anyhow::Error::msg)?),
        MockKind::Constant => {
            let fill = match a.fill.as_str() {
                "full" => Fill::Full,
                "empty" => Fill::Empty,
                other => bail!("--fill must be full or empty, got {other:?}"),
            };
            Box::new(ConstantProposer::new(fill, a.conf).map_err(anyhow::Error::msg)?)
        }
    };
    Ok(p)
}

fn mock_proposer(a: MockProposerArgs) -> Result<()> {
    let mut p = match build_mock(&a) {
        Ok(p) => p,
        Err(e) => {
            // report through the hello line so the host sees why
            let mut hello = proposer::Hello::new("mock");
            hello.error = Some(format!("{e:#}"));
            println!("{}", serde_json::to_string(&hello)?);
            return Err(e);
        }
    };
    let stdin = BufReader::new(io::stdin());
    let stdout = io::stdout().lock();
    proposer::serve(
        p.as_mut(),
        stdin,
        stdout,
        proposer::ServeOptions {
            reverse_batches: a.reorder,
        },
    )?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Vol(c) => vol(c).map(|_| ExitCode::SUCCESS),
        Cmd::Fda(c) => fda(c).map(|_| ExitCode::SUCCESS),
        Cmd::Schedule(c) => schedule(c).map(|_| ExitCode::SUCCESS),
        Cmd::Ema(c) => ema(c).map(|_| ExitCode::SUCCESS),
        Cmd::Metrics(c) => metrics(c),
        Cmd::Curate(c) => curate(c).map(|_| ExitCode::SUCCESS),
        Cmd::Selftrain(c) => selftrain(c).map(|_| ExitCode::SUCCESS),
        Cmd::MockProposer(a) => mock_proposer(a).map(|_| ExitCode::SUCCESS),
        Cmd::MockTrainer(a) => mock_trainer::run(&mock_trainer::TrainerArgs {
            fixtures: a.fixtures,
            manifest: a.manifest,
            out: a.out,
            epochs: a.epochs,
            cycle: a.cycle,
            params: a.params,
        })
        .map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
