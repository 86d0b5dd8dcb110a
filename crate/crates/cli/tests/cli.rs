//! Subcommands other than `selftrain`, driven through the binary.

mod common;

use common::{ok_stdout, voladapt};
use serde_json::Value;
use voladapt_core::proposer::rle;
use voladapt_core::schedule::ParamVector;
use voladapt_core::volume::{
    extract_slice, load_mask, load_volume, save_mask, save_volume, Dims3, Mask3D, SliceMask2D, Volume3D,
};

fn p(path: &std::path::Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn lambda_values_one_per_line() {
    let out = ok_stdout(&[
        "schedule", "lambda", "--max", "1", "--gamma", "1", "--t0", "10", "--at", "0", "10", "12", "40",
    ]);
    let v: Vec<f64> = out.lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(v.len(), 4);
    assert!((v[1] - 0.5).abs() < 1e-12);
    assert!((v[2] - 0.880797).abs() < 1e-6);
    assert_eq!(v[3], 1.0);
    let warm = ok_stdout(&[
        "schedule", "lambda", "--max", "1", "--gamma", "1", "--t0", "10", "--warmup", "5", "--at", "4",
    ]);
    assert_eq!(warm.trim(), "0");
    assert!(
        !voladapt(&["schedule", "lambda", "--max", "1", "--gamma", "0", "--t0", "1", "--at", "1"])
            .status
            .success()
    );
}

#[test]
fn ema_blend_writes_the_mix() {
    let dir = tempfile::tempdir().unwrap();
    let (t, s, o) = (
        dir.path().join("t.pvec"),
        dir.path().join("s.pvec"),
        dir.path().join("o.pvec"),
    );
    ParamVector::new("net", vec![1.0, 2.0, -4.0]).unwrap().save(&t).unwrap();
    ParamVector::new("net", vec![3.0, 2.0, 0.0]).unwrap().save(&s).unwrap();
    ok_stdout(&[
        "ema",
        "blend",
        "--teacher",
        p(&t),
        "--student",
        p(&s),
        "--alpha",
        "0.75",
        "--out",
        p(&o),
    ]);
    assert_eq!(ParamVector::load(&o).unwrap().values(), &[1.5, 2.0, -3.0]);
    ParamVector::new("other", vec![0.0; 3]).unwrap().save(&s).unwrap();
    let bad = voladapt(&["ema", "blend", "--teacher", p(&t), "--student", p(&s), "--out", p(&o)]);
    assert!(!bad.status.success());
}

#[test]
fn metrics_report_and_undefined_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims3::cube(10);
    let a = Mask3D::from_fn(dims, |d, h, w| {
        (2..6).contains(&d) && (2..6).contains(&h) && (2..6).contains(&w)
    })
    .unwrap();
    let b = Mask3D::from_fn(dims, |d, h, w| {
        (2..6).contains(&d) && (2..6).contains(&h) && (3..7).contains(&w)
    })
    .unwrap();
    let (pa, pb, pe) = (
        dir.path().join("a.vol"),
        dir.path().join("b.vol"),
        dir.path().join("e.vol"),
    );
    save_mask(&a, &pa).unwrap();
    save_mask(&b, &pb).unwrap();
    save_mask(&Mask3D::empty(dims).unwrap(), &pe).unwrap();
    let v: Value = serde_json::from_str(&ok_stdout(&["metrics", "eval", "--pred", p(&pa), "--gt", p(&pb)])).unwrap();
    assert!((v["dice"].as_f64().unwrap() - 0.75).abs() < 1e-12);
    assert_eq!(v["hd95_voxels"], 1.0);
    assert_eq!(v["cc_pred"], 1);

    let report = dir.path().join("r.json");
    let out = voladapt(&[
        "metrics",
        "eval",
        "--pred",
        p(&pe),
        "--gt",
        p(&pb),
        "--report",
        p(&report),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["dice"], 0.0);
    assert!(v["hd95_voxels"].is_null());
}

fn proposal_line(slice: usize, mask: &SliceMask2D, bbox: [usize; 4], conf: f64) -> String {
    serde_json::json!({
        "slice": slice, "bbox": bbox, "h": mask.height(), "w": mask.width(),
        "rle": rle::encode(mask), "conf": conf,
    })
    .to_string()
}

#[test]
fn curate_refine_and_select() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims3::new(4, 6, 6);
    let teacher = Mask3D::from_fn(dims, |_, h, w| (1..5).contains(&h) && (1..5).contains(&w)).unwrap();
    let tp = dir.path().join("teacher.vol");
    save_mask(&teacher, &tp).unwrap();
    let mut small = SliceMask2D::empty(6, 6).unwrap();
    for (r, c) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
        small.set(r, c, true);
    }
    let props = dir.path().join("p.jsonl");
    let lines = [
        proposal_line(0, &small, [1, 4, 1, 4], 0.9),
        proposal_line(1, &small, [1, 4, 1, 4], 0.5),
        proposal_line(2, &small, [1, 4, 1, 4], 0.7),
    ];
    std::fs::write(&props, lines.join("\n")).unwrap();
    let out = dir.path().join("refined.vol");
    let v: Value = serde_json::from_str(&ok_stdout(&[
        "curate",
        "refine",
        "--teacher",
        p(&tp),
        "--proposals",
        p(&props),
        "--tau",
        "0.7",
        "--out",
        p(&out),
    ]))
    .unwrap();
    assert_eq!(v["prompted"], 3);
    assert_eq!(v["replaced"], serde_json::json!([0, 2]));
    let refined = load_mask(&out).unwrap();
    assert_eq!(extract_slice(&refined, 0).unwrap(), small);
    assert_eq!(extract_slice(&refined, 1).unwrap(), extract_slice(&teacher, 1).unwrap());
    assert_eq!(extract_slice(&refined, 3).unwrap(), extract_slice(&teacher, 3).unwrap());

    // mean conf 0.7 up to rounding, overlap 12/48 = 0.25, one component
    let sel = |overlap: &str| -> Value {
        serde_json::from_str(&ok_stdout(&[
            "curate",
            "select",
            "--proposals",
            p(&props),
            "--case-id",
            "c1",
            "--tau-conf",
            "0.65",
            "--overlap",
            overlap,
            "--max-cc",
            "1",
        ]))
        .unwrap()
    };
    let kept = sel("0.25:0.5");
    assert_eq!(kept["retained"], true);
    assert_eq!(kept["case_id"], "c1");
    let dropped = sel("0.3:0.5");
    assert_eq!(dropped["retained"], false);
    assert_eq!(dropped["overlap_pass"], false);
    assert_eq!(dropped["reason"], "filtered");

    std::fs::write(&props, "").unwrap();
    let empty = sel("0.3:0.5");
    assert_eq!(empty["reason"], "empty");
}

#[test]
fn vol_info_normalize_and_crop() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims3::new(6, 8, 10);
    let v = Volume3D::from_fn(dims, |d, h, w| {
        if (1..4).contains(&d) && (2..6).contains(&h) && w > 3 {
            3.0 + w as f32
        } else {
            0.0
        }
    })
    .unwrap();
    let lab = Mask3D::from_fn(dims, |d, h, w| (d, h, w) == (2, 3, 7)).unwrap();
    let (vp, lp) = (dir.path().join("v.vol"), dir.path().join("l.vol"));
    save_volume(&v, &vp).unwrap();
    save_mask(&lab, &lp).unwrap();

    let info: Value = serde_json::from_str(&ok_stdout(&["vol", "info", p(&vp)])).unwrap();
    assert_eq!(info["dtype"], "f32");
    assert_eq!(info["dims"], serde_json::json!([6, 8, 10]));
    assert_eq!(info["max"], 12.0);
    let info: Value = serde_json::from_str(&ok_stdout(&["vol", "info", p(&lp)])).unwrap();
    assert_eq!(info["foreground"], 1);

    let np = dir.path().join("n.vol");
    ok_stdout(&["vol", "normalize", p(&vp), "--out", p(&np)]);
    assert_eq!(load_volume(&np).unwrap().min_max(), (0.0, 1.0));

    let (cp, clp) = (dir.path().join("c.vol"), dir.path().join("cl.vol"));
    ok_stdout(&[
        "vol",
        "crop",
        p(&vp),
        "--target",
        "4,4,4",
        "--out",
        p(&cp),
        "--label",
        p(&lp),
        "--label-out",
        p(&clp),
    ]);
    let (c, cl) = (load_volume(&cp).unwrap(), load_mask(&clp).unwrap());
    assert_eq!(c.dims(), Dims3::cube(4));
    assert_eq!(cl.dims(), Dims3::cube(4));
    // the labelled voxel keeps its intensity through the shared window
    let at = cl.data().iter().position(|&x| x == 1).expect("label kept");
    assert_eq!(c.data()[at], 10.0);
}

#[test]
fn fda_apply_and_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims3::cube(16);
    let src = Volume3D::from_fn(dims, |d, h, w| ((d * 7 + h * 3 + w) % 11) as f32).unwrap();
    let tgt = Volume3D::from_fn(dims, |d, h, w| 2.0 * ((d + h * 5 + w * 2) % 13) as f32).unwrap();
    let (sp, tp, op) = (
        dir.path().join("s.vol"),
        dir.path().join("t.vol"),
        dir.path().join("o.vol"),
    );
    save_volume(&src, &sp).unwrap();
    save_volume(&tgt, &tp).unwrap();
    let out = voladapt(&[
        "fda",
        "apply",
        "--src",
        p(&sp),
        "--tgt",
        p(&tp),
        "--L",
        "0.1",
        "--out",
        p(&op),
    ]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["cube_half_width"], 1);
    assert_eq!(v["cube_members"], 27);
    assert!(v["max_imag_residue"].as_f64().unwrap() < 1e-3);
    // 0.1 lies outside the recommended band
    assert!(String::from_utf8_lossy(&out.stderr).contains("note:"));
    assert_eq!(load_volume(&op).unwrap().dims(), dims);

    let (amp, phase) = (dir.path().join("a.vol"), dir.path().join("p.vol"));
    ok_stdout(&[
        "fda",
        "spectrum",
        p(&sp),
        "--out-amp",
        p(&amp),
        "--out-phase",
        p(&phase),
    ]);
    let a = load_volume(&amp).unwrap();
    let dc = a.get(8, 8, 8) as f64;
    let sum: f64 = src.data().iter().map(|&x| x as f64).sum();
    assert!((dc - sum).abs() < 1e-2 * sum);
    assert!(!voladapt(&[
        "fda",
        "apply",
        "--src",
        p(&sp),
        "--tgt",
        p(&tp),
        "--L",
        "1.5",
        "--out",
        p(&op)
    ])
    .status
    .success());
}
