//! The mock proposer binary over MP1, at the wire level and through Session.

mod common;

use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::time::Duration;

use serde_json::Value;
use voladapt_core::proposer::{
    rle, MaskProposer, NoiseProposer, ProposalRequest, ProtocolError, Session, SessionOptions,
};
use voladapt_core::volume::{extract_slice, load_mask, BBox2D};

fn request(case: &str, slice: usize, bbox: BBox2D) -> ProposalRequest {
    ProposalRequest {
        case_id: case.into(),
        slice_index: slice,
        bbox,
        h: 12,
        w: 10,
        image: (0..120).map(|i| i as f32 / 120.0).collect(),
    }
}

fn command(args: &[&str]) -> Vec<String> {
    std::iter::once(common::BIN)
        .chain(args.iter().copied())
        .map(String::from)
        .collect()
}

#[test]
fn wire_level_exchange() {
    let mut child = Command::new(common::BIN)
        .args(["mock-proposer", "--kind", "constant", "--fill", "full", "--conf", "0.8"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let mut next = || -> Value { serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap() };

    let hello = next();
    assert_eq!(hello["proto"], "MP1");
    assert!(hello["caps"].as_array().unwrap().contains(&Value::from("box_prompt")));

    let bbox = BBox2D::new(2, 5, 1, 3).unwrap();
    let wire = serde_json::to_string(&request("c", 4, bbox).to_wire(41)).unwrap();
    writeln!(stdin, "{wire}").unwrap();
    let reply = next();
    assert_eq!(reply["id"], 41);
    assert_eq!(reply["conf"], 0.8);
    let runs: Vec<u32> = serde_json::from_value(reply["rle"].clone()).unwrap();
    assert_eq!(runs.iter().sum::<u32>(), 120);
    let mask = rle::decode(&runs, 12, 10).unwrap();
    assert_eq!(mask.count(), bbox.pixel_count());

    writeln!(stdin, "not json").unwrap();
    assert_eq!(next()["id"], 0);
    writeln!(stdin, r#"{{"id":7,"case":"c","slice":0}}"#).unwrap();
    let err = next();
    assert_eq!(err["id"], 7);
    assert!(err["error"].is_string());
    writeln!(stdin, r#"{{"cmd":"reboot"}}"#).unwrap();
    assert!(next()["error"].as_str().unwrap().contains("reboot"));
    // box outside the plane is refused, not answered
    let mut bad = request("c", 0, bbox).to_wire(9);
    bad.bbox = [0, 12, 0, 3];
    writeln!(stdin, "{}", serde_json::to_string(&bad).unwrap()).unwrap();
    let err = next();
    assert_eq!(err["id"], 9);
    assert!(err.get("rle").is_none());

    writeln!(stdin, r#"{{"cmd":"bye"}}"#).unwrap();
    drop(stdin);
    assert!(child.wait().unwrap().success());
}

#[test]
fn reordered_replies_match_their_requests() {
    let opts = SessionOptions {
        timeout: Duration::from_secs(20),
        window: 32,
    };
    let args = [
        "mock-proposer",
        "--kind",
        "noise",
        "--seed",
        "5",
        "--density",
        "0.3",
        "--reorder",
    ];
    let session = Session::spawn(&command(&args), opts).unwrap();
    let reqs: Vec<ProposalRequest> = (0..96)
        .map(|i| {
            request(
                &format!("case{}", i % 5),
                i % 12,
                BBox2D::new(i % 4, 8 + i % 4, 1, 8).unwrap(),
            )
        })
        .collect();
    let got = session.propose_many(&reqs);
    let mut local = NoiseProposer::new(5, 0.3, 0.95).unwrap();
    for (req, res) in reqs.iter().zip(got) {
        let p = res.unwrap();
        let (want, conf) = local.propose(req).unwrap();
        assert_eq!(p.mask, want, "{} slice {}", req.case_id, req.slice_index);
        assert_eq!(p.confidence, conf);
    }
    assert_eq!(session.stray_replies(), 0);
    assert!(session.shutdown().unwrap().success());
}

#[test]
fn oracle_returns_ground_truth_inside_the_box() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::build(
        dir.path(),
        &common::FixtureSpec {
            size: 16,
            sources: 1,
            oracle: 1,
            noise: 0,
            seed: 3,
        },
    );
    let gt_dir = fx.root.join("gt");
    let gt = load_mask(gt_dir.join("o00.vol")).unwrap();
    let session = Session::spawn(
        &command(&[
            "mock-proposer",
            "--kind",
            "oracle",
            "--gt-dir",
            gt_dir.to_str().unwrap(),
        ]),
        SessionOptions::default(),
    )
    .unwrap();
    assert_eq!(session.hello().name, "oracle");
    let bbox = BBox2D::new(4, 11, 4, 11).unwrap();
    let req = ProposalRequest {
        case_id: "o00".into(),
        slice_index: 8,
        bbox,
        h: 16,
        w: 16,
        image: vec![0.0; 256],
    };
    let p = session.propose(&req).unwrap();
    assert_eq!(p.mask, extract_slice(&gt, 8).unwrap().restricted_to(&bbox));
    assert_eq!(p.confidence, 0.95);
    let missing = session.propose(&ProposalRequest {
        case_id: "nope".into(),
        ..req
    });
    assert!(matches!(missing, Err(ProtocolError::Remote { .. })), "{missing:?}");
    session.shutdown();
}

#[test]
fn startup_failure_is_reported_in_the_hello() {
    let err = Session::spawn(
        &command(&["mock-proposer", "--kind", "oracle"]),
        SessionOptions::default(),
    )
    .unwrap_err();
    match err {
        ProtocolError::HelloError(msg) => assert!(msg.contains("--gt-dir"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn routing_table_dispatches_by_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::build(
        dir.path(),
        &common::FixtureSpec {
            size: 16,
            sources: 1,
            oracle: 1,
            noise: 1,
            seed: 4,
        },
    );
    let routes = fx.root.join("routes.toml");
    let session = Session::spawn(
        &command(&["mock-proposer", "--config", routes.to_str().unwrap()]),
        SessionOptions::default(),
    )
    .unwrap();
    assert_eq!(session.hello().name, "fixture");
    let base = ProposalRequest {
        case_id: "o00".into(),
        slice_index: 8,
        bbox: BBox2D::new(0, 15, 0, 15).unwrap(),
        h: 16,
        w: 16,
        image: vec![0.0; 256],
    };
    let oracle = session.propose(&base).unwrap();
    let gt = load_mask(fx.root.join("gt/o00.vol")).unwrap();
    assert_eq!(oracle.mask, extract_slice(&gt, 8).unwrap());
    let noise = session.propose(&ProposalRequest {
        case_id: "n00".into(),
        ..base.clone()
    });
    let (want, _) = NoiseProposer::new(11, 0.05, 0.95)
        .unwrap()
        .propose(&ProposalRequest {
            case_id: "n00".into(),
            ..base.clone()
        })
        .unwrap();
    assert_eq!(noise.unwrap().mask, want);
    // no route and no default
    assert!(session
        .propose(&ProposalRequest {
            case_id: "x00".into(),
            ..base
        })
        .is_err());
    session.shutdown();
}
