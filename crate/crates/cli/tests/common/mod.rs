//! Synthetic datasets and config files for driving the binary.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voladapt_core::volume::{save_mask, save_volume, Dims3, Mask3D, Volume3D};

pub const BIN: &str = env!("CARGO_BIN_EXE_voladapt");

pub fn voladapt(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn voladapt")
}

pub fn ok_stdout(args: &[&str]) -> String {
    let out = voladapt(args);
    assert!(
        out.status.success(),
        "voladapt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    pub fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
        let radii = [
            rng.random_range(5.0..9.0),
            rng.random_range(5.0..9.0),
            rng.random_range(5.0..9.0),
        ];
        let mid = n as f64 / 2.0;
        let center = [
            mid + rng.random_range(-3.0..3.0),
            mid + rng.random_range(-3.0..3.0),
            mid + rng.random_range(-3.0..3.0),
        ];
        Ellipsoid { center, radii }
    }

    /// Inside test with every radius grown by `grow` voxels.
    pub fn contains(&self, p: [usize; 3], grow: f64) -> bool {
        let s: f64 = (0..3)
            .map(|k| ((p[k] as f64 - self.center[k]) / (self.radii[k] + grow)).powi(2))
            .sum();
        s <= 1.0
    }

    pub fn mask(&self, n: usize, grow: f64) -> Mask3D {
        Mask3D::from_fn(Dims3::cube(n), |d, h, w| self.contains([d, h, w], grow)).unwrap()
    }

    pub fn image(&self, n: usize, rng: &mut ChaCha8Rng, gain: f32) -> Volume3D {
        Volume3D::from_fn(Dims3::cube(n), |d, h, w| {
            let base = if self.contains([d, h, w], 0.0) {
                gain
            } else {
                0.25 * gain
            };
            base + rng.random_range(0.0..0.05 * gain)
        })
        .unwrap()
    }
}

pub struct Fixture {
    pub root: PathBuf,
    pub oracle_cases: Vec<String>,
    pub noise_cases: Vec<String>,
}

pub struct FixtureSpec {
    pub size: usize,
    pub sources: usize,
    pub oracle: usize,
    pub noise: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            size: 32,
            sources: 4,
            oracle: 10,
            noise: 10,
            seed: 7,
        }
    }
}

/// Writes `src/`, `tgt/images`, `gt/`, `pred/` and `routes.toml` under
/// `root`. Teacher predictions are the ground truth grown by one voxel, so
/// oracle proposals inside the teacher's boxes fill them only partly.
pub fn build(root: &Path, spec: &FixtureSpec) -> Fixture {
    for sub in ["src/images", "src/labels", "tgt/images", "gt", "pred"] {
        std::fs::create_dir_all(root.join(sub)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for i in 0..spec.sources {
        let e = Ellipsoid::random(&mut rng, spec.size);
        save_volume(
            &e.image(spec.size, &mut rng, 1.0),
            root.join(format!("src/images/s{i:02}.vol")),
        )
        .unwrap();
        save_mask(&e.mask(spec.size, 0.0), root.join(format!("src/labels/s{i:02}.vol"))).unwrap();
    }
    let oracle_cases: Vec<String> = (0..spec.oracle).map(|i| format!("o{i:02}")).collect();
    let noise_cases: Vec<String> = (0..spec.noise).map(|i| format!("n{i:02}")).collect();
    for case in oracle_cases.iter().chain(&noise_cases) {
        let e = Ellipsoid::random(&mut rng, spec.size);
        save_volume(
            &e.image(spec.size, &mut rng, 4.0),
            root.join(format!("tgt/images/{case}.vol")),
        )
        .unwrap();
        save_mask(&e.mask(spec.size, 0.0), root.join(format!("gt/{case}.vol"))).unwrap();
        save_mask(&e.mask(spec.size, 1.0), root.join(format!("pred/{case}.vol"))).unwrap();
    }
    std::fs::write(
        root.join("routes.toml"),
        r#"name = "fixture"

[[route]]
prefix = "o"
proposer = { kind = "oracle", gt_dir = "gt", conf = 0.95 }

[[route]]
prefix = "n"
proposer = { kind = "noise", seed = 11, density = 0.05, conf = 0.95 }
"#,
    )
    .unwrap();
    Fixture {
        root: root.to_path_buf(),
        oracle_cases,
        noise_cases,
    }
}

impl Fixture {
    pub fn proposer_command(&self) -> String {
        format!(
            "[{:?}, \"mock-proposer\", \"--config\", {:?}]",
            BIN,
            self.root.join("routes.toml").display().to_string()
        )
    }

    /// Run config with the standard thresholds; `extra` is appended verbatim.
    pub fn write_config(&self, name: &str, output_dir: &Path, cycles: u32, extra: &str) -> PathBuf {
        let text = format!(
            r#"output_dir = {out:?}
seed = 2024
cycles = {cycles}
workers = 2

[data]
source_dir = "src"
target_dir = "tgt"
predictions_dir = "pred"

[refine]
tau_conf = 0.7

[select]
tau_conf = 0.7
overlap = [0.4, 0.8]
tau_cc = 10

[proposer]
command = {cmd}
sessions = 2
{extra}"#,
            out = output_dir.display().to_string(),
            cmd = self.proposer_command(),
        );
        let path = self.root.join(name);
        std::fs::write(&path, text).unwrap();
        path
    }
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Reads `cycle_<t>/curation.jsonl` into (per-case records, summary).
pub fn curation(out: &Path, t: u32) -> (Vec<serde_json::Value>, serde_json::Value) {
    let text = std::fs::read_to_string(out.join(format!("cycle_{t}/curation.jsonl"))).unwrap();
    let mut records = Vec::new();
    let mut summary = serde_json::Value::Null;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        match v.get("summary") {
            Some(s) => summary = s.clone(),
            None => records.push(v),
        }
    }
    (records, summary)
}
