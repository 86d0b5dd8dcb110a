//! Stand-in for an external trainer: copies prediction fixtures and emits
//! deterministic student checkpoints.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use voladapt_core::driver::fsutil::sha256_hex;
use voladapt_core::driver::seed::derive_seed;
use voladapt_core::schedule::ParamVector;

pub struct TrainerArgs {
    pub fixtures: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub epochs: u32,
    pub cycle: u32,
    pub params: usize,
}

/// Predictions for the next cycle's teacher come from
/// `<fixtures>/cycle_<cycle + 1>/` when present, else `<fixtures>/`.
pub fn run(a: &TrainerArgs) -> Result<()> {
    let manifest = std::fs::read(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    let next = a.fixtures.join(format!("cycle_{}", a.cycle + 1));
    let src = if next.is_dir() { next } else { a.fixtures.clone() };
    let dst = a.out.join("predictions");
    std::fs::create_dir_all(&dst)?;
    let mut copied = 0;
    for entry in std::fs::read_dir(&src).with_context(|| format!("reading {}", src.display()))? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "vol") {
            std::fs::copy(&p, dst.join(p.file_name().unwrap()))?;
            copied += 1;
        }
    }
    if copied == 0 {
        bail!("no .vol fixtures in {}", src.display());
    }
    let root = u64::from_str_radix(&sha256_hex(&manifest)[..16], 16)?;
    for epoch in 1..=a.epochs {
        let seed = derive_seed(root, &format!("student-{}-{epoch}", a.cycle));
        let values = (0..a.params)
            .map(|i| (derive_seed(seed, &i.to_string()) >> 40) as f32 / (1u64 << 24) as f32)
            .collect();
        ParamVector::new("mock", values)?.save(student_path(&a.out, epoch))?;
    }
    Ok(())
}

fn student_path(out: &Path, epoch: u32) -> PathBuf {
    out.join(format!("student_e{epoch:04}.pvec"))
}
