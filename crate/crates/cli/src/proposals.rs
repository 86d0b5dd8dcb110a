//! JSON-lines proposal files for the `curate` subcommands:
//! `{"slice":j,"bbox":[r0,r1,c0,c1],"h":H,"w":W,"rle":[...],"conf":c}`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use voladapt_core::curation::SliceProposal;
use voladapt_core::proposer::rle;
use voladapt_core::volume::BBox2D;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalLine {
    pub slice: usize,
    pub bbox: [usize; 4],
    pub h: usize,
    pub w: usize,
    pub rle: Vec<u32>,
    pub conf: f64,
}

impl ProposalLine {
    fn decode(&self) -> Result<SliceProposal> {
        let [r0, r1, c0, c1] = self.bbox;
        let Some(bbox) = BBox2D::new(r0, r1, c0, c1) else {
            bail!("bbox {:?} is inverted", self.bbox);
        };
        let mask = rle::decode(&self.rle, self.h, self.w)?;
        Ok(SliceProposal::new(self.slice, mask, self.conf, bbox)?)
    }
}

pub fn read(path: &Path) -> Result<Vec<SliceProposal>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line: ProposalLine =
                serde_json::from_str(l).with_context(|| format!("{}:{}: bad proposal line", path.display(), i + 1))?;
            line.decode().with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}
