//! MP1 message shapes. One UTF-8 JSON object per line.
//!
//! ```text
//! hello     {"proto":"MP1","name":...,"caps":["box_prompt"]}
//! request   {"id":u64,"case":str,"slice":u32,"bbox":[r0,r1,c0,c1],"h":u32,"w":u32,"img_b64":str}
//! response  {"id":u64,"rle":[u32...],"conf":f64}
//! error     {"id":u64,"error":str}
//! shutdown  {"cmd":"bye"}
//! ```

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::volume::BBox2D;

pub const PROTO: &str = "MP1";
pub const CAP_BOX_PROMPT: &str = "box_prompt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub proto: String,
    pub name: String,
    pub caps: Vec<String>,
    /// Set by a proposer that failed to initialize.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Hello {
    pub fn new(name: impl Into<String>) -> Self {
        Hello {
            proto: PROTO.to_string(),
            name: name.into(),
            caps: vec![CAP_BOX_PROMPT.to_string()],
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRequest {
    pub id: u64,
    pub case: String,
    pub slice: u32,
    pub bbox: [u32; 4],
    pub h: u32,
    pub w: u32,
    pub img_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireResponse {
    pub id: u64,
    pub rle: Vec<u32>,
    pub conf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireError {
    pub id: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireCommand {
    pub cmd: String,
}

impl WireCommand {
    pub fn bye() -> Self {
        WireCommand { cmd: "bye".into() }
    }
}

/// Proposer to host, after the hello line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Response(WireResponse),
    Error(WireError),
}

impl Reply {
    pub fn id(&self) -> u64 {
        match self {
            Reply::Response(r) => r.id,
            Reply::Error(e) => e.id,
        }
    }
}

/// Host to proposer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Inbound {
    Request(WireRequest),
    Command(WireCommand),
}

/// One box-prompted slice, decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalRequest {
    pub case_id: String,
    pub slice_index: usize,
    pub bbox: BBox2D,
    pub h: usize,
    pub w: usize,
    /// Row-major `h * w` intensities.
    pub image: Vec<f32>,
}

impl ProposalRequest {
    pub fn to_wire(&self, id: u64) -> WireRequest {
        let mut bytes = Vec::with_capacity(self.image.len() * 4);
        for v in &self.image {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let b = &self.bbox;
        WireRequest {
            id,
            case: self.case_id.clone(),
            slice: self.slice_index as u32,
            bbox: [b.row_min as u32, b.row_max as u32, b.col_min as u32, b.col_max as u32],
            h: self.h as u32,
            w: self.w as u32,
            img_b64: B64.encode(bytes),
        }
    }

    /// Validates sizes and box placement.
    pub fn from_wire(req: &WireRequest) -> Result<Self, String> {
        let (h, w) = (req.h as usize, req.w as usize);
        if h == 0 || w == 0 {
            return Err(format!("image dims {h}x{w} must be positive"));
        }
        let [r0, r1, c0, c1] = req.bbox.map(|x| x as usize);
        let bbox = BBox2D::new(r0, r1, c0, c1).ok_or_else(|| format!("bbox {:?} is inverted", req.bbox))?;
        if !bbox.fits(h, w) {
            return Err(format!("bbox {:?} outside {h}x{w} image", req.bbox));
        }
        let bytes = B64
            .decode(&req.img_b64)
            .map_err(|e| format!("img_b64 is not base64: {e}"))?;
        if bytes.len() != h * w * 4 {
            return Err(format!(
                "image payload has {} bytes, expected {}",
                bytes.len(),
                h * w * 4
            ));
        }
        let image = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(ProposalRequest {
            case_id: req.case.clone(),
            slice_index: req.slice as usize,
            bbox,
            h,
            w,
            image,
        })
    }
}
