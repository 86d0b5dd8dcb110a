//! MP1: newline-delimited JSON over a child process's standard streams,
//! through which any box-prompted mask proposer serves slice proposals.
//!
//! The child writes a hello line first; after that the host sends requests
//! and the child answers each with exactly one response or error record,
//! in any order. Images travel as base64 little-endian `f32`, masks as
//! run-length codes (see [`rle`]).

pub mod mock;
pub mod rle;
mod serve;
mod session;
pub mod wire;

pub use mock::{ConstantProposer, Fill, MaskProposer, MockSpec, NoiseProposer, OracleProposer, RouterSpec};
pub use serve::{serve, write_hello, ServeOptions, ServeStats};
pub use session::{Proposal, ProtocolError, Session, SessionOptions, Ticket};
pub use wire::{Hello, ProposalRequest};
