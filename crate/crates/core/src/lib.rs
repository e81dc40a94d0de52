//! Sparse code multiple access (SCMA) multiuser detection with modified sphere
//! decoding.
//!
//! The crate provides codebook handling, channel models, an exhaustive
//! maximum-likelihood oracle, hard and list sphere decoding, the log-domain
//! message passing baseline, a convolutional outer code and a Monte Carlo
//! simulator.

pub mod channel;
pub mod codebook;
pub mod complexity;
pub mod error;
pub mod fec;
pub mod llr;
pub mod ml;
pub mod mpa;
pub mod msd;
pub mod sim;

pub use channel::{ChannelModel, ChannelRealization, EffectiveChannel};
pub use codebook::{Codebook, MappingMatrix, ScmaSystem, SearchLayout, SystemConfig};
pub use complexity::OpCounters;
pub use error::{Error, Result};
pub use llr::LlrFrame;
pub use ml::{ml_detect, DetectionResult};
pub use msd::{list_msd, msd_detect};
pub use sim::{run_sweep, Detector, ResultRecord, RunConfig};
