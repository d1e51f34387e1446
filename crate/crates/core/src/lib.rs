//! Control-channel telemetry for 5G standalone cells.
//!
//! The crate turns RRC configuration and decoded DCI records into per-UE
//! capacity estimates, streams them over a small wire protocol, and drives a
//! video bitrate controller from them. A deterministic gNB simulator provides
//! ground truth for accuracy runs.

pub mod abr;
pub mod capacity;
pub mod dci;
pub mod eval;
pub mod pipeline;
pub mod rrc;
pub mod sim;
pub mod stats;
pub mod tbs;
pub mod ue;
pub mod wire;

pub use dci::{Dci, DciEnvelope, DciError, DciFormat, Direction, Grant, Rnti};
pub use rrc::{CellCommonConfig, ConfigError, UeDedicatedConfig};
pub use tbs::TbsError;
pub use capacity::{CapacityEstimator, TelemetrySample};
pub use ue::{UeError, UeRegistry};
