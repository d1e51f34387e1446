//! Telemetry transport: the 16-byte sample datagram, the directory
//! rendezvous, the RTSP session layer and the datagram streamer.

pub mod directory;
pub mod net;
pub mod rtsp;
pub mod stream;

use std::net::SocketAddr;

use thiserror::Error;

use crate::capacity::TelemetrySample;

pub use directory::{directory_lookup, DirectoryRequest, DirectoryResponse, Registry, ServerAddr};
pub use rtsp::{Method, RtspError, RtspMessage, ServerCore, Session, SessionState};
pub use stream::{StreamConfig, StreamEvent, Streamer};

pub const SAMPLE_BYTES: usize = 16;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("expected {expected} bytes, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("coordinates ({latitude}, {longitude}) are out of range")]
    InvalidCoordinates { latitude: f64, longitude: f64 },
    #[error("registry: {0}")]
    Registry(String),
    #[error("subscriber {0} stopped accepting samples")]
    SubscriberGone(SocketAddr),
    #[error(transparent)]
    Rtsp(#[from] RtspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `tti (u64) | b_alloc (u32) | b_spare (u32)`, big-endian.
pub fn encode_sample(s: &TelemetrySample) -> [u8; SAMPLE_BYTES] {
    let mut out = [0u8; SAMPLE_BYTES];
    out[..8].copy_from_slice(&s.tti.to_be_bytes());
    out[8..12].copy_from_slice(&s.b_alloc.to_be_bytes());
    out[12..].copy_from_slice(&s.b_spare.to_be_bytes());
    out
}

pub fn decode_sample(bytes: &[u8]) -> Result<TelemetrySample, WireError> {
    let b: &[u8; SAMPLE_BYTES] = bytes.try_into().map_err(|_| WireError::BadLength { expected: SAMPLE_BYTES, actual: bytes.len() })?;
    Ok(TelemetrySample {
        tti: u64::from_be_bytes(b[..8].try_into().expect("8")),
        b_alloc: u32::from_be_bytes(b[8..12].try_into().expect("4")),
        b_spare: u32::from_be_bytes(b[12..].try_into().expect("4")),
    })
}
