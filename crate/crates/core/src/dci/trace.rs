//! Observer DCI trace files.
//!
//! ```text
//! # run=00000000000004d2 start_tti=0 end_tti=2000
//! tti=17 dir=dl 300330d8b94e008f8559
//! ```
//!
//! One header line, then one record per DCI: the TTI index, the direction and
//! the envelope as hex (7 payload bytes followed by the 3-byte scrambled CRC).
//! Blank lines and further `#` lines are ignored.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::envelope::DciEnvelope;
use super::Direction;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("trace has no header line")]
    MissingHeader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub run_id: u64,
    pub start_tti: u64,
    pub end_tti: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub tti: u64,
    pub direction: Direction,
    pub envelope: DciEnvelope,
}

impl TraceHeader {
    pub fn to_line(&self) -> String {
        format!("# run={:016x} start_tti={} end_tti={}", self.run_id, self.start_tti, self.end_tti)
    }

    pub fn parse_line(line: &str) -> Option<Self> {
        let rest = line.strip_prefix('#')?.trim();
        let (mut run, mut start, mut end) = (None, None, None);
        for tok in rest.split_whitespace() {
            match tok.split_once('=')? {
                ("run", v) => run = u64::from_str_radix(v, 16).ok(),
                ("start_tti", v) => start = v.parse().ok(),
                ("end_tti", v) => end = v.parse().ok(),
                _ => {}
            }
        }
        Some(Self { run_id: run?, start_tti: start?, end_tti: end? })
    }
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        format!("tti={} dir={} {}", self.tti, self.direction.token(), hex::encode(self.envelope.to_bytes()))
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let mut parts = line.split_whitespace();
        let tti = parts
            .next()
            .and_then(|t| t.strip_prefix("tti="))
            .ok_or("expected `tti=<n>`")?
            .parse::<u64>()
            .map_err(|e| format!("bad tti: {e}"))?;
        let direction = parts
            .next()
            .and_then(|t| t.strip_prefix("dir="))
            .and_then(Direction::from_token)
            .ok_or("expected `dir=dl` or `dir=ul`")?;
        let payload = parts.next().ok_or("missing envelope hex")?;
        if parts.next().is_some() {
            return Err("trailing fields".into());
        }
        let bytes = hex::decode(payload).map_err(|e| format!("bad hex: {e}"))?;
        let envelope = DciEnvelope::from_bytes(&bytes).map_err(|e| e.to_string())?;
        Ok(Self { tti, direction, envelope })
    }
}

pub fn write_trace<W: Write>(mut w: W, header: &TraceHeader, records: &[TraceRecord]) -> io::Result<()> {
    writeln!(w, "{}", header.to_line())?;
    for r in records {
        writeln!(w, "{}", r.to_line())?;
    }
    w.flush()
}

pub fn read_trace<R: BufRead>(r: R) -> Result<(TraceHeader, Vec<TraceRecord>), TraceError> {
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if header.is_none() {
                header = Some(
                    TraceHeader::parse_line(line)
                        .ok_or_else(|| TraceError::Syntax { line: i + 1, reason: "malformed header".into() })?,
                );
            }
            continue;
        }
        if header.is_none() {
            return Err(TraceError::MissingHeader);
        }
        records.push(TraceRecord::parse_line(line).map_err(|reason| TraceError::Syntax { line: i + 1, reason })?);
    }
    Ok((header.ok_or(TraceError::MissingHeader)?, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dci::{tests::worked_dci, Rnti};

    #[test]
    fn round_trip() {
        let env = DciEnvelope::from_dci(&worked_dci(), Rnti(0x4296)).unwrap();
        let header = TraceHeader { run_id: 0x4d2, start_tti: 0, end_tti: 2000 };
        let recs = vec![
            TraceRecord { tti: 17, direction: Direction::Dl, envelope: env.clone() },
            TraceRecord { tti: 18, direction: Direction::Ul, envelope: env },
        ];
        let mut buf = Vec::new();
        write_trace(&mut buf, &header, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# run=00000000000004d2 start_tti=0 end_tti=2000\n"));
        assert!(text.contains("tti=17 dir=dl 300330d8b94e00"));
        let (h, r) = read_trace(buf.as_slice()).unwrap();
        assert_eq!(h, header);
        assert_eq!(r, recs);
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(read_trace("tti=1 dir=dl 00".as_bytes()), Err(TraceError::MissingHeader)));
        let bad = "# run=01 start_tti=0 end_tti=1\ntti=1 dir=xx 00\n";
        assert!(matches!(read_trace(bad.as_bytes()), Err(TraceError::Syntax { line: 2, .. })));
        let short = "# run=01 start_tti=0 end_tti=1\ntti=1 dir=dl 0011\n";
        assert!(matches!(read_trace(short.as_bytes()), Err(TraceError::Syntax { line: 2, .. })));
    }
}
