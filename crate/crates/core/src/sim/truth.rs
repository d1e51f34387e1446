//! Ground-truth log and comparison against what an observer decoded.
//!
//! The log is newline-delimited JSON: a header object carrying the run id,
//! then one object per emitted DCI.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::dci::trace::TraceHeader;
use crate::dci::{Dci, Direction, RntiType, Rnti};
use crate::stats::{summarize, Summary};

pub const TRUTH_FORMAT: &str = "ranscope-ground-truth/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthHeader {
    pub format: String,
    /// 16 hex digits, same value as the observer trace header.
    pub run_id: String,
    pub seed: u64,
    pub duration_tti: u64,
    pub carrier_bandwidth_prb: u16,
}

impl GroundTruthHeader {
    pub fn run_id_value(&self) -> Option<u64> {
        u64::from_str_radix(&self.run_id, 16).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub tti: u64,
    pub rnti: Rnti,
    pub rnti_type: RntiType,
    pub direction: Direction,
    pub dci: Dci,
    pub start_prb: u16,
    pub num_prb: u16,
    pub tbs: u32,
    pub is_retransmission: bool,
}

impl GroundTruthEntry {
    /// Bits that carry fresh user data.
    pub fn new_data_bits(&self) -> u32 {
        if self.is_retransmission || self.rnti_type != RntiType::C {
            0
        } else {
            self.tbs
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub header: GroundTruthHeader,
    pub entries: Vec<GroundTruthEntry>,
}

pub fn write_ground_truth<W: Write>(mut w: W, truth: &GroundTruth) -> Result<(), SimError> {
    serde_json::to_writer(&mut w, &truth.header).map_err(std::io::Error::other)?;
    writeln!(w)?;
    for e in &truth.entries {
        serde_json::to_writer(&mut w, e).map_err(std::io::Error::other)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth<R: BufRead>(r: R) -> Result<GroundTruth, SimError> {
    let mut header = None;
    let mut entries = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |e: serde_json::Error| SimError::Truth { line: i + 1, reason: e.to_string() };
        if header.is_none() {
            let h: GroundTruthHeader = serde_json::from_str(&line).map_err(bad)?;
            if h.format != TRUTH_FORMAT {
                return Err(SimError::Truth { line: i + 1, reason: format!("unknown format `{}`", h.format) });
            }
            header = Some(h);
        } else {
            entries.push(serde_json::from_str(&line).map_err(bad)?);
        }
    }
    let header = header.ok_or(SimError::Truth { line: 0, reason: "empty ground-truth log".into() })?;
    Ok(GroundTruth { header, entries })
}

/// One DCI the observer accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedDci {
    pub tti: u64,
    pub rnti: Rnti,
    pub direction: Direction,
    pub num_prb: u16,
    pub tbs: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LinkMiss {
    pub total: u64,
    pub missed: u64,
}

impl LinkMiss {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.missed as f64 / self.total as f64
        }
    }

    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.missed += u64::from(!hit);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UeMiss {
    pub rnti: Rnti,
    pub dl: LinkMiss,
    pub ul: LinkMiss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissReport {
    pub per_ue: Vec<UeMiss>,
    pub dl: LinkMiss,
    pub ul: LinkMiss,
    /// Decoded DCIs with no ground-truth counterpart.
    pub spurious: u64,
    /// Per downlink TTI: PRB disagreement summed over DCIs found in both sets.
    pub prb_error_matched: Summary,
    /// Per downlink TTI: difference of total PRBs, so missed DCIs count in full.
    pub prb_error_total: Summary,
}

type Key = (u64, Rnti, Direction);

/// Compares observer output with the log of the run that produced its trace.
pub fn match_traces(trace: &TraceHeader, decoded: &[DecodedDci], truth: &GroundTruth) -> Result<MissReport, SimError> {
    let truth_id = truth.header.run_id_value().unwrap_or(!trace.run_id);
    if truth_id != trace.run_id {
        return Err(SimError::MismatchedRuns { trace: trace.run_id, truth: truth_id });
    }
    let mut seen: HashMap<Key, u16> = HashMap::with_capacity(decoded.len());
    for d in decoded {
        seen.insert((d.tti, d.rnti, d.direction), d.num_prb);
    }
    let mut per_ue: BTreeMap<Rnti, UeMiss> = BTreeMap::new();
    let (mut dl, mut ul) = (LinkMiss::default(), LinkMiss::default());
    let mut matched = 0u64;
    // per TTI: (matched abs error, truth PRBs, decoded PRBs)
    let mut per_tti: BTreeMap<u64, (u64, u64, u64)> = BTreeMap::new();
    for e in &truth.entries {
        let hit = seen.get(&(e.tti, e.rnti, e.direction)).copied();
        matched += u64::from(hit.is_some());
        let ue = per_ue.entry(e.rnti).or_insert(UeMiss { rnti: e.rnti, dl: LinkMiss::default(), ul: LinkMiss::default() });
        match e.direction {
            Direction::Dl => {
                ue.dl.add(hit.is_some());
                dl.add(hit.is_some());
                let slot = per_tti.entry(e.tti).or_default();
                slot.1 += e.num_prb as u64;
                if let Some(p) = hit {
                    slot.0 += (e.num_prb as i64 - p as i64).unsigned_abs();
                    slot.2 += p as u64;
                }
            }
            Direction::Ul => {
                ue.ul.add(hit.is_some());
                ul.add(hit.is_some());
            }
        }
    }
    Ok(MissReport {
        per_ue: per_ue.into_values().collect(),
        dl,
        ul,
        spurious: decoded.len() as u64 - matched,
        prb_error_matched: summarize(per_tti.values().map(|s| s.0 as f64)),
        prb_error_total: summarize(per_tti.values().map(|s| s.1.abs_diff(s.2) as f64)),
    })
}
