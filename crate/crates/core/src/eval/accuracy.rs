//! Observer accuracy against simulator ground truth: DCI misses, PRB error
//! and windowed throughput error.

use std::collections::{BTreeMap, HashMap};
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dci::trace::{read_trace, TraceHeader, TraceRecord};
use crate::dci::{Direction, Rnti};
use crate::pipeline::{replay, ReplayOptions, RateSample};
use crate::rrc::{parse_sib1, CellCommonConfig};
use crate::sim::{match_traces, read_ground_truth, GroundTruth, MissReport, SimRun, MSG4_DIR, SIB1_FILE, TRACE_FILE, TRUTH_FILE};
use crate::stats::{summarize, Summary};

/// Everything a simulator run leaves on disk, loaded back.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
    pub truth: GroundTruth,
    pub cell: CellCommonConfig,
    pub msg4_docs: BTreeMap<Rnti, String>,
}

impl RunArtifacts {
    pub fn load(dir: &Path) -> Result<Self, EvalError> {
        let (header, records) = read_trace(BufReader::new(std::fs::File::open(dir.join(TRACE_FILE))?))?;
        let truth = read_ground_truth(BufReader::new(std::fs::File::open(dir.join(TRUTH_FILE))?))?;
        let cell = parse_sib1(&std::fs::read_to_string(dir.join(SIB1_FILE))?)?;
        let mut msg4_docs = BTreeMap::new();
        for entry in std::fs::read_dir(dir.join(MSG4_DIR))? {
            let path = entry?.path();
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let Ok(rnti) = u16::from_str_radix(stem, 16) else { continue };
            msg4_docs.insert(Rnti(rnti), std::fs::read_to_string(&path)?);
        }
        Ok(Self { header, records, truth, cell, msg4_docs })
    }
}

impl From<SimRun> for RunArtifacts {
    fn from(r: SimRun) -> Self {
        Self { header: r.trace_header, records: r.observed, truth: r.truth, cell: r.cell, msg4_docs: r.msg4_docs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputPoint {
    pub tti: u64,
    pub rnti: Rnti,
    pub estimated: u64,
    pub truth: u64,
}

impl ThroughputPoint {
    pub fn abs_error(&self) -> u64 {
        self.estimated.abs_diff(self.truth)
    }

    /// Relative error in percent.
    pub fn rel_error_pct(&self) -> f64 {
        100.0 * self.abs_error() as f64 / self.truth as f64
    }
}

/// Pairs each estimated rate with the ground-truth new-data rate over the
/// same `(tti - window, tti]` span. Points with zero true rate are skipped.
pub fn throughput_points(samples: &[RateSample], truth: &GroundTruth, window_tti: u64, tti_us: u32) -> Vec<ThroughputPoint> {
    // per-UE cumulative new-data bits, keyed by TTI
    let mut cum: HashMap<Rnti, (Vec<u64>, Vec<u64>)> = HashMap::new();
    for e in &truth.entries {
        let bits = e.new_data_bits() as u64;
        if e.direction != Direction::Dl || bits == 0 {
            continue;
        }
        let (ttis, sums) = cum.entry(e.rnti).or_default();
        let prev = sums.last().copied().unwrap_or(0);
        ttis.push(e.tti);
        sums.push(prev + bits);
    }
    let upto = |ttis: &[u64], sums: &[u64], t: u64| match ttis.partition_point(|&x| x <= t) {
        0 => 0,
        i => sums[i - 1],
    };
    let denom = window_tti as u128 * tti_us as u128;
    samples
        .iter()
        .filter_map(|s| {
            let (ttis, sums) = cum.get(&s.rnti)?;
            let horizon = s.tti.saturating_sub(window_tti);
            let bits = upto(ttis, sums, s.tti) - upto(ttis, sums, horizon);
            let rate = (bits as u128 * 1_000_000 / denom) as u64;
            (rate > 0).then_some(ThroughputPoint { tti: s.tti, rnti: s.rnti, estimated: s.allocated, truth: rate })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub misses: MissReport,
    /// Relative throughput error in percent.
    pub throughput_rel_pct: Summary,
    /// Absolute throughput error in bit/s.
    pub throughput_abs_bps: Summary,
    pub decoded_dcis: usize,
    pub truth_dcis: usize,
}

pub fn accuracy_report(run: &RunArtifacts, opts: ReplayOptions) -> Result<(AccuracyReport, Vec<ThroughputPoint>), EvalError> {
    let out = replay(&run.header, &run.records, &run.cell, run.msg4_docs.clone(), ReplayOptions { keep_decoded: true, ..opts })?;
    let misses = match_traces(&run.header, &out.decoded, &run.truth)?;
    let tti_us = run.cell.subcarrier_spacing.tti_duration_us();
    let window_tti = (opts.estimator.window_ms as u64 * 1000 / tti_us as u64).max(1);
    let points = throughput_points(&out.samples, &run.truth, window_tti, tti_us);
    let report = AccuracyReport {
        misses,
        throughput_rel_pct: summarize(points.iter().map(ThroughputPoint::rel_error_pct)),
        throughput_abs_bps: summarize(points.iter().map(|p| p.abs_error() as f64)),
        decoded_dcis: out.decoded.len(),
        truth_dcis: run.truth.entries.len(),
    };
    Ok((report, points))
}
