//! Observer side: turns a stream of DCI envelopes into per-UE telemetry.
//!
//! Each envelope is unpacked, its RNTI recovered from the CRC and checked
//! against the UE table, translated to a grant, classified by HARQ state and
//! finally folded into the capacity estimator once per TTI.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::{default_efficiency, CapacityError, CapacityEstimator, CsvRow, EstimatorConfig, TelemetrySample, TtiEntry, TtiRecord};
use crate::dci::grant::dci_to_grant_common;
use crate::dci::trace::{TraceHeader, TraceRecord};
use crate::dci::{dci_to_grant, recover_rnti, verify_dci, DciFormat, Direction, Rnti};
use crate::rrc::{CellCommonConfig, ConfigError};
use crate::sim::DecodedDci;
use crate::ue::{DciKind, UeError, UeRegistry};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Capacity(#[from] CapacityError),
    #[error(transparent)]
    Ue(#[from] UeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trace record at TTI {tti} precedes TTI {current}")]
    OutOfOrder { tti: u64, current: u64 },
}

/// Counters for envelopes the observer could not use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObserverStats {
    pub accepted: u64,
    pub registrations: u64,
    /// CRC residue did not fit an RNTI, or the payload did not unpack.
    pub rejected: u64,
    /// Valid CRC for an RNTI with no known UE.
    pub unknown_rnti: u64,
    pub retransmissions: u64,
}

pub struct Observer {
    cell: CellCommonConfig,
    /// RRC setup documents by RNTI, standing in for the decoded MSG 4 payload.
    msg4_docs: HashMap<Rnti, String>,
    registry: UeRegistry,
    estimator: CapacityEstimator,
    decoded: Option<Vec<DecodedDci>>,
    stats: ObserverStats,
    last_tti: Option<u64>,
    entries: Vec<TtiEntry>,
}

impl Observer {
    pub fn new(cell: CellCommonConfig, msg4_docs: impl IntoIterator<Item = (Rnti, String)>, estimator: EstimatorConfig) -> Self {
        Self {
            estimator: CapacityEstimator::new(&cell, estimator),
            cell,
            msg4_docs: msg4_docs.into_iter().collect(),
            registry: UeRegistry::new(),
            decoded: None,
            stats: ObserverStats::default(),
            last_tti: None,
            entries: Vec::with_capacity(8),
        }
    }

    /// Keeps every accepted DCI for later comparison with ground truth.
    pub fn keep_decoded(mut self) -> Self {
        self.decoded = Some(Vec::new());
        self
    }

    pub fn registry(&self) -> &UeRegistry {
        &self.registry
    }

    pub fn estimator(&self) -> &CapacityEstimator {
        &self.estimator
    }

    pub fn stats(&self) -> ObserverStats {
        self.stats
    }

    pub fn decoded(&self) -> &[DecodedDci] {
        self.decoded.as_deref().unwrap_or(&[])
    }

    pub fn last_tti(&self) -> Option<u64> {
        self.last_tti
    }

    fn log(&mut self, d: DecodedDci) {
        if let Some(v) = &mut self.decoded {
            v.push(d);
        }
    }

    fn handle(&mut self, tti: u64, rec: &TraceRecord) -> Result<(), PipelineError> {
        let Ok(dci) = rec.envelope.dci() else {
            self.stats.rejected += 1;
            return Ok(());
        };
        let Ok(rnti) = recover_rnti(&rec.envelope) else {
            self.stats.rejected += 1;
            return Ok(());
        };
        if let Some(ue) = self.registry.get(rnti) {
            if !verify_dci(&rec.envelope, rnti) {
                self.stats.rejected += 1;
                return Ok(());
            }
            let Ok(grant) = dci_to_grant(&dci, &self.cell, &ue.config, rnti) else {
                self.stats.rejected += 1;
                return Ok(());
            };
            let class = match self.registry.classify(rnti, &dci, grant.tbs_bits, grant.num_prb, tti) {
                Ok(c) => c,
                Err(UeError::HarqIdOutOfRange { .. }) => {
                    self.stats.rejected += 1;
                    return Ok(());
                }
                Err(e) => return Err(e.into()),
            };
            self.stats.accepted += 1;
            self.stats.retransmissions += u64::from(class.kind == DciKind::Retransmission);
            if grant.direction == Direction::Dl {
                self.entries.push(TtiEntry {
                    rnti,
                    effective_tbs: class.effective_tbs,
                    num_prb: grant.num_prb,
                    is_new_data: class.kind == DciKind::NewData,
                });
            }
            self.log(DecodedDci { tti, rnti, direction: grant.direction, num_prb: grant.num_prb, tbs: class.effective_tbs });
        } else if dci.format == DciFormat::F1_0 && self.msg4_docs.contains_key(&rnti) {
            let grant = match dci_to_grant_common(&dci, &self.cell, rnti) {
                Ok(g) => g,
                Err(_) => {
                    self.stats.rejected += 1;
                    return Ok(());
                }
            };
            let doc = &self.msg4_docs[&rnti];
            let cfg = self.registry.register_from_msg4(&rec.envelope, doc, tti)?.config.clone();
            self.estimator.register_ue(rnti, default_efficiency(&self.cell, &cfg), tti)?;
            self.stats.registrations += 1;
            self.entries.push(TtiEntry { rnti, effective_tbs: 0, num_prb: grant.num_prb, is_new_data: false });
            self.log(DecodedDci { tti, rnti, direction: Direction::Dl, num_prb: grant.num_prb, tbs: 0 });
        } else {
            self.stats.unknown_rnti += 1;
        }
        Ok(())
    }

    /// Processes every record of one TTI and advances the estimator, even
    /// when `records` is empty.
    pub fn process_tti(&mut self, tti: u64, records: &[TraceRecord]) -> Result<TtiRecord, PipelineError> {
        if let Some(last) = self.last_tti {
            if tti <= last {
                return Err(CapacityError::NonMonotonicTti { last, got: tti }.into());
            }
        }
        self.entries.clear();
        for rec in records {
            self.handle(tti, rec)?;
        }
        let record = self.estimator.make_record(tti, std::mem::take(&mut self.entries));
        self.estimator.record_tti(&record)?;
        self.last_tti = Some(tti);
        Ok(record)
    }

    pub fn sample(&self, rnti: Rnti) -> Result<TelemetrySample, PipelineError> {
        let now = self.last_tti.unwrap_or(0);
        Ok(self.estimator.sample(rnti, now)?)
    }

    /// Current sample for every registered UE, by RNTI.
    pub fn samples(&self) -> Vec<(Rnti, TelemetrySample)> {
        let mut rntis: Vec<Rnti> = self.registry.rntis().collect();
        rntis.sort();
        rntis.into_iter().filter_map(|r| self.sample(r).ok().map(|s| (r, s))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayOptions {
    /// TTIs between recorded samples; 0 disables sampling.
    pub sample_every: u64,
    pub estimator: EstimatorConfig,
    pub keep_decoded: bool,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self { sample_every: 20, estimator: EstimatorConfig::default(), keep_decoded: true }
    }
}

/// Per-UE rates recorded during a replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateSample {
    pub tti: u64,
    pub rnti: Rnti,
    /// Unsaturated allocated rate in bit/s.
    pub allocated: u64,
    pub sample: TelemetrySample,
    pub used_prb: u32,
    pub spare_prb: u32,
}

impl RateSample {
    pub fn csv_row(&self) -> CsvRow {
        CsvRow {
            tti: self.tti,
            rnti: self.rnti.to_string(),
            b_alloc: self.sample.b_alloc,
            b_spare: self.sample.b_spare,
            used_prb: self.used_prb,
            spare_prb: self.spare_prb,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub header: TraceHeader,
    pub decoded: Vec<DecodedDci>,
    pub samples: Vec<RateSample>,
    pub stats: ObserverStats,
}

/// Feeds a whole trace through an observer, one call per TTI in
/// `[start_tti, end_tti)`.
pub fn replay(
    header: &TraceHeader,
    records: &[TraceRecord],
    cell: &CellCommonConfig,
    msg4_docs: impl IntoIterator<Item = (Rnti, String)>,
    opts: ReplayOptions,
) -> Result<ReplayOutput, PipelineError> {
    let mut obs = Observer::new(cell.clone(), msg4_docs, opts.estimator);
    if opts.keep_decoded {
        obs = obs.keep_decoded();
    }
    let mut samples = Vec::new();
    let mut i = 0;
    for tti in header.start_tti..header.end_tti {
        let start = i;
        while i < records.len() && records[i].tti == tti {
            i += 1;
        }
        if i < records.len() && records[i].tti < tti {
            return Err(PipelineError::OutOfOrder { tti: records[i].tti, current: tti });
        }
        let rec = obs.process_tti(tti, &records[start..i])?;
        if opts.sample_every > 0 && (tti + 1 - header.start_tti) % opts.sample_every == 0 {
            for (rnti, sample) in obs.samples() {
                samples.push(RateSample {
                    tti,
                    rnti,
                    allocated: obs.estimator().allocated_rate(rnti, tti)?,
                    sample,
                    used_prb: rec.used_prb_total,
                    spare_prb: rec.spare_prb,
                });
            }
        }
    }
    Ok(ReplayOutput { header: *header, stats: obs.stats(), decoded: obs.decoded.take().unwrap_or_default(), samples })
}
