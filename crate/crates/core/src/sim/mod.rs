//! Deterministic gNB scheduler that emits DCI envelopes and a ground-truth log.
//!
//! Every downlink slot serves pending retransmissions first and then splits
//! the remaining PRBs round-robin among UEs with queued data, at most
//! `max_dci_per_slot` grants per slot. Uplink slots do the same for uplink
//! queues and special slots carry nothing. Dropped envelopes vanish from the
//! observer stream only; the MSG 4 grant is never dropped.

pub mod config;
pub mod truth;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{ChannelSpec, SimConfig, TrafficModel, UeSpec};
pub use truth::{match_traces, read_ground_truth, write_ground_truth, DecodedDci, GroundTruth, GroundTruthEntry, GroundTruthHeader, MissReport};

use crate::dci::grant::dci_to_grant_common;
use crate::dci::mcs::max_mcs;
use crate::dci::trace::{write_trace, TraceHeader, TraceRecord};
use crate::dci::{dci_to_grant, riv_encode, Dci, DciEnvelope, DciError, DciFormat, Direction, PrbRange, RntiType, Rnti};
use crate::rrc::{msg4_to_document, parse_msg4, parse_sib1, sib1_to_document, CellCommonConfig, ConfigError, SlotKind, UeDedicatedConfig};

pub const BUNDLED_SIB1: &str = include_str!("../../fixtures/sib1.json");
pub const BUNDLED_MSG4: &str = include_str!("../../fixtures/msg4.json");

const RV_SEQUENCE: [u8; 4] = [0, 2, 3, 1];
const MSG4_PRBS: u16 = 4;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dci(#[from] DciError),
    #[error("trace belongs to run {trace:016x} but ground truth to {truth:016x}")]
    MismatchedRuns { trace: u64, truth: u64 },
    #[error("ground truth line {line}: {reason}")]
    Truth { line: usize, reason: String },
}

fn dir_index(d: Direction) -> usize {
    match d {
        Direction::Dl => 0,
        Direction::Ul => 1,
    }
}

#[derive(Debug, Clone, Copy)]
struct Retx {
    dci: Dci,
    num_prb: u16,
    tbs: u32,
    ready: u64,
    attempt: u8,
}

#[derive(Debug, Clone, Copy, Default)]
struct Harq {
    ndi: u8,
    retx: Option<Retx>,
}

#[derive(Debug, Clone)]
struct Link {
    traffic: TrafficModel,
    backlog: u64,
    carry: f64,
    harq: Vec<Harq>,
    next_harq: usize,
}

impl Link {
    fn new(traffic: TrafficModel, processes: usize) -> Self {
        Self { traffic, backlog: 0, carry: 0.0, harq: vec![Harq::default(); processes], next_harq: 0 }
    }

    fn arrive(&mut self, tti_seconds: f64) {
        if let TrafficModel::Constant { bits_per_second } = self.traffic {
            self.carry += bits_per_second * tti_seconds;
            let whole = self.carry.floor();
            self.backlog += whole as u64;
            self.carry -= whole;
        }
    }

    fn wants_data(&self) -> bool {
        matches!(self.traffic, TrafficModel::Saturating) || self.backlog > 0
    }

    fn free_process(&self) -> Option<usize> {
        let n = self.harq.len();
        (0..n).map(|i| (self.next_harq + i) % n).find(|&i| self.harq[i].retx.is_none())
    }
}

#[derive(Debug, Clone)]
struct SimUe {
    rnti: Rnti,
    config: Arc<UeDedicatedConfig>,
    msg4_doc: String,
    attach_tti: u64,
    attached: bool,
    channel: Vec<(u64, u8)>,
    links: [Link; 2],
}

impl SimUe {
    fn mcs_at(&self, tti: u64) -> u8 {
        let i = self.channel.partition_point(|&(t, _)| t <= tti);
        let raw = if i == 0 { self.channel[0].1 } else { self.channel[i - 1].1 };
        raw.min(max_mcs(self.config.mcs_table))
    }
}

/// Everything emitted in one slot.
#[derive(Debug, Clone, Default)]
pub struct SlotOutput {
    pub tti: u64,
    pub truth: Vec<GroundTruthEntry>,
    pub observed: Vec<TraceRecord>,
}

/// A finished run held in memory.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub trace_header: TraceHeader,
    pub observed: Vec<TraceRecord>,
    pub truth: GroundTruth,
    pub cell: CellCommonConfig,
    pub msg4_docs: BTreeMap<Rnti, String>,
}

struct SlotPlan<'a> {
    tti: u64,
    dir: Direction,
    free: u16,
    next_prb: u16,
    count: u8,
    /// UEs already holding a grant in this slot.
    served: Vec<bool>,
    out: &'a mut Vec<GroundTruthEntry>,
}

pub struct Simulator {
    cfg: SimConfig,
    cell: CellCommonConfig,
    ues: Vec<SimUe>,
    rng: ChaCha8Rng,
    loss_rng: ChaCha8Rng,
    tti: u64,
    rr: [usize; 2],
    run_id: u64,
    tti_seconds: f64,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let mut cell = parse_sib1(BUNDLED_SIB1)?;
        cell.carrier_bandwidth_prb = cfg.carrier_bandwidth_prb;
        cell.subcarrier_spacing = cfg.subcarrier_spacing()?;
        cell.tdd = Some(cfg.tdd()?);
        let mut ues = Vec::with_capacity(cfg.ues.len());
        for spec in &cfg.ues {
            let msg4_doc = match &spec.msg4 {
                Some(p) => std::fs::read_to_string(p)?,
                None => BUNDLED_MSG4.to_string(),
            };
            let config = parse_msg4(&msg4_doc)?;
            if config.pdsch_list(&cell).is_empty() {
                return Err(SimError::InvalidConfig(format!("UE {:#06x} has no PDSCH allocation list", spec.rnti)));
            }
            if spec.uplink_traffic != TrafficModel::Idle && config.pusch_time_domain_list.is_empty() {
                return Err(SimError::InvalidConfig(format!("UE {:#06x} has uplink traffic but no PUSCH list", spec.rnti)));
            }
            let processes = config.num_harq_processes.clamp(1, crate::ue::HARQ_SLOTS as u8) as usize;
            ues.push(SimUe {
                rnti: Rnti(spec.rnti),
                config: Arc::new(config),
                msg4_doc,
                attach_tti: spec.attach_tti,
                attached: false,
                channel: spec.channel.points()?,
                links: [Link::new(spec.traffic.clone(), processes), Link::new(spec.uplink_traffic.clone(), processes)],
            });
        }
        let tti_seconds = cell.subcarrier_spacing.tti_duration_us() as f64 / 1e6;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            loss_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE_4E5B),
            run_id: cfg.run_id(),
            cfg,
            cell,
            ues,
            tti: 0,
            rr: [0, 0],
            tti_seconds,
        })
    }

    pub fn cell(&self) -> &CellCommonConfig {
        &self.cell
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn run_id(&self) -> u64 {
        self.run_id
    }

    pub fn tti(&self) -> u64 {
        self.tti
    }

    pub fn msg4_docs(&self) -> BTreeMap<Rnti, String> {
        self.ues.iter().map(|u| (u.rnti, u.msg4_doc.clone())).collect()
    }

    pub fn ue_config(&self, rnti: Rnti) -> Option<Arc<UeDedicatedConfig>> {
        self.ues.iter().find(|u| u.rnti == rnti).map(|u| u.config.clone())
    }

    /// Queues downlink bits for a UE with `External` or any other traffic model.
    pub fn offer(&mut self, rnti: Rnti, bits: u64) {
        if let Some(ue) = self.ues.iter_mut().find(|u| u.rnti == rnti) {
            ue.links[0].backlog += bits;
        }
    }

    /// Downlink bits waiting at the gNB for a UE.
    pub fn backlog(&self, rnti: Rnti) -> u64 {
        self.ues.iter().find(|u| u.rnti == rnti).map_or(0, |u| u.links[0].backlog)
    }

    /// Downlink rate a UE would get with the whole carrier at its current MCS.
    pub fn full_carrier_rate(&self, rnti: Rnti) -> Result<u64, SimError> {
        let ue = self.ues.iter().find(|u| u.rnti == rnti).ok_or(SimError::InvalidConfig(format!("no UE {rnti}")))?;
        let dci = self.data_dci(ue, Direction::Dl, 0, self.cell.carrier_bandwidth_prb, 0, 0, 0)?;
        let tbs = dci_to_grant(&dci, &self.cell, &ue.config, ue.rnti)?.tbs_bits as u64;
        let tdd = self.cell.tdd.as_ref();
        let (dl, period) = tdd.map_or((1, 1), |p| (p.count(SlotKind::Downlink) as u64, p.slots().len() as u64));
        Ok(tbs * dl * self.cell.subcarrier_spacing.slots_per_second() as u64 / period)
    }

    #[allow(clippy::too_many_arguments)]
    fn data_dci(&self, ue: &SimUe, dir: Direction, start: u16, len: u16, harq: u8, ndi: u8, rv: u8) -> Result<Dci, SimError> {
        let format = match dir {
            Direction::Dl => DciFormat::F1_1,
            Direction::Ul => DciFormat::F0_1,
        };
        let mut dci = Dci::zeroed(format);
        dci.freq_riv = riv_encode(PrbRange { start, len }, self.cell.carrier_bandwidth_prb) as u16;
        dci.mcs = ue.mcs_at(self.tti);
        dci.harq_id = harq;
        dci.ndi = ndi;
        dci.rv = rv;
        dci.tpc = 1;
        Ok(dci)
    }

    fn tbs_for(&self, ue: &SimUe, dir: Direction, len: u16) -> Result<u32, SimError> {
        let dci = self.data_dci(ue, dir, 0, len, 0, 0, 0)?;
        Ok(dci_to_grant(&dci, &self.cell, &ue.config, ue.rnti)?.tbs_bits)
    }

    /// Smallest PRB count whose TBS covers `bits`, capped at `cap`.
    fn prbs_for(&self, ue: &SimUe, dir: Direction, bits: u64, cap: u16) -> Result<u16, SimError> {
        if cap == 0 || self.tbs_for(ue, dir, cap)? as u64 <= bits {
            return Ok(cap);
        }
        let (mut lo, mut hi) = (1u16, cap);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.tbs_for(ue, dir, mid)? as u64 >= bits {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Ok(lo)
    }

    fn attach_pending(&mut self, plan: &mut SlotPlan<'_>) -> Result<(), SimError> {
        for i in 0..self.ues.len() {
            let ue = &self.ues[i];
            if ue.attached || ue.attach_tti > plan.tti || plan.count >= self.cfg.max_dci_per_slot || plan.free < MSG4_PRBS {
                continue;
            }
            let mut dci = Dci::zeroed(DciFormat::F1_0);
            dci.freq_riv = riv_encode(PrbRange { start: plan.next_prb, len: MSG4_PRBS }, self.cell.carrier_bandwidth_prb) as u16;
            let g = dci_to_grant_common(&dci, &self.cell, ue.rnti)?;
            plan.out.push(GroundTruthEntry {
                tti: plan.tti,
                rnti: ue.rnti,
                rnti_type: RntiType::Tc,
                direction: Direction::Dl,
                dci,
                start_prb: plan.next_prb,
                num_prb: MSG4_PRBS,
                tbs: g.tbs_bits,
                is_retransmission: false,
            });
            plan.next_prb += MSG4_PRBS;
            plan.free -= MSG4_PRBS;
            plan.count += 1;
            plan.served[i] = true;
            self.ues[i].attached = true;
        }
        Ok(())
    }

    fn push_grant(&mut self, plan: &mut SlotPlan<'_>, ui: usize, mut dci: Dci, num_prb: u16, tbs: u32, retx: bool) {
        dci.freq_riv = riv_encode(PrbRange { start: plan.next_prb, len: num_prb }, self.cell.carrier_bandwidth_prb) as u16;
        plan.out.push(GroundTruthEntry {
            tti: plan.tti,
            rnti: self.ues[ui].rnti,
            rnti_type: RntiType::C,
            direction: plan.dir,
            dci,
            start_prb: plan.next_prb,
            num_prb,
            tbs,
            is_retransmission: retx,
        });
        plan.next_prb += num_prb;
        plan.free -= num_prb;
        plan.count += 1;
        plan.served[ui] = true;
    }

    #[allow(clippy::too_many_arguments)]
    fn maybe_schedule_retx(&mut self, ui: usize, d: usize, harq: usize, dci: Dci, num_prb: u16, tbs: u32, attempt: u8) {
        let p = self.cfg.retransmission_probability;
        if (attempt as usize) + 1 < RV_SEQUENCE.len() && p > 0.0 && self.rng.random_bool(p) {
            let ready = self.tti + self.cfg.harq_rtt_tti;
            self.ues[ui].links[d].harq[harq].retx = Some(Retx { dci, num_prb, tbs, ready, attempt: attempt + 1 });
        }
    }

    fn schedule(&mut self, plan: &mut SlotPlan<'_>) -> Result<(), SimError> {
        let d = dir_index(plan.dir);
        let n_ues = self.ues.len();
        let start = self.rr[d] % n_ues.max(1);
        let order: Vec<usize> = (0..n_ues).map(|i| (start + i) % n_ues).filter(|&i| self.ues[i].attached).collect();

        for &ui in &order {
            for h in 0..self.ues[ui].links[d].harq.len() {
                let Some(r) = self.ues[ui].links[d].harq[h].retx else { continue };
                if plan.served[ui] || r.ready > plan.tti || plan.count >= self.cfg.max_dci_per_slot || plan.free < r.num_prb {
                    continue;
                }
                self.ues[ui].links[d].harq[h].retx = None;
                let mut dci = r.dci;
                dci.rv = RV_SEQUENCE[r.attempt as usize];
                self.push_grant(plan, ui, dci, r.num_prb, r.tbs, true);
                self.maybe_schedule_retx(ui, d, h, dci, r.num_prb, r.tbs, r.attempt);
            }
        }

        let candidates: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&ui| {
                let l = &self.ues[ui].links[d];
                !plan.served[ui] && l.wants_data() && l.free_process().is_some()
            })
            .take(self.cfg.max_dci_per_slot.saturating_sub(plan.count) as usize)
            .collect();
        let n = candidates.len();
        for (k, &ui) in candidates.iter().enumerate() {
            let share = plan.free / (n - k) as u16;
            if share == 0 {
                continue;
            }
            let link = &self.ues[ui].links[d];
            let want = if matches!(link.traffic, TrafficModel::Saturating) { u64::MAX } else { link.backlog };
            let num_prb = self.prbs_for(&self.ues[ui], plan.dir, want, share)?;
            let h = self.ues[ui].links[d].free_process().expect("filtered");
            let ndi = self.ues[ui].links[d].harq[h].ndi ^ 1;
            let dci = self.data_dci(&self.ues[ui], plan.dir, 0, num_prb, h as u8, ndi, 0)?;
            let tbs = dci_to_grant(&dci, &self.cell, &self.ues[ui].config, self.ues[ui].rnti)?.tbs_bits;
            let link = &mut self.ues[ui].links[d];
            link.harq[h].ndi = ndi;
            link.next_harq = (h + 1) % link.harq.len();
            link.backlog = link.backlog.saturating_sub(tbs as u64);
            self.push_grant(plan, ui, dci, num_prb, tbs, false);
            let dci = plan.out.last().expect("pushed").dci;
            self.maybe_schedule_retx(ui, d, h, dci, num_prb, tbs, 0);
        }
        if n_ues > 0 {
            self.rr[d] = (start + 1) % n_ues;
        }
        Ok(())
    }

    /// Runs one slot and advances the clock.
    pub fn step(&mut self) -> Result<SlotOutput, SimError> {
        let tti = self.tti;
        for ue in &mut self.ues {
            for link in &mut ue.links {
                link.arrive(self.tti_seconds);
            }
        }
        let mut truth = Vec::new();
        let kind = self.cell.slot_kind(tti);
        let dir = match kind {
            SlotKind::Downlink => Some(Direction::Dl),
            SlotKind::Uplink => Some(Direction::Ul),
            SlotKind::Special => None,
        };
        if let Some(dir) = dir {
            let mut plan = SlotPlan { tti, dir, free: self.cell.carrier_bandwidth_prb, next_prb: 0, count: 0, served: vec![false; self.ues.len()], out: &mut truth };
            if dir == Direction::Dl {
                self.attach_pending(&mut plan)?;
            }
            self.schedule(&mut plan)?;
        }
        let loss = [self.cfg.loss_dl(), self.cfg.loss_ul()];
        let mut observed = Vec::with_capacity(truth.len());
        for e in &truth {
            let p = loss[dir_index(e.direction)];
            let dropped = e.rnti_type == RntiType::C && p > 0.0 && self.loss_rng.random::<f64>() < p;
            if !dropped {
                observed.push(TraceRecord { tti, direction: e.direction, envelope: DciEnvelope::from_dci(&e.dci, e.rnti)? });
            }
        }
        self.tti += 1;
        Ok(SlotOutput { tti, truth, observed })
    }

    pub fn trace_header(&self) -> TraceHeader {
        TraceHeader { run_id: self.run_id, start_tti: 0, end_tti: self.cfg.duration_tti }
    }

    pub fn truth_header(&self) -> GroundTruthHeader {
        GroundTruthHeader {
            format: truth::TRUTH_FORMAT.into(),
            run_id: format!("{:016x}", self.run_id),
            seed: self.cfg.seed,
            duration_tti: self.cfg.duration_tti,
            carrier_bandwidth_prb: self.cfg.carrier_bandwidth_prb,
        }
    }
}

/// Runs a configuration for its full duration.
pub fn run(cfg: SimConfig) -> Result<SimRun, SimError> {
    let mut sim = Simulator::new(cfg)?;
    let mut observed = Vec::new();
    let mut entries = Vec::new();
    while sim.tti() < sim.config().duration_tti {
        let out = sim.step()?;
        observed.extend(out.observed);
        entries.extend(out.truth);
    }
    Ok(SimRun {
        trace_header: sim.trace_header(),
        observed,
        truth: GroundTruth { header: sim.truth_header(), entries },
        cell: sim.cell().clone(),
        msg4_docs: sim.msg4_docs(),
    })
}

pub const TRACE_FILE: &str = "trace.txt";
pub const TRUTH_FILE: &str = "ground_truth.ndjson";
pub const SIB1_FILE: &str = "sib1.json";
pub const MSG4_DIR: &str = "msg4";

pub fn msg4_file_name(rnti: Rnti) -> String {
    format!("{:04x}.json", rnti.0)
}

impl SimRun {
    /// Writes the trace, ground truth, SIB 1 and one MSG 4 document per UE.
    pub fn write_to(&self, dir: &Path) -> Result<(), SimError> {
        std::fs::create_dir_all(dir.join(MSG4_DIR))?;
        let trace = std::fs::File::create(dir.join(TRACE_FILE))?;
        write_trace(std::io::BufWriter::new(trace), &self.trace_header, &self.observed)?;
        let gt = std::fs::File::create(dir.join(TRUTH_FILE))?;
        truth::write_ground_truth(std::io::BufWriter::new(gt), &self.truth)?;
        let sib1 = serde_json::to_string_pretty(&sib1_to_document(&self.cell)).expect("json");
        std::fs::write(dir.join(SIB1_FILE), sib1)?;
        for (rnti, doc) in &self.msg4_docs {
            let normalized = serde_json::to_string_pretty(&msg4_to_document(&parse_msg4(doc)?)).expect("json");
            std::fs::write(dir.join(MSG4_DIR).join(msg4_file_name(*rnti)), normalized)?;
        }
        Ok(())
    }
}
