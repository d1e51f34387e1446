//! Per-UE allocated and spare bitrate from classified downlink grants.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::sync::Arc;

use num_rational::Ratio;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dci::mcs::mcs_lookup;
use crate::dci::{Rnti, SymbolRange};
use crate::rrc::{CellCommonConfig, SlotKind, TddPattern, UeDedicatedConfig};
use crate::tbs::{grant_tbs, ReCountInputs, SUBCARRIERS_PER_RB};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CapacityError {
    #[error("TTI {got} does not follow {last}")]
    NonMonotonicTti { last: u64, got: u64 },
    #[error("RNTI {0} is not tracked")]
    UnknownRnti(Rnti),
    #[error("RNTI {0} is already tracked")]
    DuplicateRnti(Rnti),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtiEntry {
    pub rnti: Rnti,
    /// Zero for retransmissions.
    pub effective_tbs: u32,
    pub num_prb: u16,
    pub is_new_data: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtiRecord {
    pub tti: u64,
    pub entries: Vec<TtiEntry>,
    pub used_prb_total: u32,
    pub spare_prb: u32,
}

impl TtiRecord {
    /// `capacity_prb` is the number of PRBs that could carry downlink data in
    /// this slot; retransmissions count as used.
    pub fn new(tti: u64, entries: Vec<TtiEntry>, capacity_prb: u32) -> Self {
        let used_prb_total = entries.iter().map(|e| e.num_prb as u32).sum();
        Self { tti, entries, used_prb_total, spare_prb: capacity_prb.saturating_sub(used_prb_total) }
    }
}

/// Rate tuple for one UE, stamped with the TTI it describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub tti: u64,
    pub b_alloc: u32,
    pub b_spare: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActiveMode {
    /// UEs with a grant or registration inside the window.
    #[default]
    Active,
    /// Every registered UE.
    Connected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub window_ms: u32,
    pub active_mode: ActiveMode,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { window_ms: 100, active_mode: ActiveMode::Active }
    }
}

/// Conservative efficiency for a UE without grant history: one PRB at MCS 0
/// of its table, over the first time-domain allocation.
pub fn default_efficiency(cell: &CellCommonConfig, ue: &UeDedicatedConfig) -> Ratio<u64> {
    let list = ue.pdsch_list(cell);
    let (symbols, dmrs) = match list.first() {
        Some(t) => {
            let r = t.symbols();
            (r, SUBCARRIERS_PER_RB * ue.dmrs_pattern(t.mapping_type, r).count_in(r))
        }
        None => {
            let r = SymbolRange { start: 2, len: 12 };
            (r, SUBCARRIERS_PER_RB * ue.dmrs_pattern(crate::rrc::MappingType::A, r).count_in(r))
        }
    };
    let re = ReCountInputs { n_prb: 1, num_symbols: symbols.len as u32, dmrs_re_per_prb: dmrs, overhead: ue.xoverhead as u32 };
    let mcs = mcs_lookup(0, ue.mcs_table).expect("MCS 0 exists in every table");
    let tbs = grant_tbs(&re, mcs, ue.max_mimo_layers).unwrap_or(0).max(1);
    Ratio::from_integer(tbs as u64)
}

#[derive(Debug, Clone)]
struct UeWindow {
    allocs: VecDeque<(u64, u32)>,
    alloc_sum: u64,
    /// Fair-share spare bits per TTI, in millibits.
    spares: VecDeque<(u64, u64)>,
    spare_sum: u64,
    efficiency: Option<Ratio<u64>>,
    default_efficiency: Ratio<u64>,
    last_activity: u64,
}

impl UeWindow {
    fn efficiency(&self) -> Ratio<u64> {
        self.efficiency.unwrap_or(self.default_efficiency)
    }

    fn evict(&mut self, horizon: u64) {
        while self.allocs.front().is_some_and(|&(t, _)| t <= horizon) {
            let (_, v) = self.allocs.pop_front().expect("front");
            self.alloc_sum -= v as u64;
        }
        while self.spares.front().is_some_and(|&(t, _)| t <= horizon) {
            let (_, v) = self.spares.pop_front().expect("front");
            self.spare_sum -= v;
        }
    }
}

/// Sliding-window estimator fed one downlink TTI at a time.
#[derive(Debug, Clone)]
pub struct CapacityEstimator {
    cfg: EstimatorConfig,
    tti_us: u32,
    window_tti: u64,
    bandwidth: u16,
    tdd: Option<TddPattern>,
    ues: BTreeMap<Rnti, UeWindow>,
    last_tti: Option<u64>,
}

impl CapacityEstimator {
    pub fn new(cell: &CellCommonConfig, cfg: EstimatorConfig) -> Self {
        let tti_us = cell.subcarrier_spacing.tti_duration_us();
        let window_tti = ((cfg.window_ms as u64 * 1000) / tti_us as u64).max(1);
        Self {
            cfg,
            tti_us,
            window_tti,
            bandwidth: cell.carrier_bandwidth_prb,
            tdd: cell.tdd.clone(),
            ues: BTreeMap::new(),
            last_tti: None,
        }
    }

    pub fn window_tti(&self) -> u64 {
        self.window_tti
    }

    pub fn tti_us(&self) -> u32 {
        self.tti_us
    }

    /// PRBs available to downlink data in a slot.
    pub fn capacity_prb(&self, tti: u64) -> u32 {
        match self.tdd.as_ref().map_or(SlotKind::Downlink, |p| p.kind(tti)) {
            SlotKind::Downlink => self.bandwidth as u32,
            SlotKind::Uplink | SlotKind::Special => 0,
        }
    }

    /// Builds a record for `tti` with the slot's downlink capacity.
    pub fn make_record(&self, tti: u64, entries: Vec<TtiEntry>) -> TtiRecord {
        TtiRecord::new(tti, entries, self.capacity_prb(tti))
    }

    pub fn register_ue(&mut self, rnti: Rnti, default_efficiency: Ratio<u64>, tti: u64) -> Result<(), CapacityError> {
        if self.ues.contains_key(&rnti) {
            return Err(CapacityError::DuplicateRnti(rnti));
        }
        self.ues.insert(
            rnti,
            UeWindow {
                allocs: VecDeque::new(),
                alloc_sum: 0,
                spares: VecDeque::new(),
                spare_sum: 0,
                efficiency: None,
                default_efficiency,
                last_activity: tti,
            },
        );
        Ok(())
    }

    pub fn release_ue(&mut self, rnti: Rnti) -> Result<(), CapacityError> {
        self.ues.remove(&rnti).map(|_| ()).ok_or(CapacityError::UnknownRnti(rnti))
    }

    pub fn contains(&self, rnti: Rnti) -> bool {
        self.ues.contains_key(&rnti)
    }

    fn horizon(&self, now: u64) -> u64 {
        now.saturating_sub(self.window_tti)
    }

    fn is_active(&self, ue: &UeWindow, now: u64) -> bool {
        match self.cfg.active_mode {
            ActiveMode::Connected => true,
            ActiveMode::Active => ue.last_activity + self.window_tti > now,
        }
    }

    pub fn active_count(&self, now: u64) -> u32 {
        self.ues.values().filter(|u| self.is_active(u, now)).count() as u32
    }

    fn share_divisor(&self, rnti: Rnti, now: u64) -> Result<u32, CapacityError> {
        let ue = self.ues.get(&rnti).ok_or(CapacityError::UnknownRnti(rnti))?;
        let active = self.active_count(now);
        Ok(if self.is_active(ue, now) { active } else { active + 1 })
    }

    pub fn record_tti(&mut self, record: &TtiRecord) -> Result<(), CapacityError> {
        if let Some(last) = self.last_tti {
            if record.tti <= last {
                return Err(CapacityError::NonMonotonicTti { last, got: record.tti });
            }
        }
        self.last_tti = Some(record.tti);
        let horizon = self.horizon(record.tti);
        for e in &record.entries {
            let Some(ue) = self.ues.get_mut(&e.rnti) else { continue };
            ue.last_activity = record.tti;
            if e.effective_tbs > 0 {
                ue.allocs.push_back((record.tti, e.effective_tbs));
                ue.alloc_sum += e.effective_tbs as u64;
            }
            if e.is_new_data && e.effective_tbs > 0 && e.num_prb > 0 {
                ue.efficiency = Some(Ratio::new(e.effective_tbs as u64, e.num_prb as u64));
            }
        }
        if record.spare_prb > 0 {
            let rntis: Vec<Rnti> = self.ues.keys().copied().collect();
            for rnti in rntis {
                let divisor = self.share_divisor(rnti, record.tti)?.max(1);
                let fair = (record.spare_prb / divisor) as u64;
                let ue = self.ues.get_mut(&rnti).expect("listed");
                let eff = ue.efficiency();
                let millibits = fair * eff.numer() * 1000 / eff.denom();
                if millibits > 0 {
                    ue.spares.push_back((record.tti, millibits));
                    ue.spare_sum += millibits;
                }
            }
        }
        for ue in self.ues.values_mut() {
            ue.evict(horizon);
        }
        Ok(())
    }

    fn window_rate(&self, bits_x1000: u128) -> u64 {
        (bits_x1000 * 1000 / (self.window_tti as u128 * self.tti_us as u128)) as u64
    }

    /// Allocated bits in `(now - W, now]` divided by the window length.
    pub fn allocated_rate(&self, rnti: Rnti, now: u64) -> Result<u64, CapacityError> {
        let ue = self.ues.get(&rnti).ok_or(CapacityError::UnknownRnti(rnti))?;
        let horizon = self.horizon(now);
        let sum: u64 = if self.last_tti.is_some_and(|l| l <= now) && ue.allocs.front().is_none_or(|&(t, _)| t > horizon) {
            ue.alloc_sum
        } else {
            ue.allocs.iter().filter(|&&(t, _)| t > horizon && t <= now).map(|&(_, v)| v as u64).sum()
        };
        Ok(self.window_rate(sum as u128 * 1000))
    }

    pub fn fair_prb(&self, rnti: Rnti, record: &TtiRecord) -> Result<u32, CapacityError> {
        let divisor = self.share_divisor(rnti, record.tti)?.max(1);
        Ok(record.spare_prb / divisor)
    }

    pub fn efficiency(&self, rnti: Rnti) -> Result<Ratio<u64>, CapacityError> {
        self.ues.get(&rnti).map(UeWindow::efficiency).ok_or(CapacityError::UnknownRnti(rnti))
    }

    /// Instantaneous spare bitrate for one TTI's fair share.
    pub fn spare_rate(&self, rnti: Rnti, record: &TtiRecord) -> Result<u64, CapacityError> {
        let fair = self.fair_prb(rnti, record)? as u128;
        let eff = self.efficiency(rnti)?;
        Ok((fair * *eff.numer() as u128 * 1_000_000 / (*eff.denom() as u128 * self.tti_us as u128)) as u64)
    }

    /// Spare bitrate averaged over the window, so slots that cannot carry
    /// downlink data count as zero.
    pub fn windowed_spare_rate(&self, rnti: Rnti, now: u64) -> Result<u64, CapacityError> {
        let ue = self.ues.get(&rnti).ok_or(CapacityError::UnknownRnti(rnti))?;
        let horizon = self.horizon(now);
        let sum: u64 = ue.spares.iter().filter(|&&(t, _)| t > horizon && t <= now).map(|&(_, v)| v).sum();
        Ok(self.window_rate(sum as u128))
    }

    pub fn sample(&self, rnti: Rnti, now: u64) -> Result<TelemetrySample, CapacityError> {
        Ok(TelemetrySample {
            tti: now,
            b_alloc: saturate(self.allocated_rate(rnti, now)?),
            b_spare: saturate(self.windowed_spare_rate(rnti, now)?),
        })
    }
}

pub fn saturate(v: u64) -> u32 {
    v.min(u32::MAX as u64) as u32
}

/// Latest sample per UE, readable from any thread while the ingest thread publishes.
#[derive(Debug, Default)]
pub struct TelemetryBoard {
    inner: RwLock<Arc<BTreeMap<Rnti, TelemetrySample>>>,
}

impl TelemetryBoard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, samples: impl IntoIterator<Item = (Rnti, TelemetrySample)>) {
        let mut next = (**self.inner.read()).clone();
        next.extend(samples);
        *self.inner.write() = Arc::new(next);
    }

    pub fn remove(&self, rnti: Rnti) {
        let mut next = (**self.inner.read()).clone();
        next.remove(&rnti);
        *self.inner.write() = Arc::new(next);
    }

    pub fn latest(&self, rnti: Rnti) -> Option<TelemetrySample> {
        self.inner.read().get(&rnti).copied()
    }

    pub fn snapshot(&self) -> Arc<BTreeMap<Rnti, TelemetrySample>> {
        self.inner.read().clone()
    }
}

/// One row of the time-series export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvRow {
    pub tti: u64,
    pub rnti: String,
    pub b_alloc: u32,
    pub b_spare: u32,
    pub used_prb: u32,
    pub spare_prb: u32,
}

pub fn write_csv<W: Write>(w: W, rows: &[CsvRow]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
