//! Per-UE state and HARQ new-data tracking.

use std::collections::HashMap;
use std::sync::Arc;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dci::{recover_rnti, Dci, DciEnvelope, DciError, Direction, Rnti};
use crate::rrc::{parse_msg4, ConfigError, UeDedicatedConfig};

/// HARQ processes tracked per direction.
pub const HARQ_SLOTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UeError {
    #[error(transparent)]
    Dci(#[from] DciError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("RNTI {0} is already registered")]
    DuplicateRnti(Rnti),
    #[error("RNTI {0} is not registered")]
    UnknownRnti(Rnti),
    #[error("HARQ id {harq_id} outside {limit} configured processes")]
    HarqIdOutOfRange { harq_id: u8, limit: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DciKind {
    NewData,
    Retransmission,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DciClassification {
    pub kind: DciKind,
    pub effective_tbs: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeState {
    pub crnti: Rnti,
    pub config: Arc<UeDedicatedConfig>,
    pub harq_ndi_dl: [Option<u8>; HARQ_SLOTS],
    pub harq_ndi_ul: [Option<u8>; HARQ_SLOTS],
    /// Bits per PRB per TTI of the latest new-data downlink grant.
    pub last_grant_efficiency: Option<Ratio<u64>>,
    pub registered_tti: u64,
    pub last_activity_tti: u64,
}

impl UeState {
    pub fn new(crnti: Rnti, config: Arc<UeDedicatedConfig>, tti: u64) -> Self {
        Self {
            crnti,
            config,
            harq_ndi_dl: [None; HARQ_SLOTS],
            harq_ndi_ul: [None; HARQ_SLOTS],
            last_grant_efficiency: None,
            registered_tti: tti,
            last_activity_tti: tti,
        }
    }

    /// New data when the stored NDI is unknown or differs; the stored NDI is
    /// replaced either way.
    pub fn classify(&mut self, dci: &Dci, grant_tbs: u32, num_prb: u16, tti: u64) -> Result<DciClassification, UeError> {
        let limit = self.config.num_harq_processes.min(HARQ_SLOTS as u8);
        if dci.harq_id >= limit {
            return Err(UeError::HarqIdOutOfRange { harq_id: dci.harq_id, limit });
        }
        let direction = dci.direction();
        let slot = match direction {
            Direction::Dl => &mut self.harq_ndi_dl[dci.harq_id as usize],
            Direction::Ul => &mut self.harq_ndi_ul[dci.harq_id as usize],
        };
        let kind = if *slot == Some(dci.ndi) { DciKind::Retransmission } else { DciKind::NewData };
        *slot = Some(dci.ndi);
        self.last_activity_tti = tti;
        let effective_tbs = match kind {
            DciKind::NewData => {
                if direction == Direction::Dl && grant_tbs > 0 && num_prb > 0 {
                    self.last_grant_efficiency = Some(Ratio::new(grant_tbs as u64, num_prb as u64));
                }
                grant_tbs
            }
            DciKind::Retransmission => 0,
        };
        Ok(DciClassification { kind, effective_tbs })
    }

    pub fn to_json(&self) -> Value {
        let ndi = |a: &[Option<u8>; HARQ_SLOTS]| a.iter().map(|n| json!(n)).collect::<Vec<_>>();
        json!({
            "crnti": format!("{}", self.crnti),
            "harq_ndi_dl": ndi(&self.harq_ndi_dl),
            "harq_ndi_ul": ndi(&self.harq_ndi_ul),
            "last_grant_efficiency": self.last_grant_efficiency.map(|e| *e.numer() as f64 / *e.denom() as f64),
            "registered_tti": self.registered_tti,
            "last_activity_tti": self.last_activity_tti,
            "max_mimo_layers": self.config.max_mimo_layers,
            "num_harq_processes": self.config.num_harq_processes,
            "mcs_table": self.config.mcs_table.to_string(),
        })
    }
}

/// Live UEs keyed by C-RNTI, plus released ones.
#[derive(Debug, Default, Clone)]
pub struct UeRegistry {
    live: HashMap<Rnti, UeState>,
    archive: Vec<UeState>,
}

impl UeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Promotes the TC-RNTI found in the MSG 4 scheduling DCI to a C-RNTI.
    pub fn register_from_msg4(&mut self, envelope: &DciEnvelope, msg4_doc: &str, tti: u64) -> Result<&UeState, UeError> {
        let rnti = recover_rnti(envelope)?;
        let config = parse_msg4(msg4_doc)?;
        self.register(rnti, Arc::new(config), tti)
    }

    pub fn register(&mut self, rnti: Rnti, config: Arc<UeDedicatedConfig>, tti: u64) -> Result<&UeState, UeError> {
        match self.live.entry(rnti) {
            std::collections::hash_map::Entry::Occupied(_) => Err(UeError::DuplicateRnti(rnti)),
            std::collections::hash_map::Entry::Vacant(v) => Ok(v.insert(UeState::new(rnti, config, tti))),
        }
    }

    pub fn release(&mut self, rnti: Rnti) -> Result<(), UeError> {
        let state = self.live.remove(&rnti).ok_or(UeError::UnknownRnti(rnti))?;
        self.archive.push(state);
        Ok(())
    }

    pub fn classify(&mut self, rnti: Rnti, dci: &Dci, grant_tbs: u32, num_prb: u16, tti: u64) -> Result<DciClassification, UeError> {
        self.live.get_mut(&rnti).ok_or(UeError::UnknownRnti(rnti))?.classify(dci, grant_tbs, num_prb, tti)
    }

    pub fn get(&self, rnti: Rnti) -> Option<&UeState> {
        self.live.get(&rnti)
    }

    pub fn contains(&self, rnti: Rnti) -> bool {
        self.live.contains_key(&rnti)
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn rntis(&self) -> impl Iterator<Item = Rnti> + '_ {
        self.live.keys().copied()
    }

    pub fn archived(&self) -> &[UeState] {
        &self.archive
    }

    /// Immutable copy of the live UEs, sorted by RNTI.
    pub fn snapshot(&self) -> Vec<UeState> {
        let mut v: Vec<_> = self.live.values().cloned().collect();
        v.sort_by_key(|s| s.crnti);
        v
    }

    pub fn dump_json(&self) -> Value {
        json!({
            "live": self.snapshot().iter().map(UeState::to_json).collect::<Vec<_>>(),
            "archived": self.archive.len(),
        })
    }
}
