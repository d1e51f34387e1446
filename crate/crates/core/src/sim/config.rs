//! Simulator configuration (TOML).
//!
//! ```toml
//! seed = 7
//! duration_tti = 20000
//! dci_loss_probability_dl = 0.0014
//!
//! [[ue]]
//! rnti = 0x4296
//! traffic = { kind = "saturating" }
//! channel = { kind = "steps", points = [[0, 20], [60000, 9]] }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SimError;
use crate::dci::Rnti;
use crate::rrc::{SubcarrierSpacing, TddPattern};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub duration_tti: u64,
    #[serde(default = "default_bandwidth")]
    pub carrier_bandwidth_prb: u16,
    #[serde(default = "default_scs")]
    pub subcarrier_spacing_khz: u32,
    #[serde(default = "default_tdd")]
    pub tdd_pattern: String,
    #[serde(default)]
    pub retransmission_probability: f64,
    /// Applies to both directions unless a per-direction value is given.
    #[serde(default)]
    pub dci_loss_probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dci_loss_probability_dl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dci_loss_probability_ul: Option<f64>,
    #[serde(default = "default_max_dci")]
    pub max_dci_per_slot: u8,
    /// Slots between a transmission and its retransmission.
    #[serde(default = "default_harq_rtt")]
    pub harq_rtt_tti: u64,
    #[serde(rename = "ue", default)]
    pub ues: Vec<UeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeSpec {
    pub rnti: u16,
    /// The MSG 4 grant goes out in the first downlink slot at or after this TTI.
    #[serde(default)]
    pub attach_tti: u64,
    #[serde(default)]
    pub traffic: TrafficModel,
    #[serde(default = "idle")]
    pub uplink_traffic: TrafficModel,
    #[serde(default)]
    pub channel: ChannelSpec,
    /// RRC setup document for this UE; the bundled one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msg4: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrafficModel {
    #[default]
    Saturating,
    Constant {
        bits_per_second: f64,
    },
    Idle,
    /// Data arrives only through `Simulator::offer`.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    Constant { mcs: u8 },
    /// `(tti, mcs)` staircase; each value holds until the next point.
    Steps { points: Vec<(u64, u8)> },
    /// CSV file of `tti,mcs` rows.
    Trace { path: PathBuf },
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self::Constant { mcs: 20 }
    }
}

fn default_bandwidth() -> u16 {
    51
}
fn default_scs() -> u32 {
    30
}
fn default_tdd() -> String {
    "DDDDDDDSUU".into()
}
fn default_max_dci() -> u8 {
    4
}
fn default_harq_rtt() -> u64 {
    8
}
fn idle() -> TrafficModel {
    TrafficModel::Idle
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidConfig(msg.into())
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for ue in &mut cfg.ues {
            if let Some(p) = &mut ue.msg4 {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            if let ChannelSpec::Trace { path } = &mut ue.channel {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let probs = [
            ("retransmission_probability", Some(self.retransmission_probability)),
            ("dci_loss_probability", Some(self.dci_loss_probability)),
            ("dci_loss_probability_dl", self.dci_loss_probability_dl),
            ("dci_loss_probability_ul", self.dci_loss_probability_ul),
        ];
        for (name, p) in probs {
            if let Some(p) = p {
                if !(0.0..=1.0).contains(&p) {
                    return Err(invalid(format!("{name} = {p} is not a probability")));
                }
            }
        }
        if self.carrier_bandwidth_prb == 0 || self.carrier_bandwidth_prb > 275 {
            return Err(invalid(format!("carrier_bandwidth_prb = {}", self.carrier_bandwidth_prb)));
        }
        self.subcarrier_spacing()?;
        let tdd = self.tdd()?;
        if tdd.slots().len() != 10 {
            return Err(invalid(format!("tdd_pattern `{}` must have 10 slots", self.tdd_pattern)));
        }
        if self.max_dci_per_slot == 0 {
            return Err(invalid("max_dci_per_slot must be positive"));
        }
        if self.harq_rtt_tti == 0 {
            return Err(invalid("harq_rtt_tti must be positive"));
        }
        let mut seen = std::collections::HashSet::new();
        for ue in &self.ues {
            if !Rnti(ue.rnti).is_ue_assignable() {
                return Err(invalid(format!("RNTI {:#06x} cannot be assigned to a UE", ue.rnti)));
            }
            if !seen.insert(ue.rnti) {
                return Err(invalid(format!("RNTI {:#06x} listed twice", ue.rnti)));
            }
            for t in [&ue.traffic, &ue.uplink_traffic] {
                if let TrafficModel::Constant { bits_per_second } = t {
                    if !bits_per_second.is_finite() || *bits_per_second < 0.0 {
                        return Err(invalid(format!("bits_per_second = {bits_per_second}")));
                    }
                }
            }
            if let ChannelSpec::Steps { points } = &ue.channel {
                if points.is_empty() || !points.windows(2).all(|w| w[0].0 < w[1].0) {
                    return Err(invalid("channel steps must be non-empty with increasing TTIs"));
                }
            }
        }
        Ok(())
    }

    pub fn subcarrier_spacing(&self) -> Result<SubcarrierSpacing, SimError> {
        SubcarrierSpacing::from_khz(self.subcarrier_spacing_khz)
            .ok_or_else(|| invalid(format!("subcarrier_spacing_khz = {}", self.subcarrier_spacing_khz)))
    }

    pub fn tdd(&self) -> Result<TddPattern, SimError> {
        self.tdd_pattern.parse().map_err(|_| invalid(format!("tdd_pattern `{}`", self.tdd_pattern)))
    }

    pub fn loss_dl(&self) -> f64 {
        self.dci_loss_probability_dl.unwrap_or(self.dci_loss_probability)
    }

    pub fn loss_ul(&self) -> f64 {
        self.dci_loss_probability_ul.unwrap_or(self.dci_loss_probability)
    }

    /// Identifies a run: the first 8 bytes of a hash over the whole config,
    /// seed included.
    pub fn run_id(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

impl ChannelSpec {
    /// Resolves the channel to a staircase, reading trace files.
    pub fn points(&self) -> Result<Vec<(u64, u8)>, SimError> {
        match self {
            Self::Constant { mcs } => Ok(vec![(0, *mcs)]),
            Self::Steps { points } => Ok(points.clone()),
            Self::Trace { path } => {
                let text = std::fs::read_to_string(path)?;
                parse_channel_csv(&text)
            }
        }
    }
}

/// `tti,mcs` rows; a non-numeric first row is taken as a header.
pub fn parse_channel_csv(text: &str) -> Result<Vec<(u64, u8)>, SimError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut points: Vec<(u64, u8)> = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| invalid(format!("channel trace: {e}")))?;
        let (Some(t), Some(m)) = (row.get(0), row.get(1)) else {
            return Err(invalid(format!("channel trace row {}: expected tti,mcs", i + 1)));
        };
        match (t.parse::<u64>(), m.parse::<u8>()) {
            (Ok(t), Ok(m)) => {
                if points.last().is_some_and(|&(p, _)| p >= t) {
                    return Err(invalid(format!("channel trace row {}: TTIs must increase", i + 1)));
                }
                points.push((t, m));
            }
            _ if i == 0 => {}
            _ => return Err(invalid(format!("channel trace row {}: `{t},{m}`", i + 1))),
        }
    }
    if points.is_empty() {
        return Err(invalid("channel trace is empty"));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 7
duration_tti = 100
dci_loss_probability = 0.01
dci_loss_probability_ul = 0.02

[[ue]]
rnti = 0x4296
channel = { kind = "steps", points = [[0, 20], [50, 9]] }

[[ue]]
rnti = 0x4297
traffic = { kind = "constant", bits_per_second = 1e6 }
uplink_traffic = { kind = "saturating" }
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = SimConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.carrier_bandwidth_prb, 51);
        assert_eq!(cfg.tdd_pattern, "DDDDDDDSUU");
        assert_eq!((cfg.loss_dl(), cfg.loss_ul()), (0.01, 0.02));
        assert_eq!(cfg.ues[0].traffic, TrafficModel::Saturating);
        assert_eq!(cfg.ues[0].uplink_traffic, TrafficModel::Idle);
        assert_eq!(cfg.ues[1].channel, ChannelSpec::Constant { mcs: 20 });
        assert_eq!(cfg.ues[0].channel.points().unwrap(), vec![(0, 20), (50, 9)]);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            SAMPLE.replace("0.01", "1.5"),
            SAMPLE.replace("seed = 7", "seed = 7\ntdd_pattern = \"DDDU\""),
            SAMPLE.replace("0x4297", "0x4296"),
            SAMPLE.replace("0x4297", "0xFFFF"),
            SAMPLE.replace("seed = 7", "seed = 7\nbogus = 1"),
        ] {
            assert!(matches!(SimConfig::from_toml(&bad), Err(SimError::InvalidConfig(_))), "{bad}");
        }
    }

    #[test]
    fn run_id_tracks_seed() {
        let a = SimConfig::from_toml(SAMPLE).unwrap();
        let b = SimConfig::from_toml(&SAMPLE.replace("seed = 7", "seed = 8")).unwrap();
        assert_eq!(a.run_id(), SimConfig::from_toml(SAMPLE).unwrap().run_id());
        assert_ne!(a.run_id(), b.run_id());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn channel_csv() {
        assert_eq!(parse_channel_csv("tti,mcs\n0,27\n# drop\n60000, 9\n").unwrap(), vec![(0, 27), (60000, 9)]);
        assert!(parse_channel_csv("0,27\n0,9\n").is_err());
        assert!(parse_channel_csv("tti,mcs\n").is_err());
        assert!(parse_channel_csv("0,27\nx,y\n").is_err());
    }
}
