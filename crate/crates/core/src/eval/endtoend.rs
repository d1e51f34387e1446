//! Closed-loop gameplay runs: the simulated cell carries a video flow whose
//! parameters are set by a policy. With the adaptive policy every TTI goes
//! simulator, observer, telemetry datagram, scheduler, and new frames then
//! go back into the simulator's queue.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::qoe::{mean_qoe_joint, QoeWeights, RawQoe};
use super::EvalError;
use crate::abr::{f_bw, AbrConfig, AbrScheduler, DecisionRow, ReinitMailbox, VideoParams};
use crate::capacity::EstimatorConfig;
use crate::dci::{Direction, Rnti};
use crate::pipeline::Observer;
use crate::sim::{ChannelSpec, SimConfig, Simulator, TrafficModel, UeSpec};
use crate::wire::{decode_sample, encode_sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Policy {
    Adaptive,
    Fixed(VideoParams),
}

impl Policy {
    pub const FIXED_1080P60: Policy = Policy::Fixed(VideoParams::new(1920, 1080, 60));
    pub const FIXED_720P60: Policy = Policy::Fixed(VideoParams::new(1280, 720, 60));
    pub const FIXED_360P60: Policy = Policy::Fixed(VideoParams::new(640, 360, 60));

    pub fn all() -> [Policy; 4] {
        [Policy::Adaptive, Self::FIXED_1080P60, Self::FIXED_720P60, Self::FIXED_360P60]
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Adaptive => f.write_str("adaptive"),
            Policy::Fixed(p) => write!(f, "fixed-{}p{}", p.height, p.frame_rate),
        }
    }
}

impl FromStr for Policy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EvalError::InvalidScenario(format!("unknown policy {s:?}"));
        if s == "adaptive" {
            return Ok(Policy::Adaptive);
        }
        let rest = s.strip_prefix("fixed-").ok_or_else(bad)?;
        let (h, r) = rest.split_once('p').ok_or_else(bad)?;
        let h: u32 = h.parse().map_err(|_| bad())?;
        let r: u32 = r.parse().map_err(|_| bad())?;
        if h < 2 || h % 2 != 0 || r == 0 {
            return Err(bad());
        }
        Ok(Policy::Fixed(VideoParams::new(((h * 16 / 9) & !1).max(2), h, r)))
    }
}

impl TryFrom<String> for Policy {
    type Error = EvalError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Policy> for String {
    fn from(p: Policy) -> Self {
        p.to_string()
    }
}

fn default_threshold() -> f64 {
    100.0
}
fn default_deadline() -> f64 {
    200.0
}
fn default_report_every() -> u64 {
    20
}
fn default_initial() -> VideoParams {
    VideoParams::new(1280, 720, 60)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub policy: Policy,
    pub video_rnti: u16,
    /// Queue delay above this counts as congested.
    #[serde(default = "default_threshold")]
    pub latency_threshold_ms: f64,
    /// Bits delivered later than this after their frame was produced count as lost.
    #[serde(default = "default_deadline")]
    pub loss_deadline_ms: f64,
    #[serde(default = "default_report_every")]
    pub report_every_tti: u64,
    /// Start of the capacity drop; recovery is measured from here.
    #[serde(default)]
    pub drop_tti: u64,
    /// Starting parameters for the adaptive policy.
    #[serde(default = "default_initial")]
    pub initial: VideoParams,
    #[serde(default)]
    pub abr: AbrConfig,
    #[serde(default)]
    pub weights: QoeWeights,
    pub sim: SimConfig,
}

/// Channel MCS before and after the drop in the bundled drop scenario.
pub const DROP_MCS: (u8, u8) = (9, 4);

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, EvalError> {
        let sc: Self = toml::from_str(text).map_err(|e| EvalError::InvalidScenario(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    /// Relative sim paths resolve against the scenario file's directory.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let mut sc = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for ue in &mut sc.sim.ues {
            if let ChannelSpec::Trace { path } = &mut ue.channel {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
            if let Some(p) = &mut ue.msg4 {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(sc)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        self.abr.validate()?;
        self.sim.validate()?;
        let ue = self
            .sim
            .ues
            .iter()
            .find(|u| u.rnti == self.video_rnti)
            .ok_or_else(|| EvalError::InvalidScenario(format!("video_rnti {:#06x} is not a simulated UE", self.video_rnti)))?;
        if ue.traffic != TrafficModel::External {
            return Err(EvalError::InvalidScenario("the video UE needs traffic kind \"external\"".into()));
        }
        if self.report_every_tti == 0 {
            return Err(EvalError::InvalidScenario("report_every_tti must be positive".into()));
        }
        if !(self.latency_threshold_ms > 0.0 && self.loss_deadline_ms > 0.0) {
            return Err(EvalError::InvalidScenario("thresholds must be positive".into()));
        }
        Ok(())
    }

    /// One video UE whose channel steps down from `DROP_MCS.0` to `DROP_MCS.1`
    /// at `drop_s`, roughly halving its capacity.
    pub fn capacity_drop(policy: Policy, seed: u64, duration_s: u64, drop_s: u64) -> Self {
        let tti_per_s = 2000;
        let drop_tti = drop_s * tti_per_s;
        let sim = SimConfig {
            seed,
            duration_tti: duration_s * tti_per_s,
            carrier_bandwidth_prb: 51,
            subcarrier_spacing_khz: 30,
            tdd_pattern: "DDDDDDDSUU".into(),
            retransmission_probability: 0.0,
            dci_loss_probability: 0.0,
            dci_loss_probability_dl: None,
            dci_loss_probability_ul: None,
            max_dci_per_slot: 4,
            harq_rtt_tti: 8,
            ues: vec![UeSpec {
                rnti: 0x4296,
                attach_tti: 0,
                traffic: TrafficModel::External,
                uplink_traffic: TrafficModel::Idle,
                channel: ChannelSpec::Steps { points: vec![(0, DROP_MCS.0), (drop_tti, DROP_MCS.1)] },
                msg4: None,
            }],
        };
        Self {
            policy,
            video_rnti: 0x4296,
            latency_threshold_ms: default_threshold(),
            loss_deadline_ms: default_deadline(),
            report_every_tti: default_report_every(),
            drop_tti,
            initial: default_initial(),
            abr: AbrConfig::default(),
            weights: QoeWeights::default(),
            sim,
        }
    }

    pub fn with_policy(&self, policy: Policy) -> Self {
        Self { policy, ..self.clone() }
    }
}

/// One report interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    pub tti: u64,
    pub t_ms: f64,
    pub b_alloc: u32,
    pub b_spare: u32,
    pub video_bps: u64,
    pub capacity_bps: u64,
    pub offered_bits: u64,
    pub served_bits: u64,
    pub backlog_bits: u64,
    pub queue_delay_ms: f64,
    /// Share of bits delivered in this interval that missed the deadline.
    pub late_fraction: f64,
    pub width: u32,
    pub height: u32,
    pub frame_rate: u32,
}

impl Tick {
    pub fn raw_qoe(&self) -> RawQoe {
        RawQoe { resolution: f64::from(self.height), frame_rate: f64::from(self.frame_rate), latency_ms: self.queue_delay_ms, loss: self.late_fraction }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEndReport {
    pub policy: Policy,
    pub run_id: String,
    pub latency_threshold_ms: f64,
    pub drop_tti: u64,
    pub peak_delay_ms: f64,
    pub peak_delay_after_drop_ms: f64,
    /// Time from the drop until the queue delay last fell below the
    /// threshold; `None` when it is still above at the end.
    pub recovery_ms: Option<f64>,
    pub final_delay_ms: f64,
    pub late_fraction: f64,
    pub reinit_events: u64,
    pub max_reinit_latency_us: u64,
    pub reinit_within_frame: bool,
    pub ticks: Vec<Tick>,
    #[serde(skip)]
    pub decisions: Vec<DecisionRow>,
}

impl EndToEndReport {
    pub fn raw_qoe(&self) -> Vec<RawQoe> {
        self.ticks.iter().map(Tick::raw_qoe).collect()
    }

    pub fn recovered(&self) -> bool {
        self.recovery_ms.is_some()
    }
}

struct Fifo {
    chunks: VecDeque<(u64, u64)>,
}

impl Fifo {
    /// Removes up to `bits` from the head; returns (delivered, late).
    fn drain(&mut self, mut bits: u64, now_us: u64, deadline_us: u64) -> (u64, u64) {
        let (mut delivered, mut late) = (0, 0);
        while bits > 0 {
            let Some(front) = self.chunks.front_mut() else { break };
            let take = front.1.min(bits);
            if now_us.saturating_sub(front.0) > deadline_us {
                late += take;
            }
            delivered += take;
            bits -= take;
            front.1 -= take;
            if front.1 == 0 {
                self.chunks.pop_front();
            }
        }
        (delivered, late)
    }
}

pub fn run_endtoend(sc: &Scenario) -> Result<EndToEndReport, EvalError> {
    sc.validate()?;
    let rnti = Rnti(sc.video_rnti);
    let mut sim = Simulator::new(sc.sim.clone())?;
    let tti_us = u64::from(sim.cell().subcarrier_spacing.tti_duration_us());
    let mut obs = Observer::new(sim.cell().clone(), sim.msg4_docs(), EstimatorConfig::default());
    let mailbox = ReinitMailbox::default();
    let (mut encoder, mut sched) = match sc.policy {
        Policy::Adaptive => (sc.initial, Some(AbrScheduler::new(sc.abr.clone(), sc.initial).with_log())),
        Policy::Fixed(p) => (p, None),
    };
    let deadline_us = (sc.loss_deadline_ms * 1000.0) as u64;
    let mut fifo = Fifo { chunks: VecDeque::new() };
    let mut next_frame_us = 0u64;
    let (mut offered, mut served, mut delivered, mut late) = (0u64, 0u64, 0u64, 0u64);
    let (mut total_delivered, mut total_late) = (0u64, 0u64);
    let mut reinit_events = 0;
    let mut max_reinit_latency_us = 0;
    let mut reinit_within_frame = true;
    let mut last_sample = None;
    let mut warm_from = None;
    let mut ticks = Vec::new();

    for tti in 0..sc.sim.duration_tti {
        let now_us = tti * tti_us;
        while next_frame_us <= now_us {
            if let Some(ev) = mailbox.take() {
                let latency = next_frame_us - ev.raised_at_us;
                reinit_within_frame &= latency <= encoder.frame_us();
                max_reinit_latency_us = max_reinit_latency_us.max(latency);
                reinit_events += 1;
                encoder = ev.params;
            }
            let bits = f_bw(encoder, &sc.abr) / u64::from(encoder.frame_rate.max(1));
            sim.offer(rnti, bits);
            fifo.chunks.push_back((next_frame_us, bits));
            offered += bits;
            next_frame_us += encoder.frame_us();
        }

        let out = sim.step()?;
        let bits: u64 = out.truth.iter().filter(|e| e.rnti == rnti && e.direction == Direction::Dl).map(|e| e.new_data_bits() as u64).sum();
        served += bits;
        let (d, l) = fifo.drain(bits, now_us, deadline_us);
        delivered += d;
        late += l;

        obs.process_tti(tti, &out.observed)?;
        if obs.registry().contains(rnti) {
            // through the datagram codec, as a remote scheduler would see it
            let sample = decode_sample(&encode_sample(&obs.sample(rnti)?))?;
            // rates are averages over the estimator window; wait until one has filled
            let warm = *warm_from.get_or_insert(tti + obs.estimator().window_tti());
            if let (Some(s), true) = (sched.as_mut(), tti >= warm) {
                s.on_sample(&sample, now_us, &mailbox);
            }
            last_sample = Some(sample);
        }

        if (tti + 1) % sc.report_every_tti == 0 {
            let capacity = sim.full_carrier_rate(rnti)?;
            let backlog = sim.backlog(rnti);
            ticks.push(Tick {
                tti,
                t_ms: (now_us + tti_us) as f64 / 1000.0,
                b_alloc: last_sample.map_or(0, |s| s.b_alloc),
                b_spare: last_sample.map_or(0, |s| s.b_spare),
                video_bps: f_bw(encoder, &sc.abr),
                capacity_bps: capacity,
                offered_bits: offered,
                served_bits: served,
                backlog_bits: backlog,
                queue_delay_ms: if capacity > 0 { backlog as f64 * 1000.0 / capacity as f64 } else { f64::INFINITY },
                late_fraction: if delivered > 0 { late as f64 / delivered as f64 } else { 0.0 },
                width: encoder.width,
                height: encoder.height,
                frame_rate: encoder.frame_rate,
            });
            total_delivered += delivered;
            total_late += late;
            (offered, served, delivered, late) = (0, 0, 0, 0);
        }
    }

    let after_drop = || ticks.iter().filter(|t| t.tti >= sc.drop_tti);
    let peak = |it: &mut dyn Iterator<Item = &Tick>| it.map(|t| t.queue_delay_ms).fold(0.0, f64::max);
    let drop_ms = (sc.drop_tti * tti_us) as f64 / 1000.0;
    let above: Vec<&Tick> = after_drop().filter(|t| t.queue_delay_ms >= sc.latency_threshold_ms).collect();
    let recovery_ms = match above.last() {
        None => Some(0.0),
        Some(t) if Some(t.tti) == after_drop().next_back().map(|l| l.tti) => None,
        Some(t) => Some(t.t_ms - drop_ms),
    };
    Ok(EndToEndReport {
        policy: sc.policy,
        run_id: format!("{:016x}", sim.run_id()),
        latency_threshold_ms: sc.latency_threshold_ms,
        drop_tti: sc.drop_tti,
        peak_delay_ms: peak(&mut ticks.iter()),
        peak_delay_after_drop_ms: peak(&mut after_drop()),
        recovery_ms,
        final_delay_ms: ticks.last().map_or(0.0, |t| t.queue_delay_ms),
        late_fraction: if total_delivered > 0 { total_late as f64 / total_delivered as f64 } else { 0.0 },
        reinit_events,
        max_reinit_latency_us,
        reinit_within_frame,
        decisions: sched.map(|s| s.log().to_vec()).unwrap_or_default(),
        ticks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reports: Vec<EndToEndReport>,
    /// Mean QoE per policy, normalised over all policies' ticks together.
    pub qoe: Vec<f64>,
}

impl Comparison {
    pub fn qoe_of(&self, policy: Policy) -> Option<f64> {
        self.reports.iter().position(|r| r.policy == policy).map(|i| self.qoe[i])
    }
}

pub fn compare_policies(base: &Scenario, policies: &[Policy]) -> Result<Comparison, EvalError> {
    let reports = policies.iter().map(|&p| run_endtoend(&base.with_policy(p))).collect::<Result<Vec<_>, _>>()?;
    let raw: Vec<Vec<RawQoe>> = reports.iter().map(EndToEndReport::raw_qoe).collect();
    let refs: Vec<&[RawQoe]> = raw.iter().map(Vec::as_slice).collect();
    let qoe = mean_qoe_joint(&refs, &base.weights)?;
    Ok(Comparison { reports, qoe })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names() {
        for p in Policy::all() {
            assert_eq!(p.to_string().parse::<Policy>().unwrap(), p);
        }
        assert_eq!(Policy::FIXED_720P60.to_string(), "fixed-720p60");
        assert!("fixed-721p60".parse::<Policy>().is_err());
        assert!("greedy".parse::<Policy>().is_err());
    }

    #[test]
    fn drop_halves_capacity() {
        let sc = Scenario::capacity_drop(Policy::Adaptive, 1, 2, 1);
        let mut sim = Simulator::new(sc.sim.clone()).unwrap();
        let before = sim.full_carrier_rate(Rnti(0x4296)).unwrap();
        while sim.tti() < sc.drop_tti {
            sim.step().unwrap();
        }
        let after = sim.full_carrier_rate(Rnti(0x4296)).unwrap();
        let ratio = after as f64 / before as f64;
        assert!((0.45..=0.55).contains(&ratio), "{before} -> {after}");
    }

    #[test]
    fn scenario_file() {
        let text = "policy = \"fixed-720p60\"\nvideo_rnti = 0x4296\n[sim]\nseed = 1\nduration_tti = 100\n\
                    [[sim.ue]]\nrnti = 0x4296\ntraffic = { kind = \"external\" }\n";
        let sc = Scenario::from_toml(text).unwrap();
        assert_eq!(sc.policy, Policy::FIXED_720P60);
        assert!(Scenario::from_toml(&text.replace("external", "saturating")).is_err());
        assert!(Scenario::from_toml(&text.replace("video_rnti = 0x4296", "video_rnti = 1")).is_err());
    }

    #[test]
    fn steady_high_capacity_reaches_caps() {
        let mut sc = Scenario::capacity_drop(Policy::Adaptive, 2, 4, 4);
        sc.sim.ues[0].channel = ChannelSpec::Constant { mcs: 27 };
        let r = run_endtoend(&sc).unwrap();
        let last = r.ticks.last().unwrap();
        assert_eq!((last.width, last.height, last.frame_rate), (1920, 1080, 120));
        assert!(r.reinit_within_frame);
        assert!(r.peak_delay_ms < sc.latency_threshold_ms, "{}", r.peak_delay_ms);
    }

    #[test]
    fn reproducible() {
        let sc = Scenario::capacity_drop(Policy::Adaptive, 9, 2, 1);
        assert_eq!(run_endtoend(&sc).unwrap(), run_endtoend(&sc).unwrap());
    }
}
