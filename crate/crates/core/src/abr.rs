//! Video bitrate adaptation driven by RAN telemetry.
//!
//! The bitrate model is `k · w · h · r` bits per second. `f_fps` and `f_res`
//! invert it for a fixed resolution or frame rate. [`adapt`] turns one
//! telemetry sample into new video parameters and [`AbrScheduler`] wraps it
//! with a per-frame change limit and a reinit mailbox.

use std::io::Write;
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::TelemetrySample;

const PPM: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum AbrError {
    #[error("invalid ABR config: {0}")]
    InvalidConfig(String),
    #[error("ABR config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VideoParams {
    pub width: u32,
    pub height: u32,
    pub frame_rate: u32,
}

impl VideoParams {
    pub const fn new(width: u32, height: u32, frame_rate: u32) -> Self {
        Self { width, height, frame_rate }
    }

    /// Frame period in microseconds.
    pub fn frame_us(&self) -> u64 {
        1_000_000 / u64::from(self.frame_rate.max(1))
    }
}

impl std::fmt::Display for VideoParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}@{}", self.width, self.height, self.frame_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbrConfig {
    pub alpha: f64,
    pub spare_fraction: f64,
    pub fps_ladder: Vec<u32>,
    pub w_cap: u32,
    pub h_cap: u32,
    pub r_cap: u32,
    pub w_bad: u32,
    pub h_bad: u32,
    /// Bits per pixel.
    pub k: f64,
    pub resolution_step: f64,
}

impl Default for AbrConfig {
    fn default() -> Self {
        Self {
            alpha: 1.75,
            spare_fraction: 0.75,
            fps_ladder: vec![90, 60, 45, 30, 15],
            w_cap: 1920,
            h_cap: 1080,
            r_cap: 120,
            w_bad: 640,
            h_bad: 360,
            k: 0.16,
            resolution_step: 0.10,
        }
    }
}

impl AbrConfig {
    pub fn from_toml(text: &str) -> Result<Self, AbrError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, AbrError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), AbrError> {
        let bad = |m: &str| Err(AbrError::InvalidConfig(m.into()));
        if self.alpha.is_nan() || self.alpha <= 1.0 {
            return bad("alpha must exceed 1");
        }
        if !(self.spare_fraction > 0.0 && self.spare_fraction <= 1.0) {
            return bad("spare_fraction must be in (0, 1]");
        }
        if self.fps_ladder.is_empty() || self.fps_ladder.windows(2).any(|w| w[0] <= w[1]) || self.fps_ladder.contains(&0) {
            return bad("fps_ladder must be non-empty, positive and strictly decreasing");
        }
        if self.w_cap < 2 || self.h_cap < 2 || self.r_cap == 0 {
            return bad("caps must be positive");
        }
        if self.w_bad > self.w_cap || self.h_bad > self.h_cap {
            return bad("bad-resolution floor exceeds the caps");
        }
        if self.k.is_nan() || self.k <= 0.0 || self.k_ppm() == 0 {
            return bad("k must be positive");
        }
        if !(self.resolution_step > 0.0 && self.resolution_step < 1.0) {
            return bad("resolution_step must be in (0, 1)");
        }
        Ok(())
    }

    fn k_ppm(&self) -> u128 {
        (self.k * 1e6).round() as u128
    }

    pub fn ladder_floor(&self) -> u32 {
        *self.fps_ladder.last().expect("validated ladder")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottleneckVerdict {
    Ran,
    CoreOrWan,
    None,
}

impl BottleneckVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ran => "ran",
            Self::CoreOrWan => "core_or_wan",
            Self::None => "none",
        }
    }
}

pub fn f_bw(p: VideoParams, cfg: &AbrConfig) -> u64 {
    let pixels = u128::from(p.width) * u128::from(p.height) * u128::from(p.frame_rate);
    (pixels * cfg.k_ppm() / PPM) as u64
}

pub fn f_fps(b: u64, width: u32, height: u32, cfg: &AbrConfig) -> f64 {
    let px = u128::from(width) * u128::from(height) * cfg.k_ppm();
    if px == 0 {
        return f64::from(cfg.r_cap);
    }
    let r = (u128::from(b) * PPM) as f64 / px as f64;
    r.clamp(1.0, f64::from(cfg.r_cap))
}

/// Largest 16:9 even resolution whose bitrate at `r` stays within `b`.
pub fn f_res(b: u64, r: u32, cfg: &AbrConfig) -> (u32, u32) {
    // 16·h²·k·r ≤ 9·b
    let lhs = |h: u128| 16 * h * h * cfg.k_ppm() * u128::from(r.max(1));
    let rhs = 9 * u128::from(b) * PPM;
    let mut h = (((rhs as f64) / (lhs(1) as f64)).sqrt() as u128) & !1;
    while h > 0 && lhs(h) > rhs {
        h -= 2;
    }
    while lhs(h + 2) <= rhs {
        h += 2;
    }
    if h < 2 {
        return (2, 2);
    }
    let h = h.min(u128::from(u32::MAX - 1)) as u32;
    (even_width(h), h)
}

fn even_width(h: u32) -> u32 {
    ((u64::from(h) * 16 / 9) as u32 & !1).max(2)
}

pub fn classify_bottleneck(b_video: u64, b_alloc: u64, b_spare: u64, cfg: &AbrConfig) -> BottleneckVerdict {
    if (b_video as f64) > cfg.alpha * b_alloc as f64 {
        if b_spare > 0 {
            BottleneckVerdict::CoreOrWan
        } else {
            BottleneckVerdict::Ran
        }
    } else {
        BottleneckVerdict::None
    }
}

pub fn target_alloc(b_video: u64, b_alloc: u64, b_spare: u64, cfg: &AbrConfig) -> u64 {
    match classify_bottleneck(b_video, b_alloc, b_spare, cfg) {
        BottleneckVerdict::CoreOrWan => b_alloc,
        _ => b_alloc.saturating_add((cfg.spare_fraction * b_spare as f64).floor() as u64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub verdict: BottleneckVerdict,
    pub b_video: u64,
    pub target: u64,
    pub params: VideoParams,
}

impl Decision {
    pub fn changed(&self, from: VideoParams) -> bool {
        self.params != from
    }
}

/// One decision step. Pure in its inputs.
pub fn adapt(current: VideoParams, sample: &TelemetrySample, cfg: &AbrConfig) -> Decision {
    let (b_alloc, b_spare) = (u64::from(sample.b_alloc), u64::from(sample.b_spare));
    let b_video = f_bw(current, cfg);
    let verdict = classify_bottleneck(b_video, b_alloc, b_spare, cfg);
    let target = target_alloc(b_video, b_alloc, b_spare, cfg);
    let params = if target > b_video { grow(current, target, cfg) } else { shrink(current, target, b_video, cfg) };
    Decision { verdict, b_video, target, params }
}

fn grow(cur: VideoParams, target: u64, cfg: &AbrConfig) -> VideoParams {
    if cur.width < cfg.w_cap && cur.height < cfg.h_cap {
        let (_, h_res) = f_res(target, cur.frame_rate, cfg);
        let mut h_step = ((f64::from(cur.height) * (1.0 + cfg.resolution_step)) as u32) & !1;
        if h_step <= cur.height {
            h_step = cur.height + 2;
        }
        let h = h_res.min(cfg.h_cap & !1).min(h_step);
        if h <= cur.height {
            return cur;
        }
        VideoParams { width: even_width(h).min(cfg.w_cap), height: h, frame_rate: cur.frame_rate }
    } else if cur.frame_rate < cfg.r_cap {
        let next = cfg.fps_ladder.iter().rev().copied().find(|&f| f > cur.frame_rate).unwrap_or(cfg.r_cap).min(cfg.r_cap);
        let r = (f_fps(target, cur.width, cur.height, cfg).floor() as u32).min(next);
        if r <= cur.frame_rate {
            return cur;
        }
        VideoParams { frame_rate: r, ..cur }
    } else {
        cur
    }
}

fn shrink(cur: VideoParams, target: u64, b_video: u64, cfg: &AbrConfig) -> VideoParams {
    if b_video <= target {
        return cur;
    }
    let ladder = &cfg.fps_ladder;
    // index of the last ladder entry at or above r; stepping reads the one after it
    let mut pos = ladder.iter().take_while(|&&f| f >= cur.frame_rate).count() as isize - 1;
    let mut r = cur.frame_rate;
    let (mut w, mut h) = f_res(target, r, cfg);
    while w < cfg.w_bad && h < cfg.h_bad && ((pos + 1) as usize) < ladder.len() {
        pos += 1;
        r = ladder[pos as usize];
        (w, h) = f_res(target, r, cfg);
    }
    VideoParams { width: w.min(cfg.w_cap), height: h.min(cfg.h_cap), frame_rate: r.min(cfg.r_cap) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReinitEvent {
    pub params: VideoParams,
    pub raised_at_us: u64,
}

/// Single-slot handoff from the scheduler to the frame loop. A newer event
/// replaces one that has not been consumed yet.
#[derive(Debug, Default)]
pub struct ReinitMailbox {
    slot: Mutex<Option<ReinitEvent>>,
}

impl ReinitMailbox {
    pub fn raise(&self, ev: ReinitEvent) {
        *self.slot.lock() = Some(ev);
    }

    /// Called at a frame boundary.
    pub fn take(&self) -> Option<ReinitEvent> {
        self.slot.lock().take()
    }

    pub fn is_raised(&self) -> bool {
        self.slot.lock().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRow {
    pub tti: u64,
    pub b_alloc: u32,
    pub b_spare: u32,
    pub verdict: &'static str,
    pub w: u32,
    pub h: u32,
    pub r: u32,
}

pub fn write_decision_log<W: Write>(w: W, rows: &[DecisionRow]) -> Result<(), AbrError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Runs [`adapt`] on every sample and allows at most one change per frame period.
#[derive(Debug)]
pub struct AbrScheduler {
    cfg: AbrConfig,
    current: VideoParams,
    last_change_us: Option<u64>,
    log: Option<Vec<DecisionRow>>,
}

impl AbrScheduler {
    pub fn new(cfg: AbrConfig, initial: VideoParams) -> Self {
        Self { cfg, current: initial, last_change_us: None, log: None }
    }

    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn current(&self) -> VideoParams {
        self.current
    }

    pub fn config(&self) -> &AbrConfig {
        &self.cfg
    }

    pub fn log(&self) -> &[DecisionRow] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn on_sample(&mut self, sample: &TelemetrySample, now_us: u64, mailbox: &ReinitMailbox) -> Option<ReinitEvent> {
        let d = adapt(self.current, sample, &self.cfg);
        let held = self.last_change_us.is_some_and(|t| now_us.saturating_sub(t) < self.current.frame_us());
        let event = (d.changed(self.current) && !held).then(|| {
            self.current = d.params;
            self.last_change_us = Some(now_us);
            let ev = ReinitEvent { params: d.params, raised_at_us: now_us };
            mailbox.raise(ev);
            ev
        });
        if let Some(log) = &mut self.log {
            let p = self.current;
            log.push(DecisionRow {
                tti: sample.tti,
                b_alloc: sample.b_alloc,
                b_spare: sample.b_spare,
                verdict: d.verdict.as_str(),
                w: p.width,
                h: p.height,
                r: p.frame_rate,
            });
        }
        event
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const P1080_60: VideoParams = VideoParams::new(1920, 1080, 60);

    fn cfg() -> AbrConfig {
        AbrConfig::default()
    }

    fn sample(b_alloc: u32, b_spare: u32) -> TelemetrySample {
        TelemetrySample { tti: 0, b_alloc, b_spare }
    }

    // Brute-force resolution search over every even height.
    fn f_res_oracle(b: u64, r: u32, k: f64) -> (u32, u32) {
        let p = b as f64 / (k * r as f64);
        let mut best = 2;
        let mut h = 2u32;
        while (16.0 * h as f64 / 9.0) * h as f64 <= p * (1.0 + 1e-12) {
            best = h;
            h += 2;
        }
        (((16 * best / 9) & !1).max(2), best)
    }

    #[test]
    fn bitrate_model() {
        assert_eq!(f_bw(P1080_60, &cfg()), 19_906_560);
        assert_eq!(f_bw(VideoParams::new(0, 1080, 60), &cfg()), 0);
        assert_eq!(f_bw(VideoParams::new(1920, 1080, 120), &cfg()), 2 * 19_906_560);
        assert_eq!(f_fps(19_906_560, 1920, 1080, &cfg()), 60.0);
        assert_eq!(f_fps(1, 1920, 1080, &cfg()), 1.0);
        for r in [90, 60, 45, 30, 15] {
            for (w, h) in [(1920, 1080), (1280, 720), (700, 394)] {
                assert_eq!(f_fps(f_bw(VideoParams::new(w, h, r), &cfg()), w, h, &cfg()), f64::from(r));
            }
        }
    }

    #[test]
    fn resolution_inverse() {
        assert_eq!(f_res(2_000_000, 45, &cfg()), (700, 394));
        assert_eq!(f_res(19_906_560, 60, &cfg()), (1920, 1080));
        assert_eq!(f_res(2_000_000, 60, &cfg()), (608, 342));
        assert_eq!(f_res(0, 60, &cfg()), (2, 2));
        for (b, r) in [(2_000_000, 45), (123_456_789, 30), (5_000, 15), (19_906_559, 60)] {
            assert_eq!(f_res(b, r, &cfg()), f_res_oracle(b, r, 0.16), "{b} {r}");
        }
    }

    #[test]
    fn eq3_cases() {
        let c = cfg();
        assert_eq!(classify_bottleneck(10_000_000, 4_000_000, 2_000_000, &c), BottleneckVerdict::CoreOrWan);
        assert_eq!(classify_bottleneck(4_000_000, 4_000_000, 2_000_000, &c), BottleneckVerdict::None);
        assert_eq!(classify_bottleneck(10_000_000, 4_000_000, 0, &c), BottleneckVerdict::Ran);
        assert_eq!(target_alloc(10_000_000, 4_000_000, 2_000_000, &c), 4_000_000);
        assert_eq!(target_alloc(4_000_000, 4_000_000, 2_000_000, &c), 5_500_000);
        assert_eq!(target_alloc(99_000_000, 4_000_000, 0, &c), 4_000_000);
    }

    #[test]
    fn walkthroughs() {
        let c = AbrConfig { fps_ladder: vec![90, 60, 45, 30, 15], ..cfg() };
        let up = adapt(P1080_60, &sample(19_906_560 * 3 / 2, 0), &c);
        assert_eq!(up.params, VideoParams::new(1920, 1080, 90));
        let down = adapt(P1080_60, &sample(2_000_000, 0), &c);
        assert_eq!(down.params, VideoParams::new(700, 394, 45));
        let same = adapt(P1080_60, &sample(19_906_560, 0), &c);
        assert_eq!(same.params, P1080_60);
        let at_90 = adapt(VideoParams::new(1920, 1080, 90), &sample(u32::MAX, 0), &c);
        assert_eq!(at_90.params.frame_rate, 120);
        let capped = adapt(VideoParams::new(1920, 1080, 120), &sample(u32::MAX, u32::MAX), &c);
        assert_eq!(capped.params, VideoParams::new(1920, 1080, 120));
    }

    #[test]
    fn growth_moves_in_small_steps() {
        let c = cfg();
        let mut p = VideoParams::new(640, 360, 60);
        let mut steps = 0;
        while p.height < 1080 {
            let next = adapt(p, &sample(100_000_000, 0), &c).params;
            assert_eq!(next.frame_rate, 60);
            assert!(next.height as f64 <= p.height as f64 * 1.1 + 2.0);
            assert!(next.height > p.height);
            p = next;
            steps += 1;
        }
        assert_eq!(p, P1080_60);
        assert!(steps >= 10, "{steps}");
    }

    #[test]
    fn scheduler_rate_limit_and_mailbox() {
        let mb = ReinitMailbox::default();
        let mut s = AbrScheduler::new(cfg(), P1080_60).with_log();
        assert!(s.on_sample(&sample(19_906_560, 0), 0, &mb).is_none());
        let ev = s.on_sample(&sample(2_000_000, 0), 500, &mb).unwrap();
        assert_eq!(ev.params, VideoParams::new(700, 394, 45));
        // inside one frame of the last change
        assert!(s.on_sample(&sample(1_000_000, 0), 1_000, &mb).is_none());
        let later = s.on_sample(&sample(1_000_000, 0), 500 + 22_223, &mb).unwrap();
        assert_eq!(mb.take(), Some(later));
        assert_eq!(mb.take(), None);
        assert_eq!(s.log().len(), 4);
        let mut buf = Vec::new();
        write_decision_log(&mut buf, s.log()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("tti,b_alloc,b_spare,verdict,w,h,r\n"));
        assert!(text.contains(",ran,700,394,45"));
    }

    #[test]
    fn mailbox_last_write_wins() {
        let mb = ReinitMailbox::default();
        mb.raise(ReinitEvent { params: P1080_60, raised_at_us: 1 });
        mb.raise(ReinitEvent { params: VideoParams::new(2, 2, 15), raised_at_us: 2 });
        assert!(mb.is_raised());
        assert_eq!(mb.take().unwrap().raised_at_us, 2);
        assert!(!mb.is_raised());
    }

    #[test]
    fn config_validation() {
        assert!(AbrConfig::from_toml("").is_ok());
        assert_eq!(AbrConfig::from_toml("alpha = 2.0\n").unwrap().alpha, 2.0);
        assert!(AbrConfig::from_toml("alpha = 1.0\n").is_err());
        assert!(AbrConfig::from_toml("fps_ladder = [30, 60]\n").is_err());
        assert!(AbrConfig::from_toml("spare_fraction = 0.0\n").is_err());
        assert!(AbrConfig::from_toml("bogus = 1\n").is_err());
    }

    fn state() -> impl Strategy<Value = VideoParams> {
        (2u32..=1080, prop::sample::select(vec![15u32, 30, 45, 60, 90, 120])).prop_map(|(h, r)| {
            let h = h & !1;
            let h = h.max(2);
            VideoParams::new(even_width(h), h, r)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(4096))]
        #[test]
        fn f_res_is_safe(b in 0u64..400_000_000, r in 1u32..=120) {
            let c = cfg();
            let (w, h) = f_res(b, r, &c);
            prop_assert_eq!((w, h), f_res_oracle(b, r, 0.16));
            if (w, h) != (2, 2) {
                prop_assert!(f_bw(VideoParams::new(w, h, r), &c) <= b);
            }
        }

        #[test]
        fn adapt_properties(cur in state(), a in 0u32..60_000_000, s in 0u32..60_000_000) {
            let c = cfg();
            let d = adapt(cur, &sample(a, s), &c);
            let floor = VideoParams::new(2, 2, c.ladder_floor());
            let p = d.params;
            prop_assert_eq!(d.target, target_alloc(f_bw(cur, &c), a as u64, s as u64, &c));
            prop_assert!(p.width <= c.w_cap && p.height <= c.h_cap && p.frame_rate <= c.r_cap);
            prop_assert!(p.width >= 2 && p.height >= 2 && p.frame_rate >= c.ladder_floor());
            if d.target >= f_bw(floor, &c) {
                prop_assert!(f_bw(p, &c) <= d.target, "{} > {}", f_bw(p, &c), d.target);
            }
            if d.target > d.b_video && cur.width < c.w_cap {
                prop_assert_eq!(p.frame_rate, cur.frame_rate);
            }
            prop_assert_eq!(adapt(cur, &sample(a, s), &c), d);
        }
    }
}
