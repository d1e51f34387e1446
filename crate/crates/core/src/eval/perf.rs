//! Wall-clock cost of the per-TTI observer path on synthetic traffic.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::capacity::EstimatorConfig;
use crate::dci::trace::TraceRecord;
use crate::dci::{riv_encode, Dci, DciEnvelope, DciFormat, Direction, PrbRange, Rnti};
use crate::pipeline::Observer;
use crate::rrc::{parse_sib1, CellCommonConfig, SlotKind};
use crate::sim::{BUNDLED_MSG4, BUNDLED_SIB1};
use crate::stats::{summarize, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub dcis_per_tti: usize,
    pub ttis: u64,
    /// Microseconds per TTI.
    pub per_tti_us: Summary,
}

/// Observer with `n` UEs already attached, plus the TTI to continue from.
pub fn primed_observer(n: usize) -> Result<(Observer, CellCommonConfig, Vec<Rnti>, u64), EvalError> {
    let cell = parse_sib1(BUNDLED_SIB1)?;
    let rntis: Vec<Rnti> = (0..n as u16).map(|i| Rnti(0x4296 + i)).collect();
    let mut obs = Observer::new(cell.clone(), rntis.iter().map(|&r| (r, BUNDLED_MSG4.to_string())), EstimatorConfig::default());
    let bw = cell.carrier_bandwidth_prb;
    for (tti, &rnti) in rntis.iter().enumerate() {
        let mut d = Dci::zeroed(DciFormat::F1_0);
        d.freq_riv = riv_encode(PrbRange { start: 0, len: 4 }, bw) as u16;
        let rec = TraceRecord { tti: tti as u64, direction: Direction::Dl, envelope: DciEnvelope::from_dci(&d, rnti)? };
        obs.process_tti(tti as u64, &[rec])?;
    }
    Ok((obs, cell, rntis, n as u64))
}

/// Pre-builds `ttis` slots of `k` downlink DCIs each and times
/// `process_tti` over them. Envelopes arrive packed, so each call unpacks,
/// checks the CRC, builds the grant, computes TBS, tracks HARQ and updates
/// the estimator.
pub fn time_pipeline(k: usize, ttis: u64, seed: u64) -> Result<TimingReport, EvalError> {
    let (mut obs, cell, rntis, first) = primed_observer(k.max(1))?;
    let bw = cell.carrier_bandwidth_prb;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ndi = vec![[0u8; 16]; rntis.len()];
    let mut slots: Vec<(u64, Vec<TraceRecord>)> = Vec::with_capacity(ttis as usize);
    let mut tti = first;
    while (slots.len() as u64) < ttis {
        // keep the DCIs in downlink slots so the estimator does real work
        if cell.slot_kind(tti) != SlotKind::Downlink {
            tti += 1;
            continue;
        }
        let share = bw / k.max(1) as u16;
        let mut recs = Vec::with_capacity(k);
        for (i, &rnti) in rntis.iter().enumerate().take(k) {
            let mut d = Dci::zeroed(DciFormat::F1_1);
            let harq = rng.random_range(0..16u8);
            if rng.random_bool(0.9) {
                ndi[i][harq as usize] ^= 1;
            }
            d.freq_riv = riv_encode(PrbRange { start: i as u16 * share, len: share.max(1) }, bw) as u16;
            d.mcs = rng.random_range(0..=27);
            d.harq_id = harq;
            d.ndi = ndi[i][harq as usize];
            recs.push(TraceRecord { tti, direction: Direction::Dl, envelope: DciEnvelope::from_dci(&d, rnti)? });
        }
        slots.push((tti, recs));
        tti += 1;
    }
    let mut times = Vec::with_capacity(slots.len());
    for (tti, recs) in &slots {
        let t0 = Instant::now();
        let rec = obs.process_tti(*tti, recs)?;
        times.push(t0.elapsed().as_secs_f64() * 1e6);
        std::hint::black_box(rec);
    }
    let accepted = obs.stats().accepted;
    if accepted < ttis * k as u64 {
        return Err(EvalError::InvalidScenario(format!("only {accepted} of {} synthetic DCIs were accepted", ttis * k as u64)));
    }
    Ok(TimingReport { dcis_per_tti: k, ttis, per_tti_us: summarize(times) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_synthetic_dci_is_accepted() {
        for k in 1..=4 {
            let r = time_pipeline(k, 500, 1).unwrap();
            assert_eq!(r.per_tti_us.count, 500);
            assert!(r.per_tti_us.mean > 0.0);
        }
    }
}
