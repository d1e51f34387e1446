//! Acceptance suite. One PASS/FAIL line per criterion, with the measured
//! numbers behind it. Exits nonzero if any criterion fails.
//!
//! Run with `cargo test -p ranscope-core --test acceptance`.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ranscope::abr::{adapt, f_bw, target_alloc, AbrConfig, VideoParams};
use ranscope::capacity::{EstimatorConfig, TelemetrySample};
use ranscope::dci::envelope::ENVELOPE_BYTES;
use ranscope::dci::listing::parse_listing;
use ranscope::dci::mcs::McsTable;
use ranscope::dci::trace::TraceRecord;
use ranscope::dci::{
    dci_to_grant, mcs_lookup, pack_dci, recover_rnti, riv_decode, riv_encode, sliv_decode, sliv_encode, unpack_dci, verify_dci, Dci,
    DciEnvelope, DciFormat, Direction, McsEntry, PrbRange, Rnti,
};
use ranscope::eval::{accuracy_report, compare_policies, time_pipeline, Policy, RunArtifacts, Scenario};
use ranscope::pipeline::{Observer, ReplayOptions};
use ranscope::rrc::{parse_msg4, parse_sib1};
use ranscope::sim::{self, SimConfig, BUNDLED_MSG4, BUNDLED_SIB1};
use ranscope::tbs::{compute_tbs, grant_tbs, ReCountInputs};
use ranscope::wire::rtsp::{RtspMessage, SessionEvent};
use ranscope::wire::{decode_sample, encode_sample, Method, ServerCore, SessionState};

const WORKED_DCI: &str = include_str!("../fixtures/worked_dci.txt");

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Criterion = (&'static str, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("1", "grant fixture", Duration::from_secs(1), fixture),
        ("2", "codec identities", Duration::from_secs(10), codec),
        ("3", "TBS oracle equivalence", Duration::from_secs(30), tbs_oracle),
        ("4", "telemetry accuracy", Duration::from_secs(120), accuracy),
        ("5", "HARQ semantics", Duration::from_secs(5), harq),
        ("6", "ABR properties", Duration::from_secs(10), abr),
        ("7", "closed loop", Duration::from_secs(60), closed_loop),
        ("8", "per-TTI budget", Duration::from_secs(120), performance),
        ("9", "wire conformance", Duration::from_secs(5), wire),
    ];
    let mut failed = 0;
    for (id, name, budget, f) in criteria {
        let t0 = Instant::now();
        let out = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            check(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = t0.elapsed();
        let in_time = took <= budget;
        let pass = out.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "{} [{id}] {name}: {} ({:.2}s of {}s{})",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn fixture() -> Outcome {
    let cell = parse_sib1(BUNDLED_SIB1).expect("bundled SIB 1");
    let ue = parse_msg4(BUNDLED_MSG4).expect("bundled MSG 4");
    let listing = parse_listing(WORKED_DCI).expect("listing");
    let g = dci_to_grant(&listing.dci, &cell, &ue, listing.rnti).expect("grant");
    let got = (g.start_prb, g.num_prb, g.start_symbol, g.num_symbols, g.modulation_order, g.code_rate(), g.num_layers, g.tbs_bits);
    let want = (0, 2, 2, 12, 8, Ratio::new(948, 1024), 2, 3240);
    check(
        got == want,
        format!(
            "prb=({},{}) symbols=({},{}) Qm={} R={}/2048 v={} tbs={}",
            g.start_prb, g.num_prb, g.start_symbol, g.num_symbols, g.modulation_order, g.code_rate_x2048, g.num_layers, g.tbs_bits
        ),
    )
}

/// Start/length from the textbook RIV rule by search over every pair.
fn riv_by_search(riv: u32, n: u32) -> Option<(u32, u32)> {
    let mut hit = None;
    for len in 1..=n {
        for start in 0..=n - len {
            let v = if len - 1 <= n / 2 { n * (len - 1) + start } else { n * (n - len + 1) + (n - 1 - start) };
            if v == riv {
                assert!(hit.is_none(), "two pairs share riv {riv} at n={n}");
                hit = Some((start, len));
            }
        }
    }
    hit
}

fn random_dci(rng: &mut ChaCha8Rng) -> Dci {
    Dci {
        format: DciFormat::from_code(rng.random_range(0..4)).unwrap(),
        freq_riv: rng.random(),
        time_index: rng.random_range(0..16),
        mcs: rng.random_range(0..32),
        ndi: rng.random_range(0..2),
        rv: rng.random_range(0..4),
        harq_id: rng.random_range(0..16),
        dai: rng.random_range(0..4),
        tpc: rng.random_range(0..4),
        harq_feedback: rng.random_range(0..8),
        ports: rng.random_range(0..16),
        srs_request: rng.random_range(0..4),
        dmrs_id: rng.random_range(0..2),
    }
}

fn codec() -> Outcome {
    let mut failures = Vec::new();
    let mut riv_cases = 0;
    for n in 1..=14u16 {
        let n32 = n as u32;
        for riv in 0..n32 * (n32 + 1) / 2 {
            riv_cases += 1;
            let want = riv_by_search(riv, n32);
            let got = riv_decode(riv, n).ok().map(|r| (r.start as u32, r.len as u32));
            if got != want {
                failures.push(format!("riv {riv} n={n}: {got:?} vs {want:?}"));
            }
            if let Some((s, l)) = want {
                if riv_encode(PrbRange { start: s as u16, len: l as u16 }, n) != riv {
                    failures.push(format!("riv encode ({s},{l}) n={n}"));
                }
            }
        }
    }
    let mut sliv_valid = 0;
    for sliv in 0..196u32 {
        match sliv_decode(sliv) {
            Ok(r) => {
                sliv_valid += 1;
                if r.start as u32 + r.len as u32 > 14 || sliv_encode(r) != sliv {
                    failures.push(format!("sliv {sliv} -> {r:?}"));
                }
            }
            Err(_) => {
                if sliv_by_search(sliv).is_some() {
                    failures.push(format!("sliv {sliv} rejected"));
                }
            }
        }
    }
    if sliv_valid != 105 {
        failures.push(format!("{sliv_valid} valid SLIVs, expected 105"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let d = random_dci(&mut rng);
        let bits = pack_dci(&d).unwrap();
        let env = DciEnvelope::from_dci(&d, Rnti(rng.random())).unwrap();
        let back = DciEnvelope::from_bytes(&env.to_bytes()).unwrap();
        if unpack_dci(&bits).ok() != Some(d) || back != env || env.to_bytes().len() != ENVELOPE_BYTES {
            failures.push(format!("pack round trip {d:?}"));
        }
    }
    let payload = pack_dci(&parse_listing(WORKED_DCI).unwrap().dci).unwrap();
    let mut rnti_fail = 0;
    for r in 0..=u16::MAX {
        let env = ranscope::dci::build_envelope(payload.clone(), Rnti(r)).unwrap();
        if recover_rnti(&env).ok() != Some(Rnti(r)) || !verify_dci(&env, Rnti(r)) {
            rnti_fail += 1;
        }
    }
    if rnti_fail > 0 {
        failures.push(format!("{rnti_fail} RNTIs not recovered"));
    }
    check(
        failures.is_empty(),
        format!(
            "{riv_cases} RIVs (bwp 1..=14), 196 SLIVs ({sliv_valid} valid), 10000 pack round trips, 65536 RNTIs; {} failures{}",
            failures.len(),
            failures.first().map(|f| format!(", first: {f}")).unwrap_or_default()
        ),
    )
}

/// Valid (S, L) for a SLIV under the 14-symbol rule, by search.
fn sliv_by_search(sliv: u32) -> Option<(u32, u32)> {
    (0..14u32)
        .flat_map(|s| (1..=14 - s).map(move |l| (s, l)))
        .find(|&(s, l)| (if l - 1 <= 7 { 14 * (l - 1) + s } else { 14 * (14 - l + 1) + (14 - 1 - s) }) == sliv)
}

const ORACLE_TABLE: [u64; 93] = [
    24, 32, 40, 48, 56, 64, 72, 80, 88, 96, 104, 112, 120, 128, 136, 144, 152, 160, 168, 176, 184, 192, 208, 224, 240, 256, 272, 288, 304,
    320, 336, 352, 368, 384, 408, 432, 456, 480, 504, 528, 552, 576, 608, 640, 672, 704, 736, 768, 808, 848, 888, 928, 984, 1032, 1064,
    1128, 1160, 1192, 1224, 1256, 1288, 1320, 1352, 1416, 1480, 1544, 1608, 1672, 1736, 1800, 1864, 1928, 2024, 2088, 2152, 2216, 2280,
    2408, 2472, 2536, 2600, 2664, 2728, 2792, 2856, 2976, 3104, 3240, 3368, 3496, 3624, 3752, 3824,
];

/// Transport block size with everything scaled by `den`: `x = N_info * den`,
/// `r = R * den`. Returns `None` when `N_info` is not positive.
fn tbs_oracle_scaled(x: u128, r: u128, den: u128) -> Option<u64> {
    if x == 0 {
        return None;
    }
    // largest k with 2^k <= v/den
    let log2 = |v: u128| -> u32 {
        let mut k = 0;
        while (den << (k + 1)) <= v {
            k += 1;
        }
        k
    };
    if x <= 3824 * den {
        let n = if x < den { 3 } else { (log2(x) as i64 - 6).max(3) as u32 };
        let step = den << n;
        let np = (((x / step) << n) as u64).max(24);
        return ORACLE_TABLE.iter().copied().find(|&t| t >= np);
    }
    let y = x - 24 * den;
    let n = log2(y) - 5;
    let step = den << n;
    let rounded = (2 * y + step) / (2 * step);
    let np = ((rounded << n) as u64).max(3840);
    let div_up = |a: u64, b: u64| a.div_ceil(b);
    let tbs = if 4 * r <= den {
        let c = div_up(np + 24, 3816);
        8 * c * div_up(np + 24, 8 * c) - 24
    } else if np > 8424 {
        let c = div_up(np + 24, 8424);
        8 * c * div_up(np + 24, 8 * c) - 24
    } else {
        8 * div_up(np + 24, 8) - 24
    };
    Some(tbs)
}

fn grant_oracle(n_prb: u32, symbols: u32, dmrs: u32, overhead: u32, qm: u32, r_x2048: u32, layers: u32) -> Option<u64> {
    let per_prb = (12 * symbols as i64 - dmrs as i64 - overhead as i64).min(156);
    if per_prb < 0 {
        return None;
    }
    let n_re = per_prb as u128 * n_prb as u128;
    Some(tbs_oracle_scaled(n_re * qm as u128 * layers as u128 * r_x2048 as u128, r_x2048 as u128, 2048).unwrap_or(0))
}

fn tbs_oracle() -> Outcome {
    assert_eq!(ranscope::tbs::table_entries().len(), ORACLE_TABLE.len());
    let entries: Vec<McsEntry> = [McsTable::Qam64, McsTable::Qam256]
        .into_iter()
        .flat_map(|t| (0..32).filter_map(move |m| mcs_lookup(m, t).ok()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = Vec::new();
    let grants = 20_000;
    for _ in 0..grants {
        let symbols = rng.random_range(1..=14u32);
        let dmrs = 12 * rng.random_range(0..=symbols.min(4));
        let overhead = [0, 6, 12, 18][rng.random_range(0..4)];
        let n_prb = rng.random_range(1..=273u32);
        let layers = rng.random_range(1..=4u8);
        let mcs = entries[rng.random_range(0..entries.len())];
        let re = ReCountInputs { n_prb, num_symbols: symbols, dmrs_re_per_prb: dmrs, overhead };
        let got = grant_tbs(&re, mcs, layers).ok().map(u64::from);
        let want = grant_oracle(n_prb, symbols, dmrs, overhead, mcs.modulation_order as u32, mcs.code_rate_x2048 as u32, layers as u32);
        if got != want {
            mismatches.push(format!("{re:?} {mcs:?} v={layers}: {got:?} vs {want:?}"));
        }
    }
    let mut edges = 0;
    let mut points: Vec<i64> = vec![1, 23, 24, 25, 3823, 3824, 3825, 3840, 3864, 8424, 8448, 8449];
    for t in ORACLE_TABLE {
        points.extend([t as i64 - 1, t as i64, t as i64 + 1]);
    }
    for n_info in points {
        for (num, den) in [(1i64, 8i64), (1, 4), (1, 2), (948, 1024)] {
            edges += 1;
            let got = compute_tbs(Ratio::from_integer(n_info), Ratio::new(num, den)).ok().map(u64::from);
            let want = tbs_oracle_scaled(n_info as u128 * den as u128, num as u128, den as u128);
            if got != want {
                mismatches.push(format!("N_info={n_info} R={num}/{den}: {got:?} vs {want:?}"));
            }
        }
    }
    check(
        mismatches.is_empty(),
        format!(
            "{grants} random grants and {edges} table-edge inputs, {} mismatches{}",
            mismatches.len(),
            mismatches.first().map(|m| format!(", first: {m}")).unwrap_or_default()
        ),
    )
}

fn accuracy_config(loss: &str) -> SimConfig {
    let mut text = format!("seed = 41\nduration_tti = 150000\n{loss}\n");
    for i in 0..4 {
        text.push_str(&format!("[[ue]]\nrnti = {}\nuplink_traffic = {{ kind = \"saturating\" }}\n", 0x4296 + i));
    }
    SimConfig::from_toml(&text).unwrap()
}

fn accuracy() -> Outcome {
    let (dl_loss, ul_loss) = (0.0014, 0.0022);
    let lossy: RunArtifacts =
        sim::run(accuracy_config(&format!("dci_loss_probability_dl = {dl_loss}\ndci_loss_probability_ul = {ul_loss}"))).unwrap().into();
    let (r, _) = accuracy_report(&lossy, ReplayOptions::default()).unwrap();
    let clean: RunArtifacts = sim::run(accuracy_config("")).unwrap().into();
    let (c, _) = accuracy_report(&clean, ReplayOptions::default()).unwrap();

    let dcis = r.misses.dl.total + r.misses.ul.total;
    let dl_dev = (r.misses.dl.rate() - dl_loss).abs() * 100.0;
    let ul_dev = (r.misses.ul.rate() - ul_loss).abs() * 100.0;
    let clean_exact = c.misses.dl.missed + c.misses.ul.missed == 0
        && c.misses.prb_error_matched.mean == 0.0
        && c.misses.prb_error_total.mean == 0.0
        && c.throughput_rel_pct.max == 0.0;
    let pass = dcis >= 100_000
        && dl_dev <= 0.05
        && ul_dev <= 0.05
        && r.misses.prb_error_matched.mean <= 0.02
        && r.throughput_rel_pct.p75 < 0.1
        && clean_exact;
    check(
        pass,
        format!(
            "{dcis} DCIs; miss dl {:.4}% ul {:.4}% (injected 0.14%/0.22%, off by {dl_dev:.4}/{ul_dev:.4} pp); \
             PRB error/TTI matched {:.4}, with misses {:.4}; throughput error p75 {:.4}% p90 {:.4}%; lossless exact: {clean_exact}",
            r.misses.dl.rate() * 100.0,
            r.misses.ul.rate() * 100.0,
            r.misses.prb_error_matched.mean,
            r.misses.prb_error_total.mean,
            r.throughput_rel_pct.p75,
            r.throughput_rel_pct.p90,
        ),
    )
}

fn harq() -> Outcome {
    let mut notes = Vec::new();

    // hand-built sequence on one HARQ process
    let cell = parse_sib1(BUNDLED_SIB1).unwrap();
    let rnti = Rnti(0x4296);
    let mut obs = Observer::new(cell.clone(), [(rnti, BUNDLED_MSG4.to_string())], EstimatorConfig::default());
    let mut msg4 = Dci::zeroed(DciFormat::F1_0);
    msg4.freq_riv = riv_encode(PrbRange { start: 0, len: 4 }, cell.carrier_bandwidth_prb) as u16;
    let rec = |tti, d: &Dci| TraceRecord { tti, direction: Direction::Dl, envelope: DciEnvelope::from_dci(d, rnti).unwrap() };
    obs.process_tti(0, &[rec(0, &msg4)]).unwrap();
    let base = parse_listing(WORKED_DCI).unwrap().dci;
    let ndis = [(1u64, 0u8), (2, 0), (3, 1), (4, 1), (5, 1), (6, 0)];
    let mut effective = Vec::new();
    for (tti, ndi) in ndis {
        let d = Dci { ndi, ..base };
        let r = obs.process_tti(tti, &[rec(tti, &d)]).unwrap();
        effective.push(r.entries.iter().map(|e| e.effective_tbs).sum::<u32>());
    }
    // first use of a process is new data, a repeated NDI is a retransmission
    let hand_ok = effective == [3240, 0, 3240, 0, 0, 3240];
    if !hand_ok {
        notes.push(format!("hand-built sequence gave {effective:?}"));
    }

    // simulated run with retransmissions
    let cfg = SimConfig::from_toml(
        "seed = 9\nduration_tti = 20000\nretransmission_probability = 0.25\n\
         [[ue]]\nrnti = 0x4296\nuplink_traffic = { kind = \"saturating\" }\n\
         [[ue]]\nrnti = 0x4297\nchannel = { kind = \"constant\", mcs = 27 }\n",
    )
    .unwrap();
    let run = sim::run(cfg).unwrap();
    let mut obs = Observer::new(run.cell.clone(), run.msg4_docs.clone(), EstimatorConfig::default()).keep_decoded();
    let mut allocated: HashMap<Rnti, u64> = HashMap::new();
    let mut i = 0;
    for tti in run.trace_header.start_tti..run.trace_header.end_tti {
        let start = i;
        while i < run.observed.len() && run.observed[i].tti == tti {
            i += 1;
        }
        let r = obs.process_tti(tti, &run.observed[start..i]).unwrap();
        for e in &r.entries {
            *allocated.entry(e.rnti).or_default() += e.effective_tbs as u64;
        }
    }
    let mut truth_dl: HashMap<Rnti, u64> = HashMap::new();
    let mut retx = HashMap::new();
    for e in &run.truth.entries {
        if e.direction == Direction::Dl {
            *truth_dl.entry(e.rnti).or_default() += e.new_data_bits() as u64;
        }
        if e.is_retransmission {
            retx.insert((e.tti, e.rnti, e.direction), ());
        }
    }
    let retx_nonzero = obs.decoded().iter().filter(|d| retx.contains_key(&(d.tti, d.rnti, d.direction)) && d.tbs != 0).count();
    let ul_truth: u64 = run.truth.entries.iter().filter(|e| e.direction == Direction::Ul).map(|e| e.new_data_bits() as u64).sum();
    let ul_decoded: u64 = obs.decoded().iter().filter(|d| d.direction == Direction::Ul).map(|d| d.tbs as u64).sum();
    let sim_ok = allocated == truth_dl && retx_nonzero == 0 && ul_truth == ul_decoded && !retx.is_empty();
    if !sim_ok {
        notes.push(format!("allocated {allocated:?} vs truth {truth_dl:?}, ul {ul_decoded} vs {ul_truth}, {retx_nonzero} retx with bits"));
    }
    let bytes: u64 = allocated.values().sum::<u64>() / 8;
    check(
        hand_ok && sim_ok,
        if notes.is_empty() {
            format!("hand-built NDI sequence exact; simulated run: {} retransmissions, {bytes} DL bytes allocated = ground truth", retx.len())
        } else {
            notes.join("; ")
        },
    )
}

fn abr() -> Outcome {
    let cfg = AbrConfig::default();
    let floor = VideoParams::new(2, 2, cfg.ladder_floor());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = Vec::new();
    let mut preference_checked = 0;
    for _ in 0..10_000 {
        let h = rng.random_range(1..=540u32) * 2;
        let cur = VideoParams::new((h * 16 / 9).max(2) & !1, h, cfg.fps_ladder[rng.random_range(0..cfg.fps_ladder.len())]);
        let sample = TelemetrySample { tti: 0, b_alloc: rng.random_range(0..60_000_000), b_spare: rng.random_range(0..60_000_000) };
        let d = adapt(cur, &sample, &cfg);
        let p = d.params;
        let target = target_alloc(f_bw(cur, &cfg), sample.b_alloc as u64, sample.b_spare as u64, &cfg);
        if target >= f_bw(floor, &cfg) && f_bw(p, &cfg) > target {
            violations.push(format!("{cur} -> {p}: {} > {target}", f_bw(p, &cfg)));
        }
        if p.width > cfg.w_cap || p.height > cfg.h_cap || p.frame_rate > cfg.r_cap || p.width < 2 || p.height < 2 || p.frame_rate < floor.frame_rate {
            violations.push(format!("{cur} -> {p}: outside caps or floors"));
        }
        if target > f_bw(cur, &cfg) && cur.width < cfg.w_cap && cur.height < cfg.h_cap {
            preference_checked += 1;
            if p.frame_rate != cur.frame_rate {
                violations.push(format!("{cur} -> {p}: frame rate moved before resolution"));
            }
        }
    }
    let eq3 = target_alloc(4_000_000, 4_000_000, 2_000_000, &cfg);
    let eq3_wan = target_alloc(99_000_000, 4_000_000, 2_000_000, &cfg);
    let eq3_ran = target_alloc(99_000_000, 4_000_000, 0, &cfg);
    let cases_ok = eq3 == 5_500_000 && eq3_wan == 4_000_000 && eq3_ran == 4_000_000;
    check(
        violations.is_empty() && cases_ok,
        format!(
            "10000 random pairs, {} violations ({preference_checked} growth cases checked for resolution first); \
             target cases {eq3}/{eq3_wan}/{eq3_ran}{}",
            violations.len(),
            violations.first().map(|v| format!(", first: {v}")).unwrap_or_default()
        ),
    )
}

fn closed_loop() -> Outcome {
    let base = Scenario::capacity_drop(Policy::Adaptive, 7, 40, 30);
    let cmp = compare_policies(&base, &Policy::all()).unwrap();
    let again = compare_policies(&base, &[Policy::Adaptive]).unwrap();
    let adaptive = &cmp.reports[0];
    let fixed_1080 = cmp.reports.iter().find(|r| r.policy == Policy::FIXED_1080P60).unwrap();
    let qa = cmp.qoe_of(Policy::Adaptive).unwrap();
    let fixed_best = cmp.reports.iter().filter(|r| r.policy != Policy::Adaptive).map(|r| cmp.qoe_of(r.policy).unwrap()).fold(f64::MIN, f64::max);

    let recovered = adaptive.recovered() && adaptive.recovery_ms.is_some_and(|ms| ms <= 1000.0);
    // divergence: still above threshold at the end and the queue still growing
    let after: Vec<_> = fixed_1080.ticks.iter().filter(|t| t.tti >= fixed_1080.drop_tti).collect();
    let mid = after[after.len() / 2].queue_delay_ms;
    let diverges = !fixed_1080.recovered() && fixed_1080.final_delay_ms > mid && fixed_1080.final_delay_ms > fixed_1080.latency_threshold_ms;
    let deterministic = again.reports[0].ticks == adaptive.ticks;
    let qoes: Vec<String> = cmp.reports.iter().map(|r| format!("{} {:.4}", r.policy, cmp.qoe_of(r.policy).unwrap())).collect();
    check(
        recovered && diverges && qa > fixed_best && deterministic,
        format!(
            "adaptive peak {:.1} ms after drop, recovery {:?} ms, standing delay {:.1} ms (threshold {} ms); \
             fixed-1080p60 {:.1} -> {:.1} ms, recovered {}; QoE {}; deterministic {deterministic}",
            adaptive.peak_delay_after_drop_ms,
            adaptive.recovery_ms,
            adaptive.final_delay_ms,
            adaptive.latency_threshold_ms,
            mid,
            fixed_1080.final_delay_ms,
            fixed_1080.recovered(),
            qoes.join(", "),
        ),
    )
}

fn performance() -> Outcome {
    let r = time_pipeline(4, 100_000, 8).unwrap();
    let s = r.per_tti_us;
    check(
        s.mean < 250.0,
        format!("4 DCIs/TTI over {} TTIs: mean {:.2} us, p50 {:.2}, p90 {:.2}, max {:.1} (budget 250 us)", s.count, s.mean, s.p50, s.p90, s.max),
    )
}

fn request(method: Method, uri: &str, cseq: u32) -> RtspMessage {
    let msg = RtspMessage::request(method, uri, cseq);
    // through the wire form and back
    let bytes = msg.to_bytes();
    let (parsed, used) = RtspMessage::parse(&bytes).unwrap().unwrap();
    assert_eq!(used, bytes.len());
    parsed
}

fn wire() -> Outcome {
    let mut notes = Vec::new();
    let s = TelemetrySample { tti: 0x0102_0304_0506_0708, b_alloc: 0x1122_3344, b_spare: 0xAABB_CCDD };
    let golden: [u8; 16] = [1, 2, 3, 4, 5, 6, 7, 8, 0x11, 0x22, 0x33, 0x44, 0xAA, 0xBB, 0xCC, 0xDD];
    let golden_ok = encode_sample(&s) == golden && decode_sample(&golden).ok() == Some(s) && decode_sample(&golden[..15]).is_err();
    if !golden_ok {
        notes.push("golden bytes differ".to_string());
    }

    let uri = "rtsp://127.0.0.1:48010";
    let flow = |core: &mut ServerCore, conn: u64, role: Option<&str>| -> Vec<(u16, Option<SessionEvent>)> {
        let steps = [
            (Method::Options, uri.to_string()),
            (Method::Describe, uri.to_string()),
            (Method::Setup, format!("{uri}/streamid=feedback")),
            (Method::Announce, uri.to_string()),
            (Method::Play, uri.to_string()),
        ];
        steps
            .into_iter()
            .enumerate()
            .map(|(i, (m, u))| {
                let mut req = request(m, &u, i as u32 + 1);
                if let Some(r) = role {
                    req = req.with_header("X-Role", r);
                }
                let (resp, ev) = core.handle(conn, &req);
                (resp.status().unwrap(), ev)
            })
            .collect()
    };

    let mut core = ServerCore::new(48000);
    let statuses: Vec<u16> = flow(&mut core, 1, None).into_iter().map(|(s, _)| s).collect();
    let five_ok = statuses == [200; 5] && core.session(1).map(|s| s.state) == Some(SessionState::Playing);
    if !five_ok {
        notes.push(format!("five-message flow gave {statuses:?}"));
    }

    let (early, _) = core.handle(2, &request(Method::Play, uri, 1));
    let early_ok = early.status() == Some(455) && core.session(2).map(|s| s.state) == Some(SessionState::Init);
    if !early_ok {
        notes.push(format!("PLAY before SETUP gave {:?}", early.status()));
    }

    // a client and a telemetry server alternating requests on one server
    let mut core = ServerCore::new(48000);
    let steps = [Method::Options, Method::Describe, Method::Setup, Method::Announce, Method::Play];
    let mut interleaved = Vec::new();
    for (i, m) in steps.iter().enumerate() {
        for (conn, role) in [(10u64, "client"), (11, "telemetry")] {
            let stream = if role == "telemetry" { "feedback" } else { "video" };
            let u = if *m == Method::Setup { format!("{uri}/streamid={stream}") } else { uri.to_string() };
            let req = request(m.clone(), &u, i as u32 + 1).with_header("X-Role", role);
            interleaved.push(core.handle(conn, &req).0.status().unwrap());
        }
    }
    let (a, b) = (core.session(10).unwrap(), core.session(11).unwrap());
    let inter_ok = interleaved.iter().all(|&s| s == 200)
        && a.state == SessionState::Playing
        && b.state == SessionState::Playing
        && a.streams.get("video") != b.streams.get("feedback")
        && a.id != b.id;
    if !inter_ok {
        notes.push(format!("interleaved handshakes gave {interleaved:?}"));
    }

    check(
        notes.is_empty(),
        if notes.is_empty() {
            "golden 16-byte datagram; OPTIONS/DESCRIBE/SETUP/ANNOUNCE/PLAY reaches playing; early PLAY -> 455; two interleaved handshakes both playing"
                .to_string()
        } else {
            notes.join("; ")
        },
    )
}
