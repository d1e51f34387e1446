use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use serde_json::json;

use ranscope::capacity::EstimatorConfig;
use ranscope::dci::trace::read_trace;
use ranscope::dci::Rnti;
use ranscope::eval::{accuracy_report, time_pipeline, AccuracyReport, RunArtifacts, ThroughputPoint, TimingReport};
use ranscope::pipeline::{replay, ReplayOptions, ReplayOutput};
use ranscope::rrc::parse_sib1;
use ranscope::sim::{read_ground_truth, MSG4_DIR, SIB1_FILE, TRACE_FILE, TRUTH_FILE};
use ranscope::stats::Summary;

use crate::endtoend::print_comparison;
use crate::plot::{line_chart, Series};
use crate::rundir::{read_manifest, RunDir};

#[derive(Args)]
pub struct ReplayArgs {
    /// Directory written by `simulate`; supplies any input not given below.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    cell_config: Option<PathBuf>,
    /// One MSG 4 document per UE, named by hex RNTI (`4296.json`).
    #[arg(long)]
    msg4_dir: Option<PathBuf>,
    /// Ground truth to score against.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// TTIs between recorded samples.
    #[arg(long, default_value_t = 20)]
    sample_every: u64,
    #[arg(long, default_value_t = 100)]
    window_ms: u32,
}

fn pick(explicit: &Option<PathBuf>, run_dir: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| run_dir.as_ref().map(|d| d.join(name)))
}

pub fn load_msg4_dir(dir: &Path) -> Result<BTreeMap<Rnti, String>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        let Ok(rnti) = u16::from_str_radix(stem.trim_start_matches("0x"), 16) else { continue };
        out.insert(Rnti(rnti), std::fs::read_to_string(&path)?);
    }
    Ok(out)
}

/// Two curves per UE.
type PerUe = BTreeMap<Rnti, (Vec<(f64, f64)>, Vec<(f64, f64)>)>;

fn mbps(v: u64) -> f64 {
    v as f64 / 1e6
}

pub fn run(a: ReplayArgs) -> Result<()> {
    let trace_path = pick(&a.trace, &a.run_dir, TRACE_FILE).context("--trace or --run-dir is required")?;
    let cell_path = pick(&a.cell_config, &a.run_dir, SIB1_FILE).context("--cell-config or --run-dir is required")?;
    let msg4_path = pick(&a.msg4_dir, &a.run_dir, MSG4_DIR).context("--msg4-dir or --run-dir is required")?;
    let truth_path = pick(&a.truth, &a.run_dir, TRUTH_FILE).filter(|p| p.exists());

    let (header, records) = read_trace(BufReader::new(std::fs::File::open(&trace_path).with_context(|| format!("opening {}", trace_path.display()))?))?;
    let cell = parse_sib1(&std::fs::read_to_string(&cell_path)?)?;
    let msg4_docs = load_msg4_dir(&msg4_path)?;
    let slots_per_s = cell.subcarrier_spacing.slots_per_second() as f64;
    let opts = ReplayOptions { sample_every: a.sample_every, estimator: EstimatorConfig { window_ms: a.window_ms, ..Default::default() }, keep_decoded: true };
    let out = replay(&header, &records, &cell, msg4_docs.clone(), opts)?;

    let dir = RunDir::create(&a.out_dir)?;
    dir.write_csv("rates.csv", out.samples.iter().map(|s| s.csv_row()))?;
    rate_plot(&dir, &out, slots_per_s)?;
    let s = out.stats;
    println!(
        "{} TTIs: {} DCIs accepted ({} retransmissions), {} UEs registered, {} rejected, {} for unknown RNTIs",
        header.end_tti - header.start_tti,
        s.accepted,
        s.retransmissions,
        s.registrations,
        s.rejected,
        s.unknown_rnti
    );

    let mut details = json!({ "trace": trace_path, "run_id": format!("{:016x}", header.run_id), "stats": s });
    if let Some(tp) = truth_path {
        let truth = read_ground_truth(BufReader::new(std::fs::File::open(&tp)?))?;
        let seed = truth.header.seed;
        let run = RunArtifacts { header, records, truth, cell, msg4_docs };
        let (report, points) = accuracy_report(&run, opts)?;
        dir.write_json("accuracy.json", &report)?;
        dir.write_csv("throughput.csv", &points)?;
        throughput_plot(&dir, &points, slots_per_s)?;
        print!("{}", accuracy_table(&report));
        details["accuracy"] = serde_json::to_value(&report)?;
        dir.write_manifest("replay", Some(seed), None, details)?;
    } else {
        dir.write_manifest("replay", None, None, details)?;
    }
    println!("wrote {}", dir.path.display());
    Ok(())
}

fn rate_plot(dir: &RunDir, out: &ReplayOutput, slots_per_s: f64) -> Result<()> {
    let tti_s = 1.0 / slots_per_s;
    let mut by_ue = PerUe::new();
    for s in &out.samples {
        let t = s.tti as f64 * tti_s;
        let e = by_ue.entry(s.rnti).or_default();
        e.0.push((t, s.sample.b_alloc as f64 / 1e6));
        e.1.push((t, s.sample.b_spare as f64 / 1e6));
    }
    let mut series = Vec::new();
    for (rnti, (alloc, spare)) in by_ue {
        series.push(Series::new(format!("{rnti} allocated"), alloc));
        series.push(Series::new(format!("{rnti} spare"), spare));
    }
    line_chart(&dir.file("rates.svg"), "Estimated capacity per UE", "time (s)", "Mbit/s", &series, &[])
}

fn throughput_plot(dir: &RunDir, points: &[ThroughputPoint], slots_per_s: f64) -> Result<()> {
    let mut by_ue = PerUe::new();
    for p in points {
        let t = p.tti as f64 / slots_per_s;
        let e = by_ue.entry(p.rnti).or_default();
        e.0.push((t, mbps(p.estimated)));
        e.1.push((t, mbps(p.truth)));
    }
    let mut series = Vec::new();
    for (rnti, (est, truth)) in by_ue {
        series.push(Series::new(format!("{rnti} estimated"), est));
        series.push(Series::new(format!("{rnti} ground truth"), truth));
    }
    line_chart(&dir.file("throughput.svg"), "Allocated throughput vs ground truth", "time (s)", "Mbit/s", &series, &[])
}

fn summary_row(out: &mut String, name: &str, s: &Summary, scale: f64, unit: &str) {
    let _ = writeln!(
        out,
        "| {name} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {unit} |",
        s.count,
        s.mean * scale,
        s.p50 * scale,
        s.p75 * scale,
        s.p90 * scale,
        s.max * scale
    );
}

pub fn accuracy_table(r: &AccuracyReport) -> String {
    let m = &r.misses;
    let mut out = String::new();
    let _ = writeln!(out, "\n### DCI misses\n\n| link | total | missed | rate (%) |\n|---|---|---|---|");
    for (name, l) in [("downlink", m.dl), ("uplink", m.ul)] {
        let _ = writeln!(out, "| {name} | {} | {} | {:.4} |", l.total, l.missed, l.rate() * 100.0);
    }
    for u in &m.per_ue {
        let _ = writeln!(out, "| {} dl | {} | {} | {:.4} |", u.rnti, u.dl.total, u.dl.missed, u.dl.rate() * 100.0);
        let _ = writeln!(out, "| {} ul | {} | {} | {:.4} |", u.rnti, u.ul.total, u.ul.missed, u.ul.rate() * 100.0);
    }
    let _ = writeln!(out, "\nspurious decodes: {}\n", m.spurious);
    let _ = writeln!(out, "### Errors\n\n| metric | n | mean | p50 | p75 | p90 | max | unit |\n|---|---|---|---|---|---|---|---|");
    summary_row(&mut out, "PRB error, decoded DCIs", &m.prb_error_matched, 1.0, "PRB/TTI");
    summary_row(&mut out, "PRB error, incl. missed", &m.prb_error_total, 1.0, "PRB/TTI");
    summary_row(&mut out, "throughput error", &r.throughput_abs_bps, 1e-3, "kbit/s");
    summary_row(&mut out, "throughput error", &r.throughput_rel_pct, 1.0, "%");
    out
}

pub fn timing_table(rows: &[TimingReport]) -> String {
    let mut out = String::from("\n### Per-TTI processing time\n\n| DCIs/TTI | TTIs | mean (us) | p50 | p90 | max |\n|---|---|---|---|---|---|\n");
    for t in rows {
        let s = t.per_tti_us;
        let _ = writeln!(out, "| {} | {} | {:.2} | {:.2} | {:.2} | {:.1} |", t.dcis_per_tti, t.ttis, s.mean, s.p50, s.p90, s.max);
    }
    out
}

#[derive(Args)]
pub struct ReportArgs {
    /// A directory written by `simulate`, `replay` or `endtoend`.
    #[arg(long)]
    run_dir: PathBuf,
    /// Synthetic TTIs per DCI count in the timing table; 0 skips it.
    #[arg(long, default_value_t = 100_000)]
    timing_ttis: u64,
}

#[derive(Serialize)]
struct Report {
    accuracy: Option<AccuracyReport>,
    timing: Vec<TimingReport>,
}

pub fn report(a: ReportArgs) -> Result<()> {
    let dir = RunDir { path: a.run_dir.clone() };
    let manifest = read_manifest(&a.run_dir)?;
    if let Some(m) = &manifest {
        println!("{} run, ranscope {}, seed {:?}", m.verb, m.versions.ranscope, m.seed);
    }
    if dir.file(crate::endtoend::COMPARISON_FILE).exists() {
        let text = std::fs::read_to_string(dir.file(crate::endtoend::COMPARISON_FILE))?;
        print_comparison(&serde_json::from_str(&text)?);
        return Ok(());
    }
    let mut md = String::from("# Run report\n");
    let accuracy = if dir.file(TRACE_FILE).exists() && dir.file(TRUTH_FILE).exists() {
        let run = RunArtifacts::load(&a.run_dir)?;
        let (r, _) = accuracy_report(&run, ReplayOptions::default())?;
        md.push_str(&accuracy_table(&r));
        Some(r)
    } else if dir.file("accuracy.json").exists() {
        let r: AccuracyReport = serde_json::from_str(&std::fs::read_to_string(dir.file("accuracy.json"))?)?;
        md.push_str(&accuracy_table(&r));
        Some(r)
    } else {
        None
    };
    let mut timing = Vec::new();
    if a.timing_ttis > 0 {
        for k in 1..=4 {
            timing.push(time_pipeline(k, a.timing_ttis, 1)?);
        }
        md.push_str(&timing_table(&timing));
    }
    if accuracy.is_none() && timing.is_empty() {
        bail!("{} holds no trace, ground truth or comparison to report on", a.run_dir.display());
    }
    print!("{md}");
    std::fs::write(dir.file("report.md"), &md)?;
    dir.write_json("report.json", &Report { accuracy, timing })?;
    Ok(())
}
