use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde_json::json;

use ranscope::abr::write_decision_log;
use ranscope::eval::{compare_policies, Comparison, Policy, Scenario};

use crate::plot::{line_chart, Series};
use crate::rundir::{sha256_hex, RunDir};
use crate::OutDir;

pub const COMPARISON_FILE: &str = "comparison.json";

#[derive(Args)]
pub struct EndtoendArgs {
    /// Scenario TOML file.
    #[arg(long, conflicts_with = "builtin")]
    scenario: Option<PathBuf>,
    /// Built-in scenario: `capacity-drop` (40 s, capacity halves at 30 s).
    #[arg(long)]
    builtin: Option<String>,
    /// Policies to compare; all four when omitted.
    #[arg(long = "policy")]
    policies: Vec<Policy>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutDir,
}

fn scenario(a: &EndtoendArgs) -> Result<Scenario> {
    let mut sc = match (&a.scenario, a.builtin.as_deref()) {
        (Some(p), None) => Scenario::load(p)?,
        (None, Some("capacity-drop")) | (None, None) => Scenario::capacity_drop(Policy::Adaptive, 7, 40, 30),
        (None, Some(other)) => bail!("unknown built-in scenario `{other}`"),
        (Some(_), Some(_)) => unreachable!("clap rejects both"),
    };
    if let Some(s) = a.seed {
        sc.sim.seed = s;
    }
    sc.validate()?;
    Ok(sc)
}

pub fn run(a: EndtoendArgs) -> Result<()> {
    let sc = scenario(&a)?;
    let policies = if a.policies.is_empty() { Policy::all().to_vec() } else { a.policies.clone() };
    let dir = RunDir::create(&a.out.out_dir)?;
    std::fs::write(dir.file("scenario.toml"), toml::to_string(&sc)?)?;
    let cmp = compare_policies(&sc, &policies)?;

    for r in &cmp.reports {
        dir.write_csv(&format!("ticks_{}.csv", r.policy), &r.ticks)?;
        if !r.decisions.is_empty() {
            write_decision_log(std::fs::File::create(dir.file(&format!("decisions_{}.csv", r.policy)))?, &r.decisions)?;
        }
    }
    dir.write_json(COMPARISON_FILE, &cmp)?;
    plots(&dir, &cmp)?;
    print_comparison(&cmp);

    let hash = sha256_hex(serde_json::to_string(&sc)?.as_bytes());
    let summary: Vec<_> = cmp
        .reports
        .iter()
        .zip(&cmp.qoe)
        .map(|(r, q)| json!({ "policy": r.policy, "qoe": q, "recovery_ms": r.recovery_ms, "peak_delay_ms": r.peak_delay_after_drop_ms, "final_delay_ms": r.final_delay_ms }))
        .collect();
    dir.write_manifest("endtoend", Some(sc.sim.seed), Some(hash), json!({ "scenario": a.scenario, "builtin": a.builtin, "results": summary }))?;
    println!("wrote {}", dir.path.display());
    Ok(())
}

fn plots(dir: &RunDir, cmp: &Comparison) -> Result<()> {
    let Some(first) = cmp.reports.first() else { return Ok(()) };
    let delay: Vec<Series> = cmp
        .reports
        .iter()
        .map(|r| Series::new(r.policy.to_string(), r.ticks.iter().map(|t| (t.t_ms / 1e3, t.queue_delay_ms)).collect()))
        .collect();
    line_chart(&dir.file("queue_delay.svg"), "Queue delay", "time (s)", "ms", &delay, &[("threshold".into(), first.latency_threshold_ms)])?;

    let mut rate: Vec<Series> = vec![Series::new("capacity", first.ticks.iter().map(|t| (t.t_ms / 1e3, t.capacity_bps as f64 / 1e6)).collect())];
    rate.extend(cmp.reports.iter().map(|r| Series::new(r.policy.to_string(), r.ticks.iter().map(|t| (t.t_ms / 1e3, t.video_bps as f64 / 1e6)).collect())));
    line_chart(&dir.file("bitrate.svg"), "Video bitrate", "time (s)", "Mbit/s", &rate, &[])?;

    if let Some(adaptive) = cmp.reports.iter().find(|r| r.policy == Policy::Adaptive) {
        let params = vec![
            Series::new("height (px)", adaptive.ticks.iter().map(|t| (t.t_ms / 1e3, t.height as f64)).collect()),
            Series::new("frame rate x10", adaptive.ticks.iter().map(|t| (t.t_ms / 1e3, t.frame_rate as f64 * 10.0)).collect()),
        ];
        line_chart(&dir.file("adaptive_params.svg"), "Adaptive video parameters", "time (s)", "", &params, &[])?;
    }
    Ok(())
}

pub fn print_comparison(cmp: &Comparison) {
    println!("| policy | mean QoE | peak delay after drop (ms) | recovery (ms) | final delay (ms) | late fraction | reinits |");
    println!("|---|---|---|---|---|---|---|");
    for (r, q) in cmp.reports.iter().zip(&cmp.qoe) {
        let rec = r.recovery_ms.map(|v| format!("{v:.1}")).unwrap_or_else(|| "not recovered".into());
        println!(
            "| {} | {q:.4} | {:.1} | {rec} | {:.1} | {:.4} | {} |",
            r.policy, r.peak_delay_after_drop_ms, r.final_delay_ms, r.late_fraction, r.reinit_events
        );
    }
}
