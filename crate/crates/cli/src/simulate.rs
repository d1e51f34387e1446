use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde_json::json;

use ranscope::dci::Direction;
use ranscope::sim::{self, SimConfig};

use crate::rundir::RunDir;
use crate::OutDir;

#[derive(Args)]
pub struct SimulateArgs {
    /// Simulator TOML file.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    out: OutDir,
    /// Overrides the seed in the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the duration in the file.
    #[arg(long)]
    duration_tti: Option<u64>,
}

pub fn run(a: SimulateArgs) -> Result<()> {
    let mut cfg = SimConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.duration_tti {
        cfg.duration_tti = d;
    }
    cfg.validate()?;
    let (seed, hash) = (cfg.seed, cfg.config_hash());
    let dir = RunDir::create(&a.out.out_dir)?;
    std::fs::write(dir.file("sim.toml"), toml::to_string(&cfg)?)?;
    let run = sim::run(cfg)?;
    run.write_to(&dir.path)?;

    let mut per_ue: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for e in &run.truth.entries {
        let row = per_ue.entry(e.rnti.to_string()).or_default();
        match e.direction {
            Direction::Dl => row.0 += 1,
            Direction::Ul => row.1 += 1,
        }
        row.2 += e.new_data_bits() as u64;
    }
    let lost = run.truth.entries.len() - run.observed.len();
    println!("run {:016x}: {} TTIs, {} DCIs scheduled, {} in trace ({lost} lost)", run.trace_header.run_id, run.trace_header.end_tti, run.truth.entries.len(), run.observed.len());
    for (rnti, (dl, ul, bits)) in &per_ue {
        println!("  {rnti}: {dl} DL / {ul} UL DCIs, {:.2} Mbit new data", *bits as f64 / 1e6);
    }
    dir.write_manifest(
        "simulate",
        Some(seed),
        Some(hash),
        json!({
            "config": a.config,
            "run_id": format!("{:016x}", run.trace_header.run_id),
            "duration_tti": run.trace_header.end_tti,
            "scheduled_dcis": run.truth.entries.len(),
            "traced_dcis": run.observed.len(),
        }),
    )?;
    println!("wrote {}", dir.path.display());
    Ok(())
}
