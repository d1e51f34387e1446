//! The sample files under `configs/` load and run.

use std::path::{Path, PathBuf};

use ranscope::abr::AbrConfig;
use ranscope::eval::{accuracy_report, run_endtoend, Policy, RunArtifacts, Scenario};
use ranscope::pipeline::ReplayOptions;
use ranscope::sim::{self, SimConfig};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn abr_file_matches_defaults() {
    assert_eq!(AbrConfig::load(&configs().join("abr.toml")).unwrap(), AbrConfig::default());
}

#[test]
fn sample_sim_runs_and_replays_from_disk() {
    let mut cfg = SimConfig::load(&configs().join("sim.toml")).unwrap();
    cfg.duration_tti = 6000;
    let run = sim::run(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run.write_to(dir.path()).unwrap();
    let loaded = RunArtifacts::load(dir.path()).unwrap();
    assert_eq!(loaded.msg4_docs.len(), 4);
    let (report, points) = accuracy_report(&loaded, ReplayOptions::default()).unwrap();
    assert_eq!(report.misses.spurious, 0);
    assert_eq!(report.misses.prb_error_matched.max, 0.0);
    assert!(report.misses.per_ue.len() == 4 && !points.is_empty());
}

#[test]
fn sample_scenario_matches_the_builtin_drop() {
    let sc = Scenario::load(&configs().join("capacity_drop.toml")).unwrap();
    assert_eq!(sc, Scenario::capacity_drop(Policy::Adaptive, 7, 40, 30));
    let mut short = sc.with_policy(Policy::FIXED_720P60);
    short.sim.duration_tti = 4000;
    short.drop_tti = 2000;
    let r = run_endtoend(&short).unwrap();
    assert_eq!(r.reinit_events, 0);
    assert!(r.ticks.iter().all(|t| (t.width, t.height, t.frame_rate) == (1280, 720, 60)));
}
