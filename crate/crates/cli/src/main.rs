//! `ranscope`: simulate cells, replay traces, serve telemetry and run
//! closed-loop video comparisons.

mod endtoend;
mod inspect;
mod plot;
mod replay;
mod rundir;
mod serve;
mod simulate;

use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ranscope", version, about = "5G control-channel telemetry toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the gNB simulator and write a trace plus ground truth.
    Simulate(simulate::SimulateArgs),
    /// Decode a trace offline; scores it when ground truth is present.
    Replay(replay::ReplayArgs),
    /// Closed-loop video runs under one or more bitrate policies.
    Endtoend(endtoend::EndtoendArgs),
    /// Accuracy and timing tables for a run directory.
    Report(replay::ReportArgs),
    /// Serve live capacity samples to RTSP-subscribed clients.
    TelemetryServe(serve::TelemetryServeArgs),
    /// Subscribe to a telemetry server and print samples.
    TelemetrySubscribe(serve::TelemetrySubscribeArgs),
    /// Answer nearest-server lookups from a registry file.
    DirectoryServe(serve::DirectoryServeArgs),
    /// Ask a directory server for the servers nearest a location.
    DirectoryQuery(DirectoryQueryArgs),
    /// Print the typed summary of a SIB 1 or MSG 4 document.
    ParseConfig(inspect::ParseConfigArgs),
    /// Transport block size for explicit inputs or a DCI listing.
    Tbs(inspect::TbsArgs),
}

#[derive(Args)]
struct DirectoryQueryArgs {
    #[arg(long)]
    server: SocketAddr,
    #[arg(long, allow_hyphen_values = true)]
    latitude: f64,
    #[arg(long, allow_hyphen_values = true)]
    longitude: f64,
}

/// Output location shared by the verbs that write a run directory.
#[derive(Args, Clone)]
pub struct OutDir {
    /// Created if missing.
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Command::Simulate(a) => simulate::run(a),
        Command::Replay(a) => replay::run(a),
        Command::Endtoend(a) => endtoend::run(a),
        Command::Report(a) => replay::report(a),
        Command::TelemetryServe(a) => serve::telemetry(a),
        Command::TelemetrySubscribe(a) => serve::subscribe(a),
        Command::DirectoryServe(a) => serve::directory(a),
        Command::DirectoryQuery(a) => serve::query(a.server, a.latitude, a.longitude),
        Command::ParseConfig(a) => inspect::parse_config(a),
        Command::Tbs(a) => inspect::tbs(a),
    }
}
