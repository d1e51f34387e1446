use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::Args;
use parking_lot::Mutex;
use serde_json::json;
use tokio::net::{TcpListener, UdpSocket};

use ranscope::capacity::{EstimatorConfig, TelemetryBoard};
use ranscope::dci::trace::{TraceHeader, TraceRecord};
use ranscope::dci::Rnti;
use ranscope::pipeline::{Observer, ObserverStats};
use ranscope::rrc::parse_sib1;
use ranscope::sim::{SimConfig, Simulator};
use ranscope::wire::net::{query_directory, serve_directory, serve_rtsp, ConnEvent, RtspClient};
use ranscope::wire::rtsp::{Role, SessionEvent, FEEDBACK_STREAM};
use ranscope::wire::{decode_sample, DirectoryRequest, Registry, ServerCore, StreamConfig, StreamEvent, Streamer, SAMPLE_BYTES};

use crate::replay::load_msg4_dir;
use crate::rundir::RunDir;

pub const RNTI_HEADER: &str = "X-Rnti";

pub fn parse_rnti(s: &str) -> Result<Rnti> {
    let hex = s.trim().trim_start_matches("0x").trim_start_matches("0X");
    Ok(Rnti(u16::from_str_radix(hex, 16).with_context(|| format!("bad RNTI `{s}`"))?))
}

/// `client_port=N` from a Transport header; the first port of a range.
pub fn client_port(transport: &str) -> Option<u16> {
    transport
        .split(';')
        .find_map(|p| p.trim().strip_prefix("client_port="))
        .and_then(|p| p.split('-').next())
        .and_then(|p| p.parse().ok())
}

#[derive(Args)]
pub struct TelemetryServeArgs {
    /// SIB 1 of the observed cell. Required unless `--sim` is given.
    #[arg(long)]
    cell_config: Option<PathBuf>,
    #[arg(long, default_value = "0.0.0.0:8554")]
    listen: String,
    /// Drive the estimator from a live simulator.
    #[arg(long, conflicts_with = "trace")]
    sim: Option<PathBuf>,
    /// DCI trace to replay in real time; `-` streams lines from stdin as they arrive.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// MSG 4 documents by RNTI, for trace input.
    #[arg(long)]
    msg4_dir: Option<PathBuf>,
    /// Stop after this many seconds; runs until Ctrl-C or end of input otherwise.
    #[arg(long)]
    duration_s: Option<f64>,
    /// First server port handed out in SETUP replies.
    #[arg(long, default_value_t = 50_000)]
    base_port: u16,
    #[arg(long, default_value_t = 500)]
    cadence_us: u64,
    #[arg(long, default_value_t = 100)]
    window_ms: u32,
    /// Where to write the manifest.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

enum Source {
    Sim(Box<Simulator>),
    /// Trace lines; paced to the TTI clock when `paced`.
    Lines { reader: Box<dyn BufRead + Send>, paced: bool },
}

struct Feed {
    observer: Observer,
    board: Arc<TelemetryBoard>,
    stop: Arc<AtomicBool>,
    tti_us: u64,
    started: Option<(Instant, u64)>,
}

impl Feed {
    fn pace(&mut self, tti: u64) {
        let (t0, first) = *self.started.get_or_insert((Instant::now(), tti));
        let deadline = t0 + Duration::from_micros((tti - first) * self.tti_us);
        let now = Instant::now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
    }

    fn tti(&mut self, tti: u64, records: &[TraceRecord]) -> Result<()> {
        self.observer.process_tti(tti, records)?;
        self.board.publish(self.observer.samples());
        Ok(())
    }

    /// Empty TTIs up to but excluding `until`.
    fn gap(&mut self, until: u64, paced: bool) -> Result<()> {
        let mut t = self.observer.last_tti().map_or(until, |l| l + 1);
        while t < until && !self.stop.load(Ordering::Relaxed) {
            if paced {
                self.pace(t);
            }
            self.tti(t, &[])?;
            t += 1;
        }
        Ok(())
    }

    fn run(mut self, source: Source) -> Result<ObserverStats> {
        match source {
            Source::Sim(mut sim) => {
                while !self.stop.load(Ordering::Relaxed) {
                    let slot = sim.step()?;
                    self.pace(slot.tti);
                    self.tti(slot.tti, &slot.observed)?;
                }
            }
            Source::Lines { reader, paced } => {
                let mut pending: Option<(u64, Vec<TraceRecord>)> = None;
                let mut end = None;
                for line in reader.lines() {
                    if self.stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let line = line?;
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    if line.starts_with('#') {
                        if let Some(h) = TraceHeader::parse_line(line) {
                            end = Some(h.end_tti);
                        }
                        continue;
                    }
                    let rec = TraceRecord::parse_line(line).map_err(|e| anyhow::anyhow!("trace line `{line}`: {e}"))?;
                    match &mut pending {
                        Some((t, recs)) if *t == rec.tti => recs.push(rec),
                        _ => {
                            if let Some((t, recs)) = pending.take() {
                                self.flush(t, &recs, paced)?;
                            }
                            pending = Some((rec.tti, vec![rec]));
                        }
                    }
                }
                if let Some((t, recs)) = pending.take() {
                    self.flush(t, &recs, paced)?;
                }
                if let Some(end) = end {
                    self.gap(end, paced)?;
                }
            }
        }
        Ok(self.observer.stats())
    }

    fn flush(&mut self, tti: u64, recs: &[TraceRecord], paced: bool) -> Result<()> {
        self.gap(tti, paced)?;
        if paced {
            self.pace(tti);
        }
        self.tti(tti, recs)
    }
}

fn build_source(a: &TelemetryServeArgs) -> Result<(Source, Observer, u64)> {
    let estimator = EstimatorConfig { window_ms: a.window_ms, ..Default::default() };
    if let Some(path) = &a.sim {
        let cfg = SimConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
        cfg.validate()?;
        let sim = Simulator::new(cfg)?;
        let obs = Observer::new(sim.cell().clone(), sim.msg4_docs(), estimator);
        let tti_us = sim.cell().subcarrier_spacing.tti_duration_us() as u64;
        return Ok((Source::Sim(Box::new(sim)), obs, tti_us));
    }
    let Some(trace) = &a.trace else { bail!("give --sim, or --trace with --cell-config and --msg4-dir") };
    let cell_path = a.cell_config.as_ref().context("--cell-config is required with --trace")?;
    let msg4 = a.msg4_dir.as_ref().context("--msg4-dir is required with --trace")?;
    let cell = parse_sib1(&std::fs::read_to_string(cell_path)?)?;
    let tti_us = cell.subcarrier_spacing.tti_duration_us() as u64;
    let obs = Observer::new(cell, load_msg4_dir(msg4)?, estimator);
    let source = if trace.as_os_str() == "-" {
        Source::Lines { reader: Box::new(BufReader::new(std::io::stdin())), paced: false }
    } else {
        let f = std::fs::File::open(trace).with_context(|| format!("opening {}", trace.display()))?;
        Source::Lines { reader: Box::new(BufReader::new(f)), paced: true }
    };
    Ok((source, obs, tti_us))
}

#[derive(Default)]
struct Pending {
    rnti: Option<Rnti>,
    port: Option<u16>,
}

pub fn telemetry(a: TelemetryServeArgs) -> Result<()> {
    let (source, observer, tti_us) = build_source(&a)?;
    let board = Arc::new(TelemetryBoard::new());
    let stop = Arc::new(AtomicBool::new(false));
    let rt = tokio::runtime::Runtime::new()?;
    let started = Instant::now();

    let (stats, sent, subscriptions) = rt.block_on(async {
        let listener = TcpListener::bind(&a.listen).await.with_context(|| format!("binding {}", a.listen))?;
        eprintln!("telemetry server on {}", listener.local_addr()?);
        let core = Arc::new(Mutex::new(ServerCore::new(a.base_port)));
        let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel::<ConnEvent>();
        tokio::spawn(serve_rtsp(listener, core, Some(tx)));

        let mut streamer = Streamer::start(board.clone(), StreamConfig { cadence: Duration::from_micros(a.cadence_us), ..Default::default() });
        let feed = Feed { observer, board: board.clone(), stop: stop.clone(), tti_us, started: None };
        let mut feeder = tokio::task::spawn_blocking(move || feed.run(source));

        let deadline = a.duration_s.map(|s| tokio::time::Instant::now() + Duration::from_secs_f64(s));
        let mut pending: HashMap<u64, Pending> = HashMap::new();
        let mut subscriptions = 0u64;
        let mut housekeeping = tokio::time::interval(Duration::from_millis(250));
        let stats = loop {
            tokio::select! {
                done = &mut feeder => {
                    eprintln!("input exhausted");
                    break done??;
                }
                _ = tokio::signal::ctrl_c() => break stop_feeder(&stop, feeder).await?,
                _ = sleep_until(deadline) => break stop_feeder(&stop, feeder).await?,
                _ = housekeeping.tick() => {
                    while let Ok(StreamEvent::SubscriberGone { id, addr, rnti }) = streamer.events().try_recv() {
                        eprintln!("subscriber {id} ({rnti} -> {addr}) dropped");
                    }
                }
                Some(ev) = rx.recv() => {
                    match &ev.event {
                        SessionEvent::StreamSetUp { stream, port } if stream == FEEDBACK_STREAM => {
                            let p = pending.entry(ev.conn).or_default();
                            p.rnti = ev.request.header(RNTI_HEADER).and_then(|r| parse_rnti(r).ok()).or(p.rnti);
                            p.port = ev.request.header("Transport").and_then(client_port).or(p.port);
                            eprintln!("{}: feedback set up on server port {port}", ev.peer);
                        }
                        SessionEvent::StreamSetUp { stream, port } => eprintln!("{}: {stream} set up on server port {port}", ev.peer),
                        SessionEvent::Playing { streams } => {
                            let p = pending.remove(&ev.conn).unwrap_or_default();
                            match (streams.contains_key(FEEDBACK_STREAM), p.rnti, p.port) {
                                (true, Some(rnti), Some(port)) => {
                                    let to = SocketAddr::new(ev.peer.ip(), port);
                                    match streamer.subscribe(rnti, to) {
                                        Ok(id) => {
                                            subscriptions += 1;
                                            eprintln!("{}: streaming {rnti} to {to} (subscriber {id})", ev.peer);
                                        }
                                        Err(e) => eprintln!("{}: cannot stream to {to}: {e}", ev.peer),
                                    }
                                }
                                (true, _, _) => eprintln!("{}: feedback playing without {RNTI_HEADER} and client_port; nothing to send", ev.peer),
                                (false, _, _) => eprintln!("{}: playing {:?}", ev.peer, streams.keys().collect::<Vec<_>>()),
                            }
                        }
                    }
                }
            }
        };
        Ok::<_, anyhow::Error>((stats, streamer.stop(), subscriptions))
    })?;

    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "{elapsed:.1} s: {} DCIs accepted, {} UEs registered, {} rejected; {subscriptions} subscriptions, {sent} datagrams sent",
        stats.accepted, stats.registrations, stats.rejected
    );
    if let Some(out) = &a.out_dir {
        let dir = RunDir::create(out)?;
        dir.write_manifest(
            "telemetry-serve",
            None,
            None,
            json!({ "listen": a.listen, "sim": a.sim, "trace": a.trace, "elapsed_s": elapsed, "stats": stats, "subscriptions": subscriptions, "datagrams_sent": sent }),
        )?;
    }
    Ok(())
}

async fn sleep_until(deadline: Option<tokio::time::Instant>) {
    match deadline {
        Some(d) => tokio::time::sleep_until(d).await,
        None => std::future::pending().await,
    }
}

async fn stop_feeder(stop: &AtomicBool, feeder: tokio::task::JoinHandle<Result<ObserverStats>>) -> Result<ObserverStats> {
    stop.store(true, Ordering::Relaxed);
    feeder.await?
}

#[derive(Args)]
pub struct TelemetrySubscribeArgs {
    /// Telemetry server RTSP address.
    #[arg(long)]
    server: String,
    /// UE whose samples to receive, in hex.
    #[arg(long)]
    rnti: String,
    /// Local UDP address for the samples.
    #[arg(long, default_value = "0.0.0.0:0")]
    bind: String,
    /// Stop after this many samples.
    #[arg(long)]
    count: Option<u64>,
    #[arg(long)]
    duration_s: Option<f64>,
    /// Print one sample in this many.
    #[arg(long, default_value_t = 200)]
    print_every: u64,
}

pub fn subscribe(a: TelemetrySubscribeArgs) -> Result<()> {
    let rnti = parse_rnti(&a.rnti)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let sock = UdpSocket::bind(&a.bind).await?;
        let port = sock.local_addr()?.port();
        let mut client = RtspClient::connect(&a.server).await.with_context(|| format!("connecting to {}", a.server))?;
        let extra = [(RNTI_HEADER, rnti.to_string()), ("Transport", format!("RTP/AVP;unicast;client_port={port}"))];
        let ports = client.handshake(Role::Client, &[FEEDBACK_STREAM], &extra).await?;
        eprintln!("session {} playing; server port {:?}; listening on {}", client.session().unwrap_or("?"), ports.get(FEEDBACK_STREAM), sock.local_addr()?);

        let deadline = a.duration_s.map(|s| tokio::time::Instant::now() + Duration::from_secs_f64(s));
        let mut buf = [0u8; 64];
        let (mut n, mut last): (u64, Option<Instant>) = (0, None);
        let mut gaps = Vec::new();
        println!("tti,b_alloc_bps,b_spare_bps");
        loop {
            if a.count.is_some_and(|c| n >= c) {
                break;
            }
            let len = tokio::select! {
                r = sock.recv(&mut buf) => r?,
                _ = sleep_until(deadline) => break,
                _ = tokio::signal::ctrl_c() => break,
            };
            if len != SAMPLE_BYTES {
                eprintln!("ignoring {len}-byte datagram");
                continue;
            }
            let s = decode_sample(&buf[..len])?;
            let now = Instant::now();
            if let Some(prev) = last.replace(now) {
                gaps.push((now - prev).as_secs_f64() * 1e3);
            }
            if n % a.print_every.max(1) == 0 {
                println!("{},{},{}", s.tti, s.b_alloc, s.b_spare);
            }
            n += 1;
        }
        gaps.sort_by(f64::total_cmp);
        let median = gaps.get(gaps.len() / 2).copied().unwrap_or(f64::NAN);
        eprintln!("{n} samples, median inter-arrival {median:.3} ms");
        Ok(())
    })
}

#[derive(Args)]
pub struct DirectoryServeArgs {
    /// Registry TOML with one `[[server]]` table per telemetry server.
    #[arg(long)]
    registry: PathBuf,
    #[arg(long, default_value = "0.0.0.0:8553")]
    listen: String,
}

pub fn directory(a: DirectoryServeArgs) -> Result<()> {
    let registry = Registry::load(&a.registry).with_context(|| format!("loading {}", a.registry.display()))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = TcpListener::bind(&a.listen).await.with_context(|| format!("binding {}", a.listen))?;
        eprintln!("directory of {} servers on {}", registry.servers.len(), listener.local_addr()?);
        tokio::select! {
            r = serve_directory(listener, Arc::new(registry)) => r?,
            _ = tokio::signal::ctrl_c() => {}
        }
        Ok(())
    })
}

pub fn query(server: SocketAddr, latitude: f64, longitude: f64) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    let resp = rt.block_on(query_directory(server, DirectoryRequest { latitude, longitude }))?;
    println!("{}", serde_json::to_string_pretty(&resp)?);
    if let Some(e) = resp.error {
        bail!("directory refused the request: {e}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rnti_and_transport() {
        assert_eq!(parse_rnti("0x4296").unwrap(), Rnti(0x4296));
        assert_eq!(parse_rnti("4296").unwrap(), Rnti(0x4296));
        assert!(parse_rnti("0xZZ").is_err());
        assert_eq!(client_port("RTP/AVP;unicast;client_port=5000-5001"), Some(5000));
        assert_eq!(client_port("RTP/AVP;unicast"), None);
    }
}
