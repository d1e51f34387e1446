//! Fan-out of telemetry samples to subscribers over UDP.
//!
//! One thread ticks on absolute deadlines, so jitter in a single wakeup does
//! not accumulate. Each tick sends the latest sample of every subscribed UE
//! to its subscriber. A subscriber whose sends keep failing is dropped once it
//! exceeds the retry budget.

use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use super::{encode_sample, WireError};
use crate::capacity::TelemetryBoard;
use crate::dci::Rnti;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamConfig {
    pub cadence: Duration,
    /// Failed sends tolerated before a subscriber is dropped. The count only
    /// clears after this many sends in a row succeed, since a refused UDP port
    /// reports on every other send.
    pub retry_budget: u32,
    /// Sleep until this close to a deadline, then spin.
    pub spin: Duration,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self { cadence: Duration::from_micros(500), retry_budget: 8, spin: Duration::from_micros(60) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamEvent {
    SubscriberGone { id: u64, addr: SocketAddr, rnti: Rnti },
}

struct Subscriber {
    id: u64,
    rnti: Rnti,
    addr: SocketAddr,
    socket: UdpSocket,
    failures: u32,
    clean: u32,
}

/// Handle to a running streamer thread.
pub struct Streamer {
    subs: Arc<Mutex<Vec<Subscriber>>>,
    stop: Arc<AtomicBool>,
    sent: Arc<AtomicU64>,
    next_id: u64,
    events: Receiver<StreamEvent>,
    thread: Option<JoinHandle<()>>,
}

impl Streamer {
    pub fn start(board: Arc<TelemetryBoard>, cfg: StreamConfig) -> Self {
        let subs: Arc<Mutex<Vec<Subscriber>>> = Arc::default();
        let stop = Arc::new(AtomicBool::new(false));
        let sent = Arc::new(AtomicU64::new(0));
        let (tx, rx) = channel();
        let thread = {
            let (subs, stop, sent) = (subs.clone(), stop.clone(), sent.clone());
            std::thread::Builder::new()
                .name("telemetry-stream".into())
                .spawn(move || run(board, cfg, subs, stop, sent, tx))
                .expect("spawn streamer")
        };
        Self { subs, stop, sent, next_id: 1, events: rx, thread: Some(thread) }
    }

    /// Starts sending `rnti`'s samples to `addr`.
    pub fn subscribe(&mut self, rnti: Rnti, addr: SocketAddr) -> Result<u64, WireError> {
        let bind: SocketAddr = if addr.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().expect("literal");
        let socket = UdpSocket::bind(bind)?;
        socket.connect(addr)?;
        socket.set_nonblocking(true)?;
        let id = self.next_id;
        self.next_id += 1;
        self.subs.lock().push(Subscriber { id, rnti, addr, socket, failures: 0, clean: 0 });
        Ok(id)
    }

    pub fn unsubscribe(&self, id: u64) -> bool {
        let mut subs = self.subs.lock();
        let before = subs.len();
        subs.retain(|s| s.id != id);
        subs.len() != before
    }

    pub fn subscriber_count(&self) -> usize {
        self.subs.lock().len()
    }

    pub fn datagrams_sent(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }

    pub fn events(&self) -> &Receiver<StreamEvent> {
        &self.events
    }

    pub fn stop(mut self) -> u64 {
        self.shutdown();
        self.datagrams_sent()
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Streamer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn wait_until(deadline: Instant, spin: Duration) {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let left = deadline - now;
        if left > spin {
            std::thread::sleep(left - spin);
        } else {
            std::hint::spin_loop();
        }
    }
}

fn run(board: Arc<TelemetryBoard>, cfg: StreamConfig, subs: Arc<Mutex<Vec<Subscriber>>>, stop: Arc<AtomicBool>, sent: Arc<AtomicU64>, events: Sender<StreamEvent>) {
    let mut deadline = Instant::now();
    while !stop.load(Ordering::Relaxed) {
        deadline += cfg.cadence;
        let now = Instant::now();
        if now > deadline + cfg.cadence * 4 {
            // fell far behind; resynchronise instead of bursting
            deadline = now;
        }
        wait_until(deadline, cfg.spin);
        let snapshot = board.snapshot();
        let mut guard = subs.lock();
        guard.retain_mut(|s| {
            let Some(sample) = snapshot.get(&s.rnti) else { return true };
            match s.socket.send(&encode_sample(sample)) {
                Ok(_) => {
                    s.clean += 1;
                    if s.clean >= cfg.retry_budget.max(1) {
                        s.failures = 0;
                    }
                    sent.fetch_add(1, Ordering::Relaxed);
                    true
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => true,
                Err(_) => {
                    s.clean = 0;
                    s.failures += 1;
                    if s.failures > cfg.retry_budget {
                        let _ = events.send(StreamEvent::SubscriberGone { id: s.id, addr: s.addr, rnti: s.rnti });
                        false
                    } else {
                        true
                    }
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::TelemetrySample;
    use crate::wire::decode_sample;

    fn board(rnti: Rnti, s: TelemetrySample) -> Arc<TelemetryBoard> {
        let b = Arc::new(TelemetryBoard::new());
        b.publish([(rnti, s)]);
        b
    }

    #[test]
    fn fan_out_to_two_subscribers() {
        let s = TelemetrySample { tti: 9, b_alloc: 6_480_000, b_spare: 0 };
        let b = board(Rnti(0x4296), s);
        let rx1 = UdpSocket::bind("127.0.0.1:0").unwrap();
        let rx2 = UdpSocket::bind("127.0.0.1:0").unwrap();
        for r in [&rx1, &rx2] {
            r.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        }
        let mut st = Streamer::start(b, StreamConfig::default());
        st.subscribe(Rnti(0x4296), rx1.local_addr().unwrap()).unwrap();
        st.subscribe(Rnti(0x4296), rx2.local_addr().unwrap()).unwrap();
        let mut buf = [0u8; 64];
        for _ in 0..20 {
            for r in [&rx1, &rx2] {
                let n = r.recv(&mut buf).unwrap();
                assert_eq!(decode_sample(&buf[..n]).unwrap(), s);
            }
        }
        assert!(st.stop() >= 40);
    }

    #[test]
    fn gone_subscriber_is_dropped() {
        let b = board(Rnti(1), TelemetrySample { tti: 1, b_alloc: 1, b_spare: 1 });
        let addr = {
            let tmp = UdpSocket::bind("127.0.0.1:0").unwrap();
            tmp.local_addr().unwrap()
        };
        let mut st = Streamer::start(b, StreamConfig { retry_budget: 2, ..Default::default() });
        let id = st.subscribe(Rnti(1), addr).unwrap();
        let ev = st.events().recv_timeout(Duration::from_secs(5)).unwrap();
        assert_eq!(ev, StreamEvent::SubscriberGone { id, addr, rnti: Rnti(1) });
        assert_eq!(st.subscriber_count(), 0);
        assert!(!st.unsubscribe(id));
    }
}
