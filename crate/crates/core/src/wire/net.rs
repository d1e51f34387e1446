//! Sockets around the sans-io pieces: an RTSP server and client over TCP,
//! and the JSON-line directory service.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use parking_lot::Mutex;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc::UnboundedSender;

use super::directory::{answer_line, DirectoryRequest, DirectoryResponse, Registry};
use super::rtsp::{parse_catalog, Method, Role, RtspError, RtspMessage, ServerCore, SessionEvent};
use super::WireError;

/// A session event together with the request that caused it.
#[derive(Debug, Clone)]
pub struct ConnEvent {
    pub conn: u64,
    pub peer: SocketAddr,
    pub request: RtspMessage,
    pub event: SessionEvent,
}

const MAX_MESSAGE: usize = 64 * 1024;

/// Accepts RTSP connections until the listener fails.
pub async fn serve_rtsp(listener: TcpListener, core: Arc<Mutex<ServerCore>>, events: Option<UnboundedSender<ConnEvent>>) -> Result<(), WireError> {
    let mut next_conn = 0u64;
    loop {
        let (stream, peer) = listener.accept().await?;
        next_conn += 1;
        let conn = next_conn;
        core.lock().open(conn);
        let (core, events) = (core.clone(), events.clone());
        tokio::spawn(async move {
            let _ = rtsp_connection(stream, peer, conn, &core, events.as_ref()).await;
            core.lock().close(conn);
        });
    }
}

async fn rtsp_connection(
    mut stream: TcpStream,
    peer: SocketAddr,
    conn: u64,
    core: &Mutex<ServerCore>,
    events: Option<&UnboundedSender<ConnEvent>>,
) -> Result<(), WireError> {
    let mut buf = Vec::with_capacity(4096);
    let mut chunk = [0u8; 4096];
    loop {
        loop {
            let (msg, used) = match RtspMessage::parse(&buf) {
                Ok(Some(x)) => x,
                Ok(None) => break,
                Err(e) => {
                    let resp = RtspMessage::response(400, None).with_header("X-Error", e.to_string());
                    stream.write_all(&resp.to_bytes()).await?;
                    return Err(e.into());
                }
            };
            buf.drain(..used);
            let (resp, event) = core.lock().handle(conn, &msg);
            stream.write_all(&resp.to_bytes()).await?;
            if let (Some(tx), Some(event)) = (events, event) {
                let _ = tx.send(ConnEvent { conn, peer, request: msg, event });
            }
        }
        if buf.len() > MAX_MESSAGE {
            return Err(RtspError::MalformedMessage("message too large".into()).into());
        }
        let n = stream.read(&mut chunk).await?;
        if n == 0 {
            return Ok(());
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}

pub struct RtspClient {
    stream: TcpStream,
    buf: Vec<u8>,
    cseq: u32,
    session: Option<String>,
}

impl RtspClient {
    pub async fn connect(addr: impl tokio::net::ToSocketAddrs) -> Result<Self, WireError> {
        Ok(Self { stream: TcpStream::connect(addr).await?, buf: Vec::new(), cseq: 0, session: None })
    }

    pub fn session(&self) -> Option<&str> {
        self.session.as_deref()
    }

    /// Sends one request and waits for its response.
    pub async fn request(&mut self, method: Method, uri: &str, headers: &[(&str, String)]) -> Result<RtspMessage, WireError> {
        self.cseq += 1;
        let mut req = RtspMessage::request(method, uri, self.cseq);
        if let Some(s) = &self.session {
            req = req.with_header("Session", s.clone());
        }
        for (k, v) in headers {
            req = req.with_header(k, v.clone());
        }
        self.stream.write_all(&req.to_bytes()).await?;
        let mut chunk = [0u8; 4096];
        loop {
            if let Some((resp, used)) = RtspMessage::parse(&self.buf)? {
                self.buf.drain(..used);
                if let Some(s) = resp.header("Session") {
                    self.session = Some(s.to_string());
                }
                return Ok(resp);
            }
            let n = self.stream.read(&mut chunk).await?;
            if n == 0 {
                return Err(std::io::Error::from(std::io::ErrorKind::UnexpectedEof).into());
            }
            self.buf.extend_from_slice(&chunk[..n]);
        }
    }

    /// OPTIONS, DESCRIBE, SETUP for each stream, then PLAY. Returns the server port per stream.
    pub async fn handshake(&mut self, role: Role, streams: &[&str], extra: &[(&str, String)]) -> Result<BTreeMap<String, u16>, WireError> {
        let mut headers = vec![(Role::HEADER, role.token().to_string())];
        headers.extend(extra.iter().cloned());
        expect_ok(self.request(Method::Options, "*", &headers).await?)?;
        let described = expect_ok(self.request(Method::Describe, "rtsp://ranscope/", &headers).await?)?;
        let catalog = parse_catalog(&described.body);
        let mut ports = BTreeMap::new();
        for s in streams {
            if !catalog.iter().any(|c| c == s) {
                return Err(RtspError::UnknownStream(s.to_string()).into());
            }
            let resp = expect_ok(self.request(Method::Setup, &format!("rtsp://ranscope/streamid={s}"), &headers).await?)?;
            let port = resp
                .header("Transport")
                .and_then(|t| t.split(';').find_map(|p| p.trim().strip_prefix("server_port=")))
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| RtspError::MalformedMessage("SETUP reply without server_port".into()))?;
            ports.insert(s.to_string(), port);
        }
        expect_ok(self.request(Method::Play, "rtsp://ranscope/", &headers).await?)?;
        Ok(ports)
    }
}

fn expect_ok(resp: RtspMessage) -> Result<RtspMessage, WireError> {
    match resp.status() {
        Some(200) => Ok(resp),
        Some(code) => {
            let why = resp.header("X-Error").unwrap_or("").to_string();
            Err(RtspError::MalformedMessage(format!("server answered {code} {why}")).into())
        }
        None => Err(RtspError::MalformedMessage("expected a response".into()).into()),
    }
}

/// Answers directory lookups, one JSON request per line.
pub async fn serve_directory(listener: TcpListener, registry: Arc<Registry>) -> Result<(), WireError> {
    loop {
        let (stream, _) = listener.accept().await?;
        let registry = registry.clone();
        tokio::spawn(async move {
            let (rd, mut wr) = stream.into_split();
            let mut lines = BufReader::new(rd).lines();
            while let Ok(Some(line)) = lines.next_line().await {
                if line.trim().is_empty() {
                    continue;
                }
                let mut out = answer_line(&registry, &line);
                out.push('\n');
                if wr.write_all(out.as_bytes()).await.is_err() {
                    break;
                }
            }
        });
    }
}

pub async fn query_directory(addr: impl tokio::net::ToSocketAddrs, req: DirectoryRequest) -> Result<DirectoryResponse, WireError> {
    let stream = TcpStream::connect(addr).await?;
    let (rd, mut wr) = stream.into_split();
    let mut line = serde_json::to_string(&req).expect("request serializes");
    line.push('\n');
    wr.write_all(line.as_bytes()).await?;
    let mut reply = String::new();
    BufReader::new(rd).read_line(&mut reply).await?;
    serde_json::from_str(&reply).map_err(|e| WireError::Registry(format!("bad directory reply: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::directory::RegistryEntry;

    #[tokio::test]
    async fn handshake_over_tcp() {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let core = Arc::new(Mutex::new(ServerCore::new(48000)));
        let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel();
        tokio::spawn(serve_rtsp(listener, core, Some(tx)));

        let mut c = RtspClient::connect(addr).await.unwrap();
        let ports = c.handshake(Role::Telemetry, &["feedback"], &[("X-Rnti", "4296".into())]).await.unwrap();
        assert_eq!(ports["feedback"], 48000);
        let setup = rx.recv().await.unwrap();
        assert!(matches!(setup.event, SessionEvent::StreamSetUp { port: 48000, .. }));
        assert_eq!(setup.request.header("X-Rnti"), Some("4296"));
        let play = rx.recv().await.unwrap();
        assert!(matches!(play.event, SessionEvent::Playing { .. }));

        let mut other = RtspClient::connect(addr).await.unwrap();
        let r = other.request(Method::Play, "rtsp://ranscope/", &[]).await.unwrap();
        assert_eq!(r.status(), Some(455));
        let r = other.request(Method::Other("TEARDOWN".into()), "rtsp://ranscope/", &[]).await.unwrap();
        assert_eq!(r.status(), Some(501));
    }

    #[tokio::test]
    async fn directory_round_trip() {
        let reg = Registry {
            servers: vec![
                RegistryEntry { name: "a".into(), host: "far".into(), port: 1, latitude: 0.0, longitude: 10.0 },
                RegistryEntry { name: "b".into(), host: "near".into(), port: 2, latitude: 0.0, longitude: 1.0 },
            ],
        };
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(serve_directory(listener, Arc::new(reg)));
        let r = query_directory(addr, DirectoryRequest { latitude: 0.0, longitude: 0.0 }).await.unwrap();
        assert_eq!(r.servers.iter().map(|s| s.host.as_str()).collect::<Vec<_>>(), ["near", "far"]);
        let bad = query_directory(addr, DirectoryRequest { latitude: 0.0, longitude: 200.0 }).await.unwrap();
        assert!(bad.error.is_some());
    }
}
