//! RTSP subset used to set up game streams and the telemetry feedback stream.
//!
//! Messages are parsed incrementally from a byte buffer. [`ServerCore`] holds
//! one [`Session`] per connection, so a telemetry server's handshake can run
//! interleaved with a client's.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RTSP_VERSION: &str = "RTSP/1.0";
const MAX_HEAD: usize = 8192;

/// Methods this server advertises, in the spelling clients expect to see.
pub const PUBLIC_METHODS: &str = "DESCRIBE, SETUP, ANNOUNC, PLAY";

/// Streams offered by DESCRIBE.
pub const CATALOG: [&str; 4] = ["video", "audio", "control", "feedback"];
pub const FEEDBACK_STREAM: &str = "feedback";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RtspError {
    #[error("method {0} is not supported")]
    UnsupportedMethod(String),
    #[error("{method} is not valid in state {state}")]
    OutOfOrderMethod { method: Method, state: SessionState },
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("no stream named `{0}`")]
    UnknownStream(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Method {
    Options,
    Describe,
    Setup,
    Announce,
    Play,
    Other(String),
}

impl Method {
    pub const SUPPORTED: [Method; 5] = [Method::Options, Method::Describe, Method::Setup, Method::Announce, Method::Play];

    pub fn parse(token: &str) -> Self {
        match token {
            "OPTIONS" | "OPTION" => Self::Options,
            "DESCRIBE" => Self::Describe,
            "SETUP" => Self::Setup,
            "ANNOUNCE" | "ANNOUNC" => Self::Announce,
            "PLAY" => Self::Play,
            other => Self::Other(other.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Self::Options => "OPTIONS",
            Self::Describe => "DESCRIBE",
            Self::Setup => "SETUP",
            Self::Announce => "ANNOUNCE",
            Self::Play => "PLAY",
            Self::Other(s) => s,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StartLine {
    Request { method: Method, uri: String },
    Response { status: u16, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RtspMessage {
    pub start: StartLine,
    /// Header names keep their spelling; lookups ignore case.
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl RtspMessage {
    pub fn request(method: Method, uri: impl Into<String>, cseq: u32) -> Self {
        Self { start: StartLine::Request { method, uri: uri.into() }, headers: vec![("CSeq".into(), cseq.to_string())], body: String::new() }
    }

    pub fn response(status: u16, cseq: Option<u32>) -> Self {
        let mut m = Self { start: StartLine::Response { status, reason: reason_phrase(status).into() }, headers: vec![], body: String::new() };
        if let Some(c) = cseq {
            m.headers.push(("CSeq".into(), c.to_string()));
        }
        m
    }

    pub fn with_header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }

    pub fn with_body(mut self, content_type: &str, body: impl Into<String>) -> Self {
        self.body = body.into();
        self.with_header("Content-Type", content_type)
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn cseq(&self) -> Option<u32> {
        self.header("CSeq")?.trim().parse().ok()
    }

    pub fn status(&self) -> Option<u16> {
        match self.start {
            StartLine::Response { status, .. } => Some(status),
            StartLine::Request { .. } => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut s = match &self.start {
            StartLine::Request { method, uri } => format!("{method} {uri} {RTSP_VERSION}\r\n"),
            StartLine::Response { status, reason } => format!("{RTSP_VERSION} {status} {reason}\r\n"),
        };
        for (k, v) in &self.headers {
            if !k.eq_ignore_ascii_case("Content-Length") {
                s.push_str(&format!("{k}: {v}\r\n"));
            }
        }
        if !self.body.is_empty() {
            s.push_str(&format!("Content-Length: {}\r\n", self.body.len()));
        }
        s.push_str("\r\n");
        s.push_str(&self.body);
        s.into_bytes()
    }

    /// Parses one message from the front of `buf`. `Ok(None)` means more
    /// bytes are needed; on success the consumed length is returned too.
    pub fn parse(buf: &[u8]) -> Result<Option<(Self, usize)>, RtspError> {
        let Some(head_end) = buf.windows(4).position(|w| w == b"\r\n\r\n") else {
            if buf.len() > MAX_HEAD {
                return Err(RtspError::MalformedMessage("header block too large".into()));
            }
            return Ok(None);
        };
        let head = std::str::from_utf8(&buf[..head_end]).map_err(|_| RtspError::MalformedMessage("header is not UTF-8".into()))?;
        let mut lines = head.split("\r\n");
        let first = lines.next().unwrap_or_default();
        let parts: Vec<&str> = first.split(' ').collect();
        let start = if first.starts_with("RTSP/") {
            if parts.len() < 2 || parts[0] != RTSP_VERSION {
                return Err(RtspError::MalformedMessage(format!("status line `{first}`")));
            }
            let status = parts[1].parse().map_err(|_| RtspError::MalformedMessage(format!("status `{}`", parts[1])))?;
            StartLine::Response { status, reason: parts[2..].join(" ") }
        } else {
            if parts.len() != 3 || parts[2] != RTSP_VERSION || parts[0].is_empty() {
                return Err(RtspError::MalformedMessage(format!("request line `{first}`")));
            }
            StartLine::Request { method: Method::parse(parts[0]), uri: parts[1].to_string() }
        };
        let mut headers = Vec::new();
        for line in lines {
            let (k, v) = line.split_once(':').ok_or_else(|| RtspError::MalformedMessage(format!("header `{line}`")))?;
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
        let msg = Self { start, headers, body: String::new() };
        let len: usize = match msg.header("Content-Length") {
            Some(v) => v.parse().map_err(|_| RtspError::MalformedMessage(format!("Content-Length `{v}`")))?,
            None => 0,
        };
        let total = head_end + 4 + len;
        if buf.len() < total {
            return Ok(None);
        }
        let body = std::str::from_utf8(&buf[head_end + 4..total]).map_err(|_| RtspError::MalformedMessage("body is not UTF-8".into()))?;
        Ok(Some((Self { body: body.to_string(), ..msg }, total)))
    }
}

pub fn reason_phrase(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        455 => "Method Not Valid in This State",
        501 => "Not Implemented",
        _ => "Unknown",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Init,
    Described,
    Ready,
    Announced,
    Playing,
}

impl SessionState {
    pub const ALL: [SessionState; 5] = [Self::Init, Self::Described, Self::Ready, Self::Announced, Self::Playing];
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Init => "init",
            Self::Described => "described",
            Self::Ready => "ready",
            Self::Announced => "announced",
            Self::Playing => "playing",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Client,
    Telemetry,
}

impl Role {
    pub const HEADER: &'static str = "X-Role";

    pub fn token(self) -> &'static str {
        match self {
            Self::Client => "client",
            Self::Telemetry => "telemetry",
        }
    }
}

/// The stream a SETUP URI names: the text after `streamid=`, or the last path segment.
pub fn stream_of(uri: &str) -> &str {
    match uri.rsplit_once("streamid=") {
        Some((_, s)) => s,
        None => uri.rsplit('/').next().unwrap_or(uri),
    }
}

pub fn describe_body() -> String {
    let mut s = String::from("v=0\r\no=- 0 0 IN IP4 0.0.0.0\r\ns=ranscope\r\n");
    for name in CATALOG {
        let media = match name {
            "video" => "video",
            "audio" => "audio",
            _ => "application",
        };
        s.push_str(&format!("m={media} 0 RTP/AVP 96\r\na=control:streamid={name}\r\n"));
    }
    s
}

/// Stream names found in a DESCRIBE body.
pub fn parse_catalog(body: &str) -> Vec<String> {
    body.lines().filter_map(|l| l.trim().strip_prefix("a=control:streamid=")).map(str::to_string).collect()
}

/// What a server side event means for the embedding runtime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionEvent {
    StreamSetUp { stream: String, port: u16 },
    Playing { streams: BTreeMap<String, u16> },
}

/// Per-connection handshake state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: String,
    pub role: Role,
    pub state: SessionState,
    pub streams: BTreeMap<String, u16>,
}

impl Session {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), role: Role::Client, state: SessionState::Init, streams: BTreeMap::new() }
    }

    /// Applies one request. `alloc_port` is called once per newly set up stream.
    pub fn handle(&mut self, req: &RtspMessage, alloc_port: &mut dyn FnMut(&str) -> u16) -> Result<(RtspMessage, Option<SessionEvent>), RtspError> {
        let StartLine::Request { method, uri } = &req.start else {
            return Err(RtspError::MalformedMessage("expected a request".into()));
        };
        let cseq = req.cseq().ok_or_else(|| RtspError::MalformedMessage("missing CSeq".into()))?;
        if req.header(Role::HEADER).is_some_and(|r| r.eq_ignore_ascii_case("telemetry")) {
            self.role = Role::Telemetry;
        }
        let ok = RtspMessage::response(200, Some(cseq));
        let out_of_order = || RtspError::OutOfOrderMethod { method: method.clone(), state: self.state };
        match method {
            Method::Options => Ok((ok.with_header("Public", PUBLIC_METHODS), None)),
            Method::Describe => {
                if self.state == SessionState::Init {
                    self.state = SessionState::Described;
                }
                Ok((ok.with_body("application/sdp", describe_body()), None))
            }
            Method::Setup => {
                if self.state == SessionState::Init {
                    return Err(out_of_order());
                }
                let stream = stream_of(uri);
                if !CATALOG.contains(&stream) {
                    return Err(RtspError::UnknownStream(stream.to_string()));
                }
                let port = match self.streams.get(stream) {
                    Some(&p) => p,
                    None => {
                        let p = alloc_port(stream);
                        self.streams.insert(stream.to_string(), p);
                        p
                    }
                };
                self.state = self.state.max(SessionState::Ready);
                let resp = ok.with_header("Session", self.id.clone()).with_header("Transport", format!("server_port={port}"));
                Ok((resp, Some(SessionEvent::StreamSetUp { stream: stream.to_string(), port })))
            }
            Method::Announce => {
                if self.state < SessionState::Ready {
                    return Err(out_of_order());
                }
                self.state = self.state.max(SessionState::Announced);
                Ok((ok.with_header("Session", self.id.clone()), None))
            }
            Method::Play => {
                if self.state < SessionState::Ready {
                    return Err(out_of_order());
                }
                let event = (self.state != SessionState::Playing).then(|| SessionEvent::Playing { streams: self.streams.clone() });
                self.state = SessionState::Playing;
                Ok((ok.with_header("Session", self.id.clone()), event))
            }
            Method::Other(m) => Err(RtspError::UnsupportedMethod(m.clone())),
        }
    }
}

pub fn error_status(e: &RtspError) -> u16 {
    match e {
        RtspError::UnsupportedMethod(_) => 501,
        RtspError::OutOfOrderMethod { .. } => 455,
        RtspError::MalformedMessage(_) => 400,
        RtspError::UnknownStream(_) => 404,
    }
}

/// Sessions keyed by connection id, plus the port allocator they share.
pub struct ServerCore {
    sessions: BTreeMap<u64, Session>,
    next_session: u64,
    alloc_port: Box<dyn FnMut(&str) -> u16 + Send>,
}

impl ServerCore {
    /// Ports are handed out sequentially from `base_port`.
    pub fn new(base_port: u16) -> Self {
        let mut next = base_port;
        Self::with_allocator(Box::new(move |_| {
            let p = next;
            next = next.wrapping_add(1);
            p
        }))
    }

    pub fn with_allocator(alloc_port: Box<dyn FnMut(&str) -> u16 + Send>) -> Self {
        Self { sessions: BTreeMap::new(), next_session: 1, alloc_port }
    }

    pub fn open(&mut self, conn: u64) {
        let id = format!("{:08X}", self.next_session);
        self.next_session += 1;
        self.sessions.insert(conn, Session::new(id));
    }

    pub fn close(&mut self, conn: u64) -> Option<Session> {
        self.sessions.remove(&conn)
    }

    pub fn session(&self, conn: u64) -> Option<&Session> {
        self.sessions.get(&conn)
    }

    pub fn sessions(&self) -> impl Iterator<Item = (&u64, &Session)> {
        self.sessions.iter()
    }

    /// Always produces a response; errors become RTSP status codes.
    pub fn handle(&mut self, conn: u64, req: &RtspMessage) -> (RtspMessage, Option<SessionEvent>) {
        if !self.sessions.contains_key(&conn) {
            self.open(conn);
        }
        let session = self.sessions.get_mut(&conn).expect("opened");
        match session.handle(req, &mut *self.alloc_port) {
            Ok(r) => r,
            Err(e) => {
                let resp = RtspMessage::response(error_status(&e), req.cseq()).with_header("X-Error", e.to_string());
                (resp, None)
            }
        }
    }
}
