//! Framed message format shared by the registry, service hosts, stubs and
//! the control plane.
//!
//! Every frame is a 4-byte big-endian length followed by a UTF-8 JSON object.
//! The object carries a `"type"` discriminator with the lowercase snake_case
//! variant name, e.g. `{"type":"ack"}`. The length counts payload bytes only.

use std::fmt;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest payload accepted by [`decode_frame`].
pub const MAX_FRAME_LEN: usize = 1024 * 1024;

/// Size of the length prefix.
pub const PREFIX_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("incomplete length prefix: have {0} of 4 bytes")]
    IncompletePrefix(usize),
    #[error("truncated payload: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("frame too large: {0} bytes (max {MAX_FRAME_LEN})")]
    TooLarge(usize),
    #[error("payload is not valid UTF-8")]
    InvalidUtf8,
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EndpointError {
    #[error("endpoint host is empty")]
    EmptyHost,
    #[error("endpoint port must be nonzero")]
    ZeroPort,
    #[error("cannot parse endpoint {0:?}, expected host:port")]
    Parse(String),
}

/// Network address of a listener.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawEndpoint")]
pub struct Endpoint {
    host: String,
    port: u16,
}

#[derive(Deserialize)]
struct RawEndpoint {
    host: String,
    port: u16,
}

impl TryFrom<RawEndpoint> for Endpoint {
    type Error = EndpointError;

    fn try_from(raw: RawEndpoint) -> Result<Self, Self::Error> {
        Endpoint::new(raw.host, raw.port)
    }
}

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Result<Self, EndpointError> {
        let host = host.into();
        if host.is_empty() {
            return Err(EndpointError::EmptyHost);
        }
        if port == 0 {
            return Err(EndpointError::ZeroPort);
        }
        Ok(Endpoint { host, port })
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn port(&self) -> u16 {
        self.port
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

impl std::str::FromStr for Endpoint {
    type Err = EndpointError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (host, port) = s
            .rsplit_once(':')
            .ok_or_else(|| EndpointError::Parse(s.to_string()))?;
        let port: u16 = port
            .parse()
            .map_err(|_| EndpointError::Parse(s.to_string()))?;
        Endpoint::new(host, port)
    }
}

/// A method argument or return value. Only integers and strings cross the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgValue {
    Int(i64),
    Text(String),
}

impl ArgValue {
    pub fn kind(&self) -> ArgKind {
        match self {
            ArgValue::Int(_) => ArgKind::Int,
            ArgValue::Text(_) => ArgKind::Text,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            ArgValue::Int(v) => Some(*v),
            ArgValue::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ArgValue::Text(s) => Some(s),
            ArgValue::Int(_) => None,
        }
    }
}

impl fmt::Display for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgValue::Int(v) => write!(f, "{v}"),
            ArgValue::Text(s) => write!(f, "{s}"),
        }
    }
}

impl From<i64> for ArgValue {
    fn from(v: i64) -> Self {
        ArgValue::Int(v)
    }
}

impl From<&str> for ArgValue {
    fn from(s: &str) -> Self {
        ArgValue::Text(s.to_string())
    }
}

impl From<String> for ArgValue {
    fn from(s: String) -> Self {
        ArgValue::Text(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArgKind {
    Int,
    Text,
}

/// Classify a raw string argument as an integer when it is an optional `-`
/// followed by ASCII digits that fit in an `i64`, otherwise as text.
pub fn classify_arg(text: &str) -> ArgValue {
    let digits = text.strip_prefix('-').unwrap_or(text);
    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
        if let Ok(v) = text.parse::<i64>() {
            return ArgValue::Int(v);
        }
    }
    ArgValue::Text(text.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    InvalidReference,
    NoSuchMethod,
    BadArgs,
    ServiceError,
    NotFound,
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorCode::InvalidReference => "INVALID_REFERENCE",
            ErrorCode::NoSuchMethod => "NO_SUCH_METHOD",
            ErrorCode::BadArgs => "BAD_ARGS",
            ErrorCode::ServiceError => "SERVICE_ERROR",
            ErrorCode::NotFound => "NOT_FOUND",
        };
        f.write_str(s)
    }
}

/// The registry's answer for a service: where it listens and which process
/// lifetime answered there. Two records are the same stub iff endpoint and
/// incarnation both match.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StubRecord {
    pub service_name: String,
    pub endpoint: Endpoint,
    pub incarnation: u64,
}

impl StubRecord {
    pub fn same_stub(&self, other: &StubRecord) -> bool {
        self.endpoint == other.endpoint && self.incarnation == other.incarnation
    }
}

impl fmt::Display for StubRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}@{}#{}",
            self.service_name, self.endpoint, self.incarnation
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    Crash,
    Restart,
    Migrate {
        new_endpoint: Endpoint,
        leave_tracker: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvokeRequest {
    pub id: u64,
    pub service: String,
    pub incarnation: u64,
    pub method: String,
    pub args: Vec<ArgValue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    InvokeRequest(InvokeRequest),
    InvokeResult {
        id: u64,
        value: ArgValue,
    },
    InvokeError {
        id: u64,
        code: ErrorCode,
        detail: String,
    },
    Register {
        name: String,
        endpoint: Endpoint,
        incarnation: u64,
    },
    Lookup {
        name: String,
    },
    LookupResult {
        record: StubRecord,
    },
    NotFound {
        name: String,
    },
    Unregister {
        name: String,
    },
    Ack {},
    Control {
        action: ControlAction,
    },
}

impl Message {
    /// The `"type"` discriminator this message is written with.
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::InvokeRequest(_) => "invoke_request",
            Message::InvokeResult { .. } => "invoke_result",
            Message::InvokeError { .. } => "invoke_error",
            Message::Register { .. } => "register",
            Message::Lookup { .. } => "lookup",
            Message::LookupResult { .. } => "lookup_result",
            Message::NotFound { .. } => "not_found",
            Message::Unregister { .. } => "unregister",
            Message::Ack {} => "ack",
            Message::Control { .. } => "control",
        }
    }

    pub fn error(id: u64, code: ErrorCode, detail: impl Into<String>) -> Message {
        Message::InvokeError {
            id,
            code,
            detail: detail.into(),
        }
    }
}

/// JSON payload of `m`, without the length prefix.
pub fn encode_payload(m: &Message) -> Vec<u8> {
    // Every field is a string, integer, bool or nested struct of those.
    serde_json::to_vec(m).expect("message serialization is infallible")
}

pub fn encode_frame(m: &Message) -> Vec<u8> {
    let payload = encode_payload(m);
    let mut out = Vec::with_capacity(PREFIX_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    out
}

fn decode_payload(payload: &[u8]) -> Result<Message, FrameError> {
    let text = std::str::from_utf8(payload).map_err(|_| FrameError::InvalidUtf8)?;
    serde_json::from_str(text).map_err(|e| FrameError::Malformed(e.to_string()))
}

fn check_len(len: usize) -> Result<(), FrameError> {
    if len > MAX_FRAME_LEN {
        Err(FrameError::TooLarge(len))
    } else {
        Ok(())
    }
}

/// Decode the first frame in `bytes`, returning the message and the number of
/// bytes consumed. Anything after the first frame is left untouched.
pub fn decode_frame(bytes: &[u8]) -> Result<(Message, usize), FrameError> {
    if bytes.len() < PREFIX_LEN {
        return Err(FrameError::IncompletePrefix(bytes.len()));
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    check_len(len)?;
    let end = PREFIX_LEN + len;
    if bytes.len() < end {
        return Err(FrameError::Truncated {
            need: len,
            have: bytes.len() - PREFIX_LEN,
        });
    }
    let msg = decode_payload(&bytes[PREFIX_LEN..end])?;
    Ok((msg, end))
}

pub fn write_frame<W: Write>(w: &mut W, m: &Message) -> Result<(), FrameError> {
    w.write_all(&encode_frame(m))?;
    w.flush()?;
    Ok(())
}

/// Read one frame from a stream. A clean EOF before any prefix byte is
/// reported as [`FrameError::Closed`].
pub fn read_frame<R: Read>(r: &mut R) -> Result<Message, FrameError> {
    let mut prefix = [0u8; PREFIX_LEN];
    let mut got = 0;
    while got < PREFIX_LEN {
        match r.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Err(FrameError::Closed),
            Ok(0) => return Err(FrameError::IncompletePrefix(got)),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(prefix) as usize;
    check_len(len)?;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FrameError::Truncated { need: len, have: 0 }
        } else {
            FrameError::Io(e)
        }
    })?;
    decode_payload(&payload)
}
