//! TCP request/response transport over [`crate::wire`] frames.
//!
//! [`Transport`] is the client side: one connection per exchange, an optional
//! fixed one-way delay applied to every message in each direction, and
//! per-type counters of the messages it sends. [`FrameServer`] is the server
//! side: an accept loop plus one thread per connection, closable on demand so
//! that a crash is observable as connection-refused.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use parking_lot::Mutex;
use thiserror::Error;

use crate::wire::{read_frame, write_frame, Endpoint, FrameError, Message};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(2000);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connection refused by {0}")]
    Refused(Endpoint),
    #[error("connection to {0} lost before a response arrived")]
    Lost(Endpoint),
    #[error("timed out waiting for {0}")]
    Timeout(Endpoint),
    #[error("cannot resolve {0}")]
    Resolve(Endpoint),
    #[error("protocol error talking to {endpoint}: {source}")]
    Frame {
        endpoint: Endpoint,
        #[source]
        source: FrameError,
    },
    #[error("i/o error talking to {endpoint}: {source}")]
    Io {
        endpoint: Endpoint,
        #[source]
        source: io::Error,
    },
}

/// Counts of messages sent through a transport, keyed by `"type"`.
#[derive(Debug, Default)]
pub struct TransportStats {
    sent: Mutex<BTreeMap<&'static str, u64>>,
}

impl TransportStats {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn bump(&self, kind: &'static str) {
        *self.sent.lock().entry(kind).or_insert(0) += 1;
    }

    pub fn sent(&self, kind: &str) -> u64 {
        self.sent.lock().get(kind).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.sent.lock().values().sum()
    }

    pub fn snapshot(&self) -> BTreeMap<&'static str, u64> {
        self.sent.lock().clone()
    }
}

#[derive(Debug, Clone)]
pub struct Transport {
    one_way_latency: Duration,
    timeout: Duration,
    stats: Arc<TransportStats>,
}

impl Default for Transport {
    fn default() -> Self {
        Transport::new(Duration::ZERO, TransportStats::new())
    }
}

impl Transport {
    pub fn new(one_way_latency: Duration, stats: Arc<TransportStats>) -> Self {
        Transport {
            one_way_latency,
            timeout: DEFAULT_TIMEOUT,
            stats,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn one_way_latency(&self) -> Duration {
        self.one_way_latency
    }

    pub fn stats(&self) -> &Arc<TransportStats> {
        &self.stats
    }

    pub fn call(&self, endpoint: &Endpoint, msg: &Message) -> Result<Message, TransportError> {
        self.call_with_timeout(endpoint, msg, self.timeout)
    }

    /// Send one request frame and wait for one response frame.
    pub fn call_with_timeout(
        &self,
        endpoint: &Endpoint,
        msg: &Message,
        timeout: Duration,
    ) -> Result<Message, TransportError> {
        self.stats.bump(msg.type_name());
        self.delay();
        let addr = resolve(endpoint)?;
        let mut stream =
            TcpStream::connect_timeout(&addr, timeout).map_err(|e| match e.kind() {
                io::ErrorKind::ConnectionRefused => TransportError::Refused(endpoint.clone()),
                io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => {
                    TransportError::Timeout(endpoint.clone())
                }
                _ => TransportError::Io {
                    endpoint: endpoint.clone(),
                    source: e,
                },
            })?;
        let _ = stream.set_nodelay(true);
        stream
            .set_read_timeout(Some(timeout))
            .and_then(|_| stream.set_write_timeout(Some(timeout)))
            .map_err(|source| TransportError::Io {
                endpoint: endpoint.clone(),
                source,
            })?;
        write_frame(&mut stream, msg).map_err(|e| classify(endpoint, e))?;
        let reply = read_frame(&mut stream).map_err(|e| classify(endpoint, e))?;
        self.delay();
        Ok(reply)
    }

    fn delay(&self) {
        if !self.one_way_latency.is_zero() {
            thread::sleep(self.one_way_latency);
        }
    }
}

fn resolve(endpoint: &Endpoint) -> Result<SocketAddr, TransportError> {
    (endpoint.host(), endpoint.port())
        .to_socket_addrs()
        .ok()
        .and_then(|mut it| it.next())
        .ok_or_else(|| TransportError::Resolve(endpoint.clone()))
}

fn classify(endpoint: &Endpoint, e: FrameError) -> TransportError {
    match e {
        FrameError::Closed | FrameError::IncompletePrefix(_) | FrameError::Truncated { .. } => {
            TransportError::Lost(endpoint.clone())
        }
        FrameError::Io(io) => match io.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => {
                TransportError::Timeout(endpoint.clone())
            }
            io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::BrokenPipe
            | io::ErrorKind::UnexpectedEof => TransportError::Lost(endpoint.clone()),
            io::ErrorKind::ConnectionRefused => TransportError::Refused(endpoint.clone()),
            _ => TransportError::Io {
                endpoint: endpoint.clone(),
                source: io,
            },
        },
        other => TransportError::Frame {
            endpoint: endpoint.clone(),
            source: other,
        },
    }
}

/// Handler invoked for every request frame. Returning `None` drops the
/// connection without replying.
pub type FrameHandler = Arc<dyn Fn(Message) -> Option<Message> + Send + Sync>;

/// A listening socket dispatching request frames to a handler.
pub struct FrameServer {
    endpoint: Endpoint,
    closed: Arc<AtomicBool>,
    conns: Arc<Mutex<HashMap<u64, TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl FrameServer {
    /// Bind `host:port` (port 0 picks a free port) and start serving.
    pub fn bind(host: &str, port: u16, handler: FrameHandler) -> io::Result<FrameServer> {
        let listener = TcpListener::bind((host, port))?;
        let local = listener.local_addr()?;
        let endpoint = Endpoint::new(host, local.port())
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        let closed = Arc::new(AtomicBool::new(false));
        let conns: Arc<Mutex<HashMap<u64, TcpStream>>> = Arc::default();

        let accept = {
            let closed = closed.clone();
            let conns = conns.clone();
            let next_id = AtomicU64::new(0);
            thread::Builder::new()
                .name(format!("accept-{endpoint}"))
                .spawn(move || {
                    for stream in listener.incoming() {
                        if closed.load(Ordering::SeqCst) {
                            break;
                        }
                        let Ok(stream) = stream else { continue };
                        let id = next_id.fetch_add(1, Ordering::Relaxed);
                        if let Ok(clone) = stream.try_clone() {
                            conns.lock().insert(id, clone);
                        }
                        let handler = handler.clone();
                        let conns = conns.clone();
                        let closed = closed.clone();
                        thread::spawn(move || {
                            serve_connection(stream, handler, &closed);
                            conns.lock().remove(&id);
                        });
                    }
                })?
        };

        Ok(FrameServer {
            endpoint,
            closed,
            conns,
            accept: Some(accept),
        })
    }

    pub fn bind_endpoint(endpoint: &Endpoint, handler: FrameHandler) -> io::Result<FrameServer> {
        FrameServer::bind(endpoint.host(), endpoint.port(), handler)
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    /// Stop accepting, release the port and cut every open connection.
    /// Returns once the listening socket is gone. Idempotent.
    pub fn close(&mut self) {
        if self.closed.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept so the loop sees the flag and drops the listener.
        if let Ok(addr) = resolve(&self.endpoint) {
            let _ = TcpStream::connect_timeout(&addr, Duration::from_millis(500));
        }
        if let Some(handle) = self.accept.take() {
            let _ = handle.join();
        }
        for (_, stream) in self.conns.lock().drain() {
            let _ = stream.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for FrameServer {
    fn drop(&mut self) {
        self.close();
    }
}

fn serve_connection(mut stream: TcpStream, handler: FrameHandler, closed: &AtomicBool) {
    let _ = stream.set_nodelay(true);
    loop {
        let msg = match read_frame(&mut stream) {
            Ok(m) => m,
            Err(FrameError::Closed) => return,
            Err(e) => {
                log::debug!("dropping connection: {e}");
                return;
            }
        };
        if closed.load(Ordering::SeqCst) {
            return;
        }
        let Some(reply) = handler(msg) else { return };
        if closed.load(Ordering::SeqCst) || write_frame(&mut stream, &reply).is_err() {
            return;
        }
    }
}

/// Pick a currently free port on `host`. The port is released before
/// returning, so another process may grab it first.
pub fn reserve_endpoint(host: &str) -> io::Result<Endpoint> {
    let l = TcpListener::bind((host, 0))?;
    let port = l.local_addr()?.port();
    Endpoint::new(host, port).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))
}
