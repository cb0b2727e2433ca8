//! Naming service mapping service names to [`StubRecord`]s.
//!
//! The registry never health-checks its entries: a service that dies without
//! unregistering keeps its stale record until it registers again. Client-side
//! repair is what copes with that.

use std::collections::HashMap;
use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use thiserror::Error;

use crate::transport::{FrameServer, Transport, TransportError};
use crate::wire::{Endpoint, ErrorCode, Message, StubRecord};

pub const DEFAULT_REGISTRY_ADDR: &str = "127.0.0.1:7000";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("service name must be nonempty")]
    EmptyName,
    #[error("service {0:?} is not registered")]
    NotFound(String),
    #[error("registry rejected request: {code}: {detail}")]
    Rejected { code: ErrorCode, detail: String },
    #[error("unexpected reply from registry: {0}")]
    UnexpectedReply(&'static str),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Counters maintained by the registry itself.
#[derive(Debug, Default)]
pub struct RegistryStats {
    pub lookups: AtomicU64,
    pub lookups_found: AtomicU64,
    pub lookups_not_found: AtomicU64,
    pub registers: AtomicU64,
    pub unregisters: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegistryCounts {
    pub lookups: u64,
    pub lookups_found: u64,
    pub lookups_not_found: u64,
    pub registers: u64,
    pub unregisters: u64,
}

impl RegistryStats {
    pub fn counts(&self) -> RegistryCounts {
        RegistryCounts {
            lookups: self.lookups.load(Ordering::SeqCst),
            lookups_found: self.lookups_found.load(Ordering::SeqCst),
            lookups_not_found: self.lookups_not_found.load(Ordering::SeqCst),
            registers: self.registers.load(Ordering::SeqCst),
            unregisters: self.unregisters.load(Ordering::SeqCst),
        }
    }
}

/// The authoritative name table. Each operation is atomic.
#[derive(Debug, Default)]
pub struct RegistryTable {
    records: Mutex<HashMap<String, StubRecord>>,
    stats: RegistryStats,
}

impl RegistryTable {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn register(&self, name: &str, endpoint: Endpoint, incarnation: u64) {
        self.stats.registers.fetch_add(1, Ordering::SeqCst);
        self.records.lock().insert(
            name.to_string(),
            StubRecord {
                service_name: name.to_string(),
                endpoint,
                incarnation,
            },
        );
    }

    pub fn lookup(&self, name: &str) -> Option<StubRecord> {
        self.stats.lookups.fetch_add(1, Ordering::SeqCst);
        let found = self.records.lock().get(name).cloned();
        let counter = if found.is_some() {
            &self.stats.lookups_found
        } else {
            &self.stats.lookups_not_found
        };
        counter.fetch_add(1, Ordering::SeqCst);
        found
    }

    pub fn unregister(&self, name: &str) {
        self.stats.unregisters.fetch_add(1, Ordering::SeqCst);
        self.records.lock().remove(name);
    }

    /// Read a record without touching the counters.
    pub fn peek(&self, name: &str) -> Option<StubRecord> {
        self.records.lock().get(name).cloned()
    }

    pub fn len(&self) -> usize {
        self.records.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> &RegistryStats {
        &self.stats
    }

    /// Answer one wire request.
    pub fn handle(&self, msg: Message) -> Message {
        match msg {
            Message::Register {
                name,
                endpoint,
                incarnation,
            } => {
                if name.is_empty() {
                    return Message::error(0, ErrorCode::BadArgs, "empty service name");
                }
                self.register(&name, endpoint, incarnation);
                Message::Ack {}
            }
            Message::Lookup { name } => match self.lookup(&name) {
                Some(record) => Message::LookupResult { record },
                None => Message::NotFound { name },
            },
            Message::Unregister { name } => {
                self.unregister(&name);
                Message::Ack {}
            }
            other => Message::error(
                0,
                ErrorCode::ServiceError,
                format!("registry does not handle {}", other.type_name()),
            ),
        }
    }
}

/// A registry listening on a TCP endpoint.
pub struct RegistryServer {
    table: Arc<RegistryTable>,
    server: FrameServer,
}

impl RegistryServer {
    pub fn start(host: &str, port: u16) -> io::Result<RegistryServer> {
        let table = RegistryTable::new();
        let handler_table = table.clone();
        let server =
            FrameServer::bind(host, port, Arc::new(move |m| Some(handler_table.handle(m))))?;
        log::info!("registry listening on {}", server.endpoint());
        Ok(RegistryServer { table, server })
    }

    pub fn endpoint(&self) -> &Endpoint {
        self.server.endpoint()
    }

    pub fn table(&self) -> &Arc<RegistryTable> {
        &self.table
    }

    pub fn shutdown(&mut self) {
        self.server.close();
    }
}

#[derive(Debug, Clone)]
pub struct RegistryClient {
    endpoint: Endpoint,
    transport: Transport,
}

impl RegistryClient {
    pub fn new(endpoint: Endpoint, transport: Transport) -> Self {
        RegistryClient {
            endpoint,
            transport,
        }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn transport(&self) -> &Transport {
        &self.transport
    }

    pub fn register(
        &self,
        name: &str,
        endpoint: &Endpoint,
        incarnation: u64,
    ) -> Result<(), RegistryError> {
        if name.is_empty() {
            return Err(RegistryError::EmptyName);
        }
        let reply = self.transport.call(
            &self.endpoint,
            &Message::Register {
                name: name.to_string(),
                endpoint: endpoint.clone(),
                incarnation,
            },
        )?;
        expect_ack(reply)
    }

    pub fn lookup(&self, name: &str) -> Result<StubRecord, RegistryError> {
        let reply = self.transport.call(
            &self.endpoint,
            &Message::Lookup {
                name: name.to_string(),
            },
        )?;
        match reply {
            Message::LookupResult { record } => Ok(record),
            Message::NotFound { name } => Err(RegistryError::NotFound(name)),
            Message::InvokeError { code, detail, .. } => {
                Err(RegistryError::Rejected { code, detail })
            }
            other => Err(RegistryError::UnexpectedReply(other.type_name())),
        }
    }

    pub fn unregister(&self, name: &str) -> Result<(), RegistryError> {
        let reply = self.transport.call(
            &self.endpoint,
            &Message::Unregister {
                name: name.to_string(),
            },
        )?;
        expect_ack(reply)
    }
}

fn expect_ack(reply: Message) -> Result<(), RegistryError> {
    match reply {
        Message::Ack {} => Ok(()),
        Message::InvokeError { code, detail, .. } => Err(RegistryError::Rejected { code, detail }),
        other => Err(RegistryError::UnexpectedReply(other.type_name())),
    }
}
