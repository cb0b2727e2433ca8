use std::collections::BTreeMap;
use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use super::methods::{ServiceKind, ServiceState};
use crate::registry::{RegistryClient, RegistryError};
use crate::transport::{FrameServer, Transport, TransportError};
use crate::wire::{
    ArgValue, ControlAction, Endpoint, ErrorCode, InvokeRequest, Message, StubRecord,
};

pub const TRACKER_UNREACHABLE: &str = "tracker target unreachable";

#[derive(Debug, Error)]
pub enum HostError {
    #[error("invalid service descriptor: {0}")]
    Descriptor(String),
    #[error("cannot bind {endpoint}: {source}")]
    Bind {
        endpoint: Endpoint,
        #[source]
        source: io::Error,
    },
    #[error("service is not running")]
    NotRunning,
    #[error("registration failed: {0}")]
    Registry(#[from] RegistryError),
    #[error("control request failed: {code}: {detail}")]
    Control { code: ErrorCode, detail: String },
    #[error("unexpected control reply: {0}")]
    UnexpectedReply(&'static str),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceDescriptor {
    pub name: String,
    pub kind: ServiceKind,
    pub initial_params: BTreeMap<String, ArgValue>,
    pub data_endpoint: Endpoint,
    pub control_endpoint: Endpoint,
}

impl ServiceDescriptor {
    pub fn new(
        name: impl Into<String>,
        kind: ServiceKind,
        data_endpoint: Endpoint,
        control_endpoint: Endpoint,
    ) -> Result<Self, HostError> {
        let name = name.into();
        if name.is_empty() {
            return Err(HostError::Descriptor("empty service name".into()));
        }
        if data_endpoint == control_endpoint {
            return Err(HostError::Descriptor(format!(
                "data and control endpoints are both {data_endpoint}"
            )));
        }
        Ok(ServiceDescriptor {
            name,
            kind,
            initial_params: BTreeMap::new(),
            data_endpoint,
            control_endpoint,
        })
    }

    pub fn with_param(mut self, key: impl Into<String>, value: ArgValue) -> Self {
        self.initial_params.insert(key.into(), value);
        self
    }
}

/// One handler execution, logged by the host.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub incarnation: u64,
    pub method: String,
    pub args: Vec<ArgValue>,
}

static LAST_INCARNATION: AtomicU64 = AtomicU64::new(0);

/// A fresh incarnation token: strictly increasing within this process and
/// seeded from the wall clock so that a restarted process does not reuse one.
pub fn next_incarnation() -> u64 {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    let prev = LAST_INCARNATION
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |last| {
            Some(now.max(last + 1))
        })
        .expect("closure always returns Some");
    now.max(prev + 1)
}

struct Live {
    running: bool,
    incarnation: u64,
    endpoint: Endpoint,
    state: ServiceState,
}

/// A bound data listener. While `forward_to` is set it acts as a tracker.
struct DataListener {
    server: FrameServer,
    forward_to: Arc<RwLock<Option<StubRecord>>>,
}

struct HostInner {
    desc: ServiceDescriptor,
    registry: RegistryClient,
    transport: Transport,
    control_lock: Mutex<()>,
    live: Mutex<Live>,
    data: Mutex<Option<DataListener>>,
    trackers: Mutex<Vec<DataListener>>,
    hops: AtomicU64,
    served: AtomicU64,
    receipts: Mutex<Vec<Receipt>>,
    this: Weak<HostInner>,
}

/// Hosts one named service plus its fault-injection control plane.
pub struct ServiceHost {
    inner: Arc<HostInner>,
    control: FrameServer,
}

impl ServiceHost {
    /// Bind the data and control listeners and register with the registry.
    pub fn start(
        desc: ServiceDescriptor,
        registry: &Endpoint,
        transport: Transport,
    ) -> Result<ServiceHost, HostError> {
        let registry = RegistryClient::new(registry.clone(), transport.clone());
        let state = ServiceState::new(desc.kind, &desc.name, &desc.initial_params);
        let inner = Arc::new_cyclic(|this| HostInner {
            live: Mutex::new(Live {
                running: false,
                incarnation: 0,
                endpoint: desc.data_endpoint.clone(),
                state,
            }),
            desc,
            registry,
            transport,
            control_lock: Mutex::new(()),
            data: Mutex::new(None),
            trackers: Mutex::new(Vec::new()),
            hops: AtomicU64::new(0),
            served: AtomicU64::new(0),
            receipts: Mutex::new(Vec::new()),
            this: this.clone(),
        });

        let weak = Arc::downgrade(&inner);
        let control = FrameServer::bind_endpoint(
            &inner.desc.control_endpoint,
            Arc::new(move |msg| weak.upgrade().map(|h| h.handle_control(msg))),
        )
        .map_err(|source| HostError::Bind {
            endpoint: inner.desc.control_endpoint.clone(),
            source,
        })?;

        {
            let _guard = inner.control_lock.lock();
            inner.boot(inner.desc.data_endpoint.clone(), true)?;
        }
        log::info!(
            "{} ({}) serving on {}, control on {}",
            inner.desc.name,
            inner.desc.kind,
            inner.desc.data_endpoint,
            control.endpoint()
        );
        Ok(ServiceHost { inner, control })
    }

    pub fn name(&self) -> &str {
        &self.inner.desc.name
    }

    pub fn descriptor(&self) -> &ServiceDescriptor {
        &self.inner.desc
    }

    pub fn control_endpoint(&self) -> &Endpoint {
        self.control.endpoint()
    }

    pub fn data_endpoint(&self) -> Endpoint {
        self.inner.live.lock().endpoint.clone()
    }

    pub fn is_running(&self) -> bool {
        self.inner.live.lock().running
    }

    /// The record this host last registered.
    pub fn record(&self) -> StubRecord {
        self.inner.record()
    }

    pub fn crash(&self) {
        let _guard = self.inner.control_lock.lock();
        self.inner.crash();
    }

    pub fn restart(&self) -> Result<StubRecord, HostError> {
        let _guard = self.inner.control_lock.lock();
        self.inner.restart()
    }

    pub fn migrate(
        &self,
        new_endpoint: Endpoint,
        leave_tracker: bool,
    ) -> Result<StubRecord, HostError> {
        let _guard = self.inner.control_lock.lock();
        self.inner.migrate(new_endpoint, leave_tracker)
    }

    /// Answer an invoke as the serving listener would. `None` means the
    /// request is dropped because the service is down.
    pub fn handle_invoke(&self, req: InvokeRequest) -> Option<Message> {
        self.inner.handle_invoke(req)
    }

    /// Calls relayed by trackers left behind on migration.
    pub fn hops(&self) -> u64 {
        self.inner.hops.load(Ordering::SeqCst)
    }

    /// Invocations that reached a handler.
    pub fn served(&self) -> u64 {
        self.inner.served.load(Ordering::SeqCst)
    }

    pub fn receipts(&self) -> Vec<Receipt> {
        self.inner.receipts.lock().clone()
    }

    pub fn tracker_endpoints(&self) -> Vec<Endpoint> {
        self.inner
            .trackers
            .lock()
            .iter()
            .map(|t| t.server.endpoint().clone())
            .collect()
    }

    /// Close every listener and remove the registry entry.
    pub fn stop(mut self) -> Result<(), HostError> {
        let _guard = self.inner.control_lock.lock();
        self.inner.crash();
        self.control.close();
        self.inner.registry.unregister(&self.inner.desc.name)?;
        Ok(())
    }
}

impl Drop for ServiceHost {
    fn drop(&mut self) {
        self.control.close();
        let _guard = self.inner.control_lock.lock();
        self.inner.crash();
    }
}

impl HostInner {
    fn record(&self) -> StubRecord {
        let live = self.live.lock();
        StubRecord {
            service_name: self.desc.name.clone(),
            endpoint: live.endpoint.clone(),
            incarnation: live.incarnation,
        }
    }

    /// Start a new lifetime at `endpoint`. Caller holds `control_lock`.
    fn boot(&self, endpoint: Endpoint, reset_state: bool) -> Result<StubRecord, HostError> {
        let listener = self.bind_data(&endpoint)?;
        {
            let mut live = self.live.lock();
            live.incarnation = next_incarnation();
            live.endpoint = endpoint;
            if reset_state {
                live.state =
                    ServiceState::new(self.desc.kind, &self.desc.name, &self.desc.initial_params);
            }
            live.running = true;
        }
        *self.data.lock() = Some(listener);
        let record = self.record();
        self.registry
            .register(&record.service_name, &record.endpoint, record.incarnation)?;
        log::debug!("registered {record}");
        Ok(record)
    }

    fn bind_data(&self, endpoint: &Endpoint) -> Result<DataListener, HostError> {
        let forward_to: Arc<RwLock<Option<StubRecord>>> = Arc::default();
        let weak = self.this.clone();
        let slot = forward_to.clone();
        let server = FrameServer::bind_endpoint(
            endpoint,
            Arc::new(move |msg| {
                let host = weak.upgrade()?;
                match msg {
                    Message::InvokeRequest(req) => {
                        let target = slot.read().clone();
                        match target {
                            Some(target) => Some(host.forward(&target, req)),
                            None => host.handle_invoke(req),
                        }
                    }
                    other => Some(Message::error(
                        0,
                        ErrorCode::ServiceError,
                        format!("data endpoint does not handle {}", other.type_name()),
                    )),
                }
            }),
        )
        .map_err(|source| HostError::Bind {
            endpoint: endpoint.clone(),
            source,
        })?;
        Ok(DataListener { server, forward_to })
    }

    fn crash(&self) {
        self.live.lock().running = false;
        if let Some(mut listener) = self.data.lock().take() {
            listener.server.close();
        }
        for mut tracker in self.trackers.lock().drain(..) {
            tracker.server.close();
        }
    }

    fn restart(&self) -> Result<StubRecord, HostError> {
        self.crash();
        let endpoint = self.live.lock().endpoint.clone();
        self.boot(endpoint, true)
    }

    fn migrate(
        &self,
        new_endpoint: Endpoint,
        leave_tracker: bool,
    ) -> Result<StubRecord, HostError> {
        if !self.live.lock().running {
            return Err(HostError::NotRunning);
        }
        let listener = self.bind_data(&new_endpoint)?;
        {
            let mut live = self.live.lock();
            live.incarnation = next_incarnation();
            live.endpoint = new_endpoint;
        }
        let record = self.record();
        let old = self.data.lock().replace(listener);
        if let Some(mut old) = old {
            if leave_tracker {
                *old.forward_to.write() = Some(record.clone());
                self.trackers.lock().push(old);
            } else {
                old.server.close();
            }
        }
        self.registry
            .register(&record.service_name, &record.endpoint, record.incarnation)?;
        log::debug!("migrated to {record} (tracker: {leave_tracker})");
        Ok(record)
    }

    fn handle_invoke(&self, req: InvokeRequest) -> Option<Message> {
        let mut live = self.live.lock();
        if !live.running {
            return None;
        }
        if req.service != self.desc.name || req.incarnation != live.incarnation {
            return Some(Message::error(
                req.id,
                ErrorCode::InvalidReference,
                format!(
                    "stale reference {}#{} (current {}#{})",
                    req.service, req.incarnation, self.desc.name, live.incarnation
                ),
            ));
        }
        let incarnation = live.incarnation;
        let outcome = live.state.dispatch(&req.method, &req.args);
        drop(live);
        Some(match outcome {
            Ok(value) => {
                self.served.fetch_add(1, Ordering::SeqCst);
                self.receipts.lock().push(Receipt {
                    incarnation,
                    method: req.method,
                    args: req.args,
                });
                Message::InvokeResult { id: req.id, value }
            }
            Err(e) => Message::error(req.id, e.code, e.detail),
        })
    }

    /// Relay `req` to the tracked record and hand back its answer verbatim.
    fn forward(&self, target: &StubRecord, mut req: InvokeRequest) -> Message {
        self.hops.fetch_add(1, Ordering::SeqCst);
        let id = req.id;
        req.incarnation = target.incarnation;
        match self
            .transport
            .call(&target.endpoint, &Message::InvokeRequest(req))
        {
            Ok(reply) => reply,
            Err(e) => {
                log::debug!("tracker relay to {target} failed: {e}");
                Message::error(id, ErrorCode::ServiceError, TRACKER_UNREACHABLE)
            }
        }
    }

    fn handle_control(&self, msg: Message) -> Message {
        let Message::Control { action } = msg else {
            return Message::error(
                0,
                ErrorCode::ServiceError,
                format!("control endpoint does not handle {}", msg.type_name()),
            );
        };
        let _guard = self.control_lock.lock();
        let outcome = match action {
            ControlAction::Crash => {
                self.crash();
                return Message::Ack {};
            }
            ControlAction::Restart => self.restart(),
            ControlAction::Migrate {
                new_endpoint,
                leave_tracker,
            } => self.migrate(new_endpoint, leave_tracker),
        };
        match outcome {
            Ok(record) => Message::LookupResult { record },
            Err(e) => Message::error(0, ErrorCode::ServiceError, e.to_string()),
        }
    }
}

/// Sends fault-injection commands to a host's control endpoint.
#[derive(Debug, Clone)]
pub struct ControlClient {
    endpoint: Endpoint,
    transport: Transport,
}

impl ControlClient {
    pub fn new(endpoint: Endpoint, transport: Transport) -> Self {
        ControlClient {
            endpoint,
            transport,
        }
    }

    fn send(&self, action: ControlAction) -> Result<Message, HostError> {
        let reply = self
            .transport
            .call(&self.endpoint, &Message::Control { action })?;
        match reply {
            Message::InvokeError { code, detail, .. } => Err(HostError::Control { code, detail }),
            other => Ok(other),
        }
    }

    pub fn crash(&self) -> Result<(), HostError> {
        match self.send(ControlAction::Crash)? {
            Message::Ack {} => Ok(()),
            other => Err(HostError::UnexpectedReply(other.type_name())),
        }
    }

    pub fn restart(&self) -> Result<StubRecord, HostError> {
        expect_record(self.send(ControlAction::Restart)?)
    }

    pub fn migrate(
        &self,
        new_endpoint: Endpoint,
        leave_tracker: bool,
    ) -> Result<StubRecord, HostError> {
        expect_record(self.send(ControlAction::Migrate {
            new_endpoint,
            leave_tracker,
        })?)
    }
}

fn expect_record(reply: Message) -> Result<StubRecord, HostError> {
    match reply {
        Message::LookupResult { record } => Ok(record),
        other => Err(HostError::UnexpectedReply(other.type_name())),
    }
}
