//! Client-side virtual stubs.
//!
//! A [`VirtualStub`] holds the current [`StubRecord`] for one service and
//! forwards invocations to it by method name. Under
//! [`Strategy::VirtualStubRepair`], a call that fails because the record went
//! stale (new incarnation, dead endpoint, timeout) triggers a repair: look the
//! service up again until the registry hands back a different record, push the
//! updated stub into the cache, and repeat the call. The two other strategies
//! are baselines that never repair: one looks the service up before every
//! call, the other always talks to the original endpoint and relies on a
//! forwarding tracker being left there.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::CacheTable;
use crate::metrics::{MetricsSink, NullSink, RepairCause, RepairEvent};
use crate::registry::{RegistryClient, RegistryError};
use crate::transport::TransportError;
use crate::wire::{ArgValue, ErrorCode, InvokeRequest, Message, StubRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    VirtualStubRepair,
    RebindPerCall,
    TrackerFollow,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::VirtualStubRepair,
        Strategy::RebindPerCall,
        Strategy::TrackerFollow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::VirtualStubRepair => "virtual_stub_repair",
            Strategy::RebindPerCall => "rebind_per_call",
            Strategy::TrackerFollow => "tracker_follow",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// Bounds on repair. Backoff before lookup attempt `n` (n >= 2) is
/// `min(initial * factor^(n-2), cap)`; the first attempt is immediate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairPolicy {
    pub max_repair_cycles: u32,
    pub max_lookup_attempts_per_cycle: u32,
    pub backoff_initial_ms: u64,
    pub backoff_factor: u32,
    pub backoff_cap_ms: u64,
    pub invoke_timeout_ms: u64,
}

impl Default for RepairPolicy {
    fn default() -> Self {
        RepairPolicy {
            max_repair_cycles: 3,
            max_lookup_attempts_per_cycle: 8,
            backoff_initial_ms: 50,
            backoff_factor: 2,
            backoff_cap_ms: 1000,
            invoke_timeout_ms: 2000,
        }
    }
}

impl RepairPolicy {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("max_repair_cycles", self.max_repair_cycles as u64),
            (
                "max_lookup_attempts_per_cycle",
                self.max_lookup_attempts_per_cycle as u64,
            ),
            ("backoff_initial_ms", self.backoff_initial_ms),
            ("backoff_factor", self.backoff_factor as u64),
            ("backoff_cap_ms", self.backoff_cap_ms),
            ("invoke_timeout_ms", self.invoke_timeout_ms),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.backoff_cap_ms < self.backoff_initial_ms {
            return Err("backoff_cap_ms below backoff_initial_ms".into());
        }
        Ok(())
    }

    /// Wait before lookup attempt `attempt` (1-based) within a cycle.
    pub fn backoff_before(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            return Duration::ZERO;
        }
        let mut ms = self.backoff_initial_ms;
        for _ in 2..attempt {
            ms = ms.saturating_mul(self.backoff_factor as u64);
            if ms >= self.backoff_cap_ms {
                break;
            }
        }
        Duration::from_millis(ms.min(self.backoff_cap_ms))
    }

    /// Total backoff sleep of one cycle that exhausts its attempts.
    pub fn cycle_backoff(&self) -> Duration {
        (1..=self.max_lookup_attempts_per_cycle)
            .map(|a| self.backoff_before(a))
            .sum()
    }

    pub fn max_lookups(&self) -> u64 {
        self.max_repair_cycles as u64 * self.max_lookup_attempts_per_cycle as u64
    }

    pub fn invoke_timeout(&self) -> Duration {
        Duration::from_millis(self.invoke_timeout_ms)
    }
}

#[derive(Debug, Error)]
pub enum StubError {
    #[error("binding to {service} unrepairable after {cycles} repair cycles (last failure: {last_cause})")]
    BindingUnrepairable {
        service: String,
        cycles: u32,
        last_cause: RepairCause,
    },
    #[error("repair lookups for {service} exhausted after {attempts} attempts")]
    RepairLookupExhausted { service: String, attempts: u32 },
    #[error("service {0:?} is not registered")]
    NotFound(String),
    #[error("{code}: {detail}")]
    Remote { code: ErrorCode, detail: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("registry: {0}")]
    Registry(RegistryError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("bad serialized stub: {0}")]
    Codec(String),
}

impl StubError {
    /// Wire error code carried by this failure, if any.
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            StubError::Remote { code, .. } => Some(*code),
            StubError::NotFound(_) => Some(ErrorCode::NotFound),
            _ => None,
        }
    }
}

impl From<RegistryError> for StubError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::NotFound(name) => StubError::NotFound(name),
            other => StubError::Registry(other),
        }
    }
}

/// Per-stub counters.
#[derive(Debug, Default)]
pub struct StubCounters {
    invokes: AtomicU64,
    lookups: AtomicU64,
    fresh_lookups: AtomicU64,
    repairs: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StubCounts {
    /// Invoke requests sent.
    pub invokes: u64,
    /// Registry lookups issued.
    pub lookups: u64,
    /// Repair lookups that returned a record different from the stale one.
    pub fresh_lookups: u64,
    /// Completed repairs (one RepairEvent each).
    pub repairs: u64,
}

impl StubCounters {
    pub fn counts(&self) -> StubCounts {
        StubCounts {
            invokes: self.invokes.load(Ordering::SeqCst),
            lookups: self.lookups.load(Ordering::SeqCst),
            fresh_lookups: self.fresh_lookups.load(Ordering::SeqCst),
            repairs: self.repairs.load(Ordering::SeqCst),
        }
    }
}

/// The data part of a stub; its JSON encoding is the cached form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubSnapshot {
    pub service_name: String,
    pub record: StubRecord,
    pub policy: RepairPolicy,
    pub strategy: Strategy,
}

impl StubSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self, StubError> {
        let snap: StubSnapshot =
            serde_json::from_str(s).map_err(|e| StubError::Codec(e.to_string()))?;
        if snap.record.service_name != snap.service_name {
            return Err(StubError::Codec(format!(
                "record names {:?}, stub names {:?}",
                snap.record.service_name, snap.service_name
            )));
        }
        Ok(snap)
    }
}

/// Runtime handles a stub needs; never serialized.
#[derive(Clone)]
pub struct StubRuntime {
    pub registry: RegistryClient,
    pub sink: Arc<dyn MetricsSink>,
    pub cache: Option<Arc<CacheTable>>,
}

impl StubRuntime {
    pub fn new(registry: RegistryClient) -> Self {
        StubRuntime {
            registry,
            sink: Arc::new(NullSink),
            cache: None,
        }
    }

    pub fn with_sink(mut self, sink: Arc<dyn MetricsSink>) -> Self {
        self.sink = sink;
        self
    }

    pub fn with_cache(mut self, cache: Arc<CacheTable>) -> Self {
        self.cache = Some(cache);
        self
    }
}

enum Failure {
    Repairable(RepairCause, StubError),
    Fatal(StubError),
}

struct Repaired {
    t_fail: Instant,
    t_lookup_done: Instant,
    t_cache_done: Instant,
    cause: RepairCause,
    attempts: u32,
    old: StubRecord,
    new: StubRecord,
}

pub struct VirtualStub {
    service_name: String,
    origin: StubRecord,
    current: RwLock<StubRecord>,
    policy: RepairPolicy,
    strategy: Strategy,
    runtime: StubRuntime,
    repair_lock: Mutex<()>,
    counters: StubCounters,
    next_id: AtomicU64,
}

impl fmt::Debug for VirtualStub {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VirtualStub")
            .field("service_name", &self.service_name)
            .field("current", &*self.current.read())
            .field("strategy", &self.strategy)
            .finish_non_exhaustive()
    }
}

impl VirtualStub {
    pub fn new(
        record: StubRecord,
        policy: RepairPolicy,
        strategy: Strategy,
        runtime: StubRuntime,
    ) -> VirtualStub {
        VirtualStub {
            service_name: record.service_name.clone(),
            origin: record.clone(),
            current: RwLock::new(record),
            policy,
            strategy,
            runtime,
            repair_lock: Mutex::new(()),
            counters: StubCounters::default(),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn from_snapshot(snap: StubSnapshot, runtime: StubRuntime) -> VirtualStub {
        VirtualStub::new(snap.record, snap.policy, snap.strategy, runtime)
    }

    pub fn snapshot(&self) -> StubSnapshot {
        StubSnapshot {
            service_name: self.service_name.clone(),
            record: self.current(),
            policy: self.policy,
            strategy: self.strategy,
        }
    }

    pub fn serialize(&self) -> String {
        self.snapshot().to_json()
    }

    pub fn service_name(&self) -> &str {
        &self.service_name
    }

    pub fn current(&self) -> StubRecord {
        self.current.read().clone()
    }

    pub fn origin(&self) -> &StubRecord {
        &self.origin
    }

    pub fn policy(&self) -> &RepairPolicy {
        &self.policy
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn counts(&self) -> StubCounts {
        self.counters.counts()
    }

    /// Invoke `method` on the bound service according to the stub's strategy.
    pub fn invoke_method(&self, method: &str, args: &[ArgValue]) -> Result<ArgValue, StubError> {
        match self.strategy {
            Strategy::VirtualStubRepair => self.invoke_with_repair(method, args),
            Strategy::RebindPerCall => self.strategy_invoke_rebind(method, args),
            Strategy::TrackerFollow => self.strategy_invoke_tracker(method, args),
        }
    }

    fn invoke_with_repair(&self, method: &str, args: &[ArgValue]) -> Result<ArgValue, StubError> {
        let max_cycles = self.policy.max_repair_cycles;
        let mut cycles = 0u32;
        let mut repaired: Option<Repaired> = None;
        loop {
            let record = self.current();
            let cause = match self.send(&record, method, args) {
                Ok(value) => {
                    if let Some(r) = repaired {
                        self.emit(r, Instant::now());
                    }
                    return Ok(value);
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Repairable(cause, e)) => {
                    log::debug!("{} call {method} failed ({cause}): {e}", self.service_name);
                    cause
                }
            };
            let t_fail = Instant::now();
            repaired = None;
            if cycles == max_cycles {
                return Err(self.unrepairable(cycles, cause));
            }
            cycles += 1;
            match self.repair_after(&record, cause, t_fail) {
                Ok(r) => repaired = r,
                Err(StubError::RepairLookupExhausted { .. }) if cycles < max_cycles => {}
                Err(StubError::RepairLookupExhausted { .. }) => {
                    return Err(self.unrepairable(cycles, cause))
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn unrepairable(&self, cycles: u32, last_cause: RepairCause) -> StubError {
        StubError::BindingUnrepairable {
            service: self.service_name.clone(),
            cycles,
            last_cause,
        }
    }

    /// Run one repair for a failure observed against `failed`. If another
    /// caller already replaced that record, nothing is done.
    fn repair_after(
        &self,
        failed: &StubRecord,
        cause: RepairCause,
        t_fail: Instant,
    ) -> Result<Option<Repaired>, StubError> {
        let _guard = self.repair_lock.lock();
        if !self.current.read().same_stub(failed) {
            return Ok(None);
        }
        let (new, attempts, t_lookup_done, t_cache_done) = self.lookup_until_changed(failed)?;
        Ok(Some(Repaired {
            t_fail,
            t_lookup_done,
            t_cache_done,
            cause,
            attempts,
            old: failed.clone(),
            new,
        }))
    }

    /// Look the service up until the registry returns a record different from
    /// the current one, then install it and update the cache.
    pub fn invalid_reference(&self) -> Result<StubRecord, StubError> {
        let _guard = self.repair_lock.lock();
        let old = self.current();
        self.lookup_until_changed(&old).map(|(new, ..)| new)
    }

    fn lookup_until_changed(
        &self,
        old: &StubRecord,
    ) -> Result<(StubRecord, u32, Instant, Instant), StubError> {
        let attempts = self.policy.max_lookup_attempts_per_cycle;
        for attempt in 1..=attempts {
            let wait = self.policy.backoff_before(attempt);
            if !wait.is_zero() {
                thread::sleep(wait);
            }
            self.counters.lookups.fetch_add(1, Ordering::SeqCst);
            match self.runtime.registry.lookup(&self.service_name) {
                Ok(record) if !record.same_stub(old) => {
                    self.counters.fresh_lookups.fetch_add(1, Ordering::SeqCst);
                    *self.current.write() = record.clone();
                    let t_lookup_done = Instant::now();
                    if let Some(cache) = &self.runtime.cache {
                        cache.put_updated(&self.service_name, self);
                    }
                    let t_cache_done = Instant::now();
                    return Ok((record, attempt, t_lookup_done, t_cache_done));
                }
                Ok(_) => log::debug!("{}: registry still holds {old}", self.service_name),
                Err(e) => log::debug!("{}: repair lookup failed: {e}", self.service_name),
            }
        }
        Err(StubError::RepairLookupExhausted {
            service: self.service_name.clone(),
            attempts,
        })
    }

    fn emit(&self, r: Repaired, t_retry_done: Instant) {
        self.counters.repairs.fetch_add(1, Ordering::SeqCst);
        self.runtime.sink.record(RepairEvent {
            service_name: self.service_name.clone(),
            cause: r.cause,
            t_fail: r.t_fail,
            t_lookup_done: r.t_lookup_done,
            t_cache_done: r.t_cache_done,
            t_retry_done,
            lookup_attempts: r.attempts,
            old_record: r.old,
            new_record: r.new,
        });
    }

    /// Baseline: a fresh registry lookup before every call, no repair.
    pub fn strategy_invoke_rebind(
        &self,
        method: &str,
        args: &[ArgValue],
    ) -> Result<ArgValue, StubError> {
        self.counters.lookups.fetch_add(1, Ordering::SeqCst);
        let record = self.runtime.registry.lookup(&self.service_name)?;
        *self.current.write() = record.clone();
        self.send(&record, method, args)
            .map_err(Failure::into_error)
    }

    /// Baseline: always call the original endpoint, never look up.
    pub fn strategy_invoke_tracker(
        &self,
        method: &str,
        args: &[ArgValue],
    ) -> Result<ArgValue, StubError> {
        self.send(&self.origin, method, args)
            .map_err(Failure::into_error)
    }

    fn send(
        &self,
        record: &StubRecord,
        method: &str,
        args: &[ArgValue],
    ) -> Result<ArgValue, Failure> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let req = Message::InvokeRequest(InvokeRequest {
            id,
            service: self.service_name.clone(),
            incarnation: record.incarnation,
            method: method.to_string(),
            args: args.to_vec(),
        });
        self.counters.invokes.fetch_add(1, Ordering::SeqCst);
        let reply = self.runtime.registry.transport().call_with_timeout(
            &record.endpoint,
            &req,
            self.policy.invoke_timeout(),
        );
        match reply {
            Ok(Message::InvokeResult { id: rid, value }) if rid == id => Ok(value),
            Ok(Message::InvokeError {
                id: rid,
                code,
                detail,
            }) if rid == id => {
                let err = StubError::Remote { code, detail };
                if code == ErrorCode::InvalidReference {
                    Err(Failure::Repairable(RepairCause::StaleIncarnation, err))
                } else {
                    Err(Failure::Fatal(err))
                }
            }
            Ok(other) => Err(Failure::Fatal(StubError::Protocol(format!(
                "unexpected {} reply to invoke {id}",
                other.type_name()
            )))),
            Err(e) => Err(match e {
                TransportError::Timeout(_) => Failure::Repairable(RepairCause::Timeout, e.into()),
                TransportError::Refused(_)
                | TransportError::Lost(_)
                | TransportError::Resolve(_)
                | TransportError::Io { .. } => {
                    Failure::Repairable(RepairCause::ConnectionRefused, e.into())
                }
                TransportError::Frame { .. } => Failure::Fatal(e.into()),
            }),
        }
    }
}

impl Failure {
    fn into_error(self) -> StubError {
        match self {
            Failure::Repairable(_, e) | Failure::Fatal(e) => e,
        }
    }
}
