//! Cache of virtual stubs, keyed by service name.
//!
//! Entries hold the serialized form of a stub, not a live object: a hit
//! deserializes a fresh [`VirtualStub`] and re-attaches the runtime handles.
//! There is no expiry. A stale entry stays until the stub that discovers the
//! staleness pushes its repaired copy back with [`CacheTable::put_updated`].

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;

use crate::metrics::MetricsSink;
use crate::registry::RegistryClient;
use crate::stub::{RepairPolicy, Strategy, StubError, StubRuntime, StubSnapshot, VirtualStub};
use crate::wire::StubRecord;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub service_name: String,
    pub serialized_stub: String,
    pub record: StubRecord,
    pub created_at: Instant,
    pub updated_at: Instant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub updates: u64,
    pub evictions: u64,
}

#[derive(Debug, Default)]
pub struct CacheTable {
    entries: Mutex<HashMap<String, CacheEntry>>,
    hits: AtomicU64,
    misses: AtomicU64,
    updates: AtomicU64,
    evictions: AtomicU64,
}

impl CacheTable {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    /// Replace (or create) the entry for `service_name` with the stub's
    /// current serialized form.
    pub fn put_updated(&self, service_name: &str, stub: &VirtualStub) {
        debug_assert_eq!(service_name, stub.service_name());
        let snapshot = stub.snapshot();
        let now = Instant::now();
        let mut entries = self.entries.lock();
        let created_at = entries
            .get(service_name)
            .map(|e| e.created_at)
            .unwrap_or(now);
        entries.insert(
            service_name.to_string(),
            CacheEntry {
                service_name: service_name.to_string(),
                serialized_stub: snapshot.to_json(),
                record: snapshot.record,
                created_at,
                updated_at: now,
            },
        );
        self.updates.fetch_add(1, Ordering::SeqCst);
    }

    pub fn evict(&self, service_name: &str) {
        if self.entries.lock().remove(service_name).is_some() {
            self.evictions.fetch_add(1, Ordering::SeqCst);
        }
    }

    pub fn entry(&self, service_name: &str) -> Option<CacheEntry> {
        self.entries.lock().get(service_name).cloned()
    }

    pub fn record(&self, service_name: &str) -> Option<StubRecord> {
        self.entries
            .lock()
            .get(service_name)
            .map(|e| e.record.clone())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
            updates: self.updates.load(Ordering::SeqCst),
            evictions: self.evictions.load(Ordering::SeqCst),
        }
    }
}

/// Creates, caches and hands out virtual stubs.
pub struct StubCache {
    table: Arc<CacheTable>,
    registry: RegistryClient,
    sink: Arc<dyn MetricsSink>,
    policy: RepairPolicy,
    strategy: Strategy,
    miss_lock: Mutex<()>,
}

impl StubCache {
    pub fn new(registry: RegistryClient, sink: Arc<dyn MetricsSink>) -> StubCache {
        StubCache {
            table: CacheTable::new(),
            registry,
            sink,
            policy: RepairPolicy::default(),
            strategy: Strategy::VirtualStubRepair,
            miss_lock: Mutex::new(()),
        }
    }

    pub fn with_policy(mut self, policy: RepairPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn table(&self) -> &Arc<CacheTable> {
        &self.table
    }

    pub fn registry(&self) -> &RegistryClient {
        &self.registry
    }

    fn runtime(&self) -> StubRuntime {
        StubRuntime::new(self.registry.clone())
            .with_sink(self.sink.clone())
            .with_cache(self.table.clone())
    }

    /// Return the cached stub for `service_name`, looking it up and caching it
    /// on a miss. Concurrent misses for a name produce a single lookup.
    pub fn get_or_create(&self, service_name: &str) -> Result<Arc<VirtualStub>, StubError> {
        if let Some(stub) = self.hit(service_name)? {
            return Ok(stub);
        }
        let _single_flight = self.miss_lock.lock();
        if let Some(stub) = self.hit(service_name)? {
            return Ok(stub);
        }
        self.table.misses.fetch_add(1, Ordering::SeqCst);
        let record = self.registry.lookup(service_name)?;
        let stub = VirtualStub::new(record, self.policy, self.strategy, self.runtime());
        self.table.put_updated(service_name, &stub);
        Ok(Arc::new(stub))
    }

    fn hit(&self, service_name: &str) -> Result<Option<Arc<VirtualStub>>, StubError> {
        let Some(serialized) = self
            .table
            .entries
            .lock()
            .get(service_name)
            .map(|e| e.serialized_stub.clone())
        else {
            return Ok(None);
        };
        self.table.hits.fetch_add(1, Ordering::SeqCst);
        let snapshot = StubSnapshot::from_json(&serialized)?;
        Ok(Some(Arc::new(VirtualStub::from_snapshot(
            snapshot,
            self.runtime(),
        ))))
    }

    pub fn put_updated(&self, service_name: &str, stub: &VirtualStub) {
        self.table.put_updated(service_name, stub);
    }

    pub fn evict(&self, service_name: &str) {
        self.table.evict(service_name);
    }

    pub fn record(&self, service_name: &str) -> Option<StubRecord> {
        self.table.record(service_name)
    }

    pub fn stats(&self) -> CacheStats {
        self.table.stats()
    }
}
