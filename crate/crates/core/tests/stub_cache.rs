mod common;

use std::sync::Arc;
use std::thread;

use proptest::prelude::*;

use healbind::cache::StubCache;
use healbind::metrics::{EventLog, MetricsSink, NullSink};
use healbind::registry::RegistryServer;
use healbind::service::ServiceKind;
use healbind::stub::{RepairPolicy, Strategy, StubError, StubSnapshot};
use healbind::transport::Transport;
use healbind::wire::ArgValue;

fn cache(reg: &RegistryServer) -> StubCache {
    StubCache::new(
        common::client(reg, Transport::default()),
        Arc::new(NullSink),
    )
}

#[test]
fn miss_then_hits() {
    let reg = common::registry();
    let h = common::host(&reg, "printer", ServiceKind::Printer);
    let c = cache(&reg);
    let a = c.get_or_create("printer").unwrap();
    let b = c.get_or_create("printer").unwrap();
    let d = c.get_or_create("printer").unwrap();
    assert_eq!(a.current(), h.record());
    assert_eq!(b.current(), a.current());
    assert_eq!(d.current(), a.current());
    let s = c.stats();
    assert_eq!((s.misses, s.hits), (1, 2));
    assert_eq!(reg.table().stats().counts().lookups, 1);
    assert_eq!(c.record("printer"), Some(h.record()));
}

#[test]
fn not_found_creates_no_entry() {
    let reg = common::registry();
    let c = cache(&reg);
    let err = c.get_or_create("ghost").unwrap_err();
    assert!(matches!(err, StubError::NotFound(_)));
    assert!(c.table().is_empty());
    assert_eq!(c.stats().misses, 1);
    // The failure is not cached either.
    assert!(c.get_or_create("ghost").is_err());
    assert_eq!(reg.table().stats().counts().lookups, 2);
}

#[test]
fn repair_pushes_updated_copy() {
    let reg = common::registry();
    let h = common::host(&reg, "echo", ServiceKind::Echo);
    let c = cache(&reg);
    let stub = c.get_or_create("echo").unwrap();
    let created = c.table().entry("echo").unwrap();
    h.crash();
    h.restart().unwrap();
    stub.invoke_method("echo", &[ArgValue::Text("x".into())])
        .unwrap();
    let updated = c.table().entry("echo").unwrap();
    assert_eq!(updated.record, h.record());
    assert_eq!(updated.created_at, created.created_at);
    assert!(updated.updated_at >= created.updated_at);
    assert_eq!(c.stats().updates, 2);
    // A later hit starts from the repaired record and needs no lookup.
    let before = reg.table().stats().counts().lookups;
    let again = c.get_or_create("echo").unwrap();
    assert_eq!(again.current(), h.record());
    again
        .invoke_method("echo", &[ArgValue::Text("y".into())])
        .unwrap();
    assert_eq!(reg.table().stats().counts().lookups, before);
}

#[test]
fn put_updated_creates_missing_entry() {
    let reg = common::registry();
    let _h = common::host(&reg, "echo", ServiceKind::Echo);
    let c1 = cache(&reg);
    let c2 = cache(&reg);
    let stub = c1.get_or_create("echo").unwrap();
    assert!(c2.record("echo").is_none());
    c2.put_updated("echo", &stub);
    assert_eq!(c2.record("echo"), Some(stub.current()));
    c2.get_or_create("echo").unwrap();
    assert_eq!(c2.stats().hits, 1);
}

#[test]
fn evict_counts_only_present_entries() {
    let reg = common::registry();
    let _h = common::host(&reg, "echo", ServiceKind::Echo);
    let c = cache(&reg);
    c.get_or_create("echo").unwrap();
    c.evict("echo");
    c.evict("echo");
    c.evict("never");
    assert_eq!(c.stats().evictions, 1);
    c.get_or_create("echo").unwrap();
    assert_eq!(c.stats().misses, 2);
}

#[test]
fn hits_keep_policy_strategy_and_sink() {
    let reg = common::registry();
    let h = common::host(&reg, "echo", ServiceKind::Echo);
    let log = Arc::new(EventLog::new());
    let sink: Arc<dyn MetricsSink> = log.clone();
    let policy = RepairPolicy {
        max_repair_cycles: 1,
        ..RepairPolicy::default()
    };
    let c = StubCache::new(common::client(&reg, Transport::default()), sink)
        .with_policy(policy)
        .with_strategy(Strategy::VirtualStubRepair);
    c.get_or_create("echo").unwrap();
    let hit = c.get_or_create("echo").unwrap();
    assert_eq!(*hit.policy(), policy);
    assert_eq!(hit.strategy(), Strategy::VirtualStubRepair);
    h.crash();
    h.restart().unwrap();
    hit.invoke_method("echo", &[ArgValue::Text("x".into())])
        .unwrap();
    assert_eq!(log.len(), 1);
}

#[test]
fn concurrent_misses_single_lookup() {
    let reg = common::registry();
    let _h = common::host(&reg, "screen", ServiceKind::Screen);
    let c = Arc::new(cache(&reg));
    thread::scope(|s| {
        for _ in 0..16 {
            let c = c.clone();
            s.spawn(move || c.get_or_create("screen").unwrap());
        }
    });
    assert_eq!(reg.table().stats().counts().lookups, 1);
    let st = c.stats();
    assert_eq!((st.misses, st.hits), (1, 15));
}

fn strategy_of(i: u8) -> Strategy {
    Strategy::ALL[i as usize % 3]
}

proptest! {
    #[test]
    fn snapshot_json_roundtrip(
        seed in any::<u64>(),
        cycles in 1u32..10,
        attempts in 1u32..20,
        initial in 1u64..500,
        factor in 1u32..5,
        extra in 0u64..5000,
        timeout in 1u64..10_000,
        s in any::<u8>(),
    ) {
        let mut rng = common::rng(seed);
        let record = common::record(&mut rng);
        let snap = StubSnapshot {
            service_name: record.service_name.clone(),
            record,
            policy: RepairPolicy {
                max_repair_cycles: cycles,
                max_lookup_attempts_per_cycle: attempts,
                backoff_initial_ms: initial,
                backoff_factor: factor,
                backoff_cap_ms: initial + extra,
                invoke_timeout_ms: timeout,
            },
            strategy: strategy_of(s),
        };
        let back = StubSnapshot::from_json(&snap.to_json()).unwrap();
        prop_assert_eq!(back, snap);
    }
}
