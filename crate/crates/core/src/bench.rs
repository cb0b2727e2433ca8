//! Measurement scenarios.
//!
//! Each scenario boots an in-process testbed (registry plus service hosts on
//! loopback), drives a scripted workload, injects faults through the hosts'
//! control plane and collects [`RepairEvent`]s over an ordered channel. The
//! distributed setting is simulated by a fixed one-way delay on every message.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::mpsc::Receiver;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use thiserror::Error;

use crate::cache::StubCache;
use crate::metrics::{ChannelSink, RepairEvent, Summary};
use crate::policy::{load_policies, ContextEvent, PolicyEngine, PolicyError, FOLLOW_ME_POLICIES};
use crate::reconfig::{reconfigure, BindingRequest, UserComponent};
use crate::registry::{RegistryClient, RegistryServer};
use crate::service::{HostError, ServiceDescriptor, ServiceHost, ServiceKind};
use crate::stub::{RepairPolicy, Strategy, StubError};
use crate::transport::{reserve_endpoint, Transport, TransportStats};
use crate::wire::ArgValue;

pub const CSV_HEADER: &str =
    "trial,cause,lookup_us,cache_us,retry_us,total_us,lookup_attempts,strategy,setting";

pub const DEFAULT_TRIALS: u32 = 20;
pub const DEFAULT_DISTRIBUTED_LATENCY_MS: u64 = 2;
pub const DEFAULT_CALLS: u32 = 100;

/// Upper bound of mean total repair time over the sum of mean phase times.
pub const MAX_OVERHEAD_RATIO: f64 = 1.25;

const HOST: &str = "127.0.0.1";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("testbed: {0}")]
    Io(#[from] std::io::Error),
    #[error("testbed host: {0}")]
    Host(#[from] HostError),
    #[error("policies: {0}")]
    Policy(#[from] PolicyError),
    #[error("stub: {0}")]
    Stub(#[from] StubError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    FollowMe,
    RepairBench,
    StrategyCompare,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::FollowMe => "follow_me",
            Scenario::RepairBench => "repair_bench",
            Scenario::StrategyCompare => "strategy_compare",
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Scenario::FollowMe,
            Scenario::RepairBench,
            Scenario::StrategyCompare,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
        .ok_or_else(|| format!("unknown scenario {s:?}"))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Local,
    DistributedSim,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Local => "local",
            Setting::DistributedSim => "distributed_sim",
        }
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Setting::Local, Setting::DistributedSim]
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown setting {s:?}"))
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub setting: Setting,
    pub injected_one_way_latency_ms: u64,
    pub trials: u32,
    pub strategy: Strategy,
    pub seed: u64,
    /// Calls per strategy in `strategy_compare`.
    pub calls: u32,
    /// Policy file contents for `follow_me`; the built-in set when absent.
    pub policies: Option<String>,
    pub repair_policy: RepairPolicy,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, setting: Setting) -> Self {
        ScenarioConfig {
            scenario,
            setting,
            injected_one_way_latency_ms: match setting {
                Setting::Local => 0,
                Setting::DistributedSim => DEFAULT_DISTRIBUTED_LATENCY_MS,
            },
            trials: DEFAULT_TRIALS,
            strategy: Strategy::VirtualStubRepair,
            seed: 0,
            calls: DEFAULT_CALLS,
            policies: None,
            repair_policy: RepairPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.trials < 1 {
            return Err(BenchError::Config("trials must be at least 1".into()));
        }
        if self.scenario == Scenario::StrategyCompare && self.calls < 2 {
            return Err(BenchError::Config(
                "strategy_compare needs at least 2 calls".into(),
            ));
        }
        self.repair_policy.validate().map_err(BenchError::Config)
    }

    pub fn latency(&self) -> Duration {
        match self.setting {
            Setting::Local => Duration::ZERO,
            Setting::DistributedSim => Duration::from_millis(self.injected_one_way_latency_ms),
        }
    }
}

/// One CSV row: a repair observed during a trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrialRow {
    pub trial: u32,
    pub cause: String,
    pub lookup_us: u64,
    pub cache_us: u64,
    pub retry_us: u64,
    pub total_us: u64,
    pub lookup_attempts: u32,
    pub strategy: String,
    pub setting: String,
}

/// Workload counters for one strategy in `strategy_compare`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StrategyCounters {
    pub strategy: Strategy,
    pub calls: u32,
    pub calls_after_migration: u32,
    pub lookups: u64,
    pub fresh_lookups: u64,
    pub invoke_messages: u64,
    pub total_messages: u64,
    pub forwarding_hops: u64,
    pub failed_calls: u32,
    pub repair_events: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub setting: Setting,
    pub strategy: Strategy,
    pub trials: u32,
    pub rows: Vec<TrialRow>,
    pub lookup_us: Summary,
    pub cache_us: Summary,
    pub retry_us: Summary,
    pub total_us: Summary,
    /// Round trip of healthy (no repair) calls.
    pub healthy_call_us: Summary,
    pub aborted_trials: u32,
    pub strategies: Vec<StrategyCounters>,
    pub transcript: Vec<String>,
    /// Named assertions that did not hold.
    pub failures: Vec<String>,
}

impl MetricsReport {
    fn new(cfg: &ScenarioConfig) -> Self {
        MetricsReport {
            scenario: cfg.scenario.as_str().to_string(),
            setting: cfg.setting,
            strategy: cfg.strategy,
            trials: cfg.trials,
            rows: Vec::new(),
            lookup_us: Summary::default(),
            cache_us: Summary::default(),
            retry_us: Summary::default(),
            total_us: Summary::default(),
            healthy_call_us: Summary::default(),
            aborted_trials: 0,
            strategies: Vec::new(),
            transcript: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn check(&mut self, ok: bool, name: impl FnOnce() -> String) {
        if !ok {
            let name = name();
            log::warn!("assertion failed: {name}");
            self.failures.push(name);
        }
    }

    fn summarize(&mut self) {
        let col = |f: fn(&TrialRow) -> u64| Summary::of(self.rows.iter().map(|r| f(r) as f64));
        self.lookup_us = col(|r| r.lookup_us);
        self.cache_us = col(|r| r.cache_us);
        self.retry_us = col(|r| r.retry_us);
        self.total_us = col(|r| r.total_us);
    }

    /// Mean lookup + mean cache + mean retry.
    pub fn phase_sum_us(&self) -> f64 {
        self.lookup_us.mean + self.cache_us.mean + self.retry_us.mean
    }

    pub fn strategy(&self, s: Strategy) -> Option<&StrategyCounters> {
        self.strategies.iter().find(|c| c.strategy == s)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(out);
        // The header is written explicitly so an empty report still has one.
        w.write_record(CSV_HEADER.split(','))?;
        for row in &self.rows {
            w.write_record([
                row.trial.to_string(),
                row.cause.clone(),
                row.lookup_us.to_string(),
                row.cache_us.to_string(),
                row.retry_us.to_string(),
                row.total_us.to_string(),
                row.lookup_attempts.to_string(),
                row.strategy.clone(),
                row.setting.clone(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Registry, hosts and client plumbing for one run.
pub struct Testbed {
    pub registry: RegistryServer,
    pub hosts: BTreeMap<String, ServiceHost>,
    pub transport: Transport,
    pub stats: Arc<TransportStats>,
    pub cache: Arc<StubCache>,
    events: Receiver<RepairEvent>,
}

pub type ServiceSpec<'a> = (&'a str, ServiceKind, &'a [(&'a str, ArgValue)]);

/// Services booted for the follow-me scenario.
pub fn follow_me_services() -> Vec<ServiceSpec<'static>> {
    vec![
        ("printer", ServiceKind::Printer, &[]),
        ("screen-office", ServiceKind::Screen, &[]),
        ("screen-kitchen", ServiceKind::Screen, &[]),
        ("light", ServiceKind::Light, &[]),
        ("echo", ServiceKind::Echo, &[]),
    ]
}

impl Testbed {
    pub fn boot(
        services: &[ServiceSpec<'_>],
        latency: Duration,
        strategy: Strategy,
        policy: RepairPolicy,
    ) -> Result<Testbed, BenchError> {
        let stats = TransportStats::new();
        let transport = Transport::new(latency, stats.clone());
        let registry = RegistryServer::start(HOST, 0)?;
        let mut hosts = BTreeMap::new();
        for (name, kind, params) in services {
            let mut desc = ServiceDescriptor::new(
                *name,
                *kind,
                reserve_endpoint(HOST)?,
                reserve_endpoint(HOST)?,
            )?;
            for (k, v) in params.iter() {
                desc = desc.with_param(*k, v.clone());
            }
            let host = ServiceHost::start(desc, registry.endpoint(), transport.clone())?;
            hosts.insert(name.to_string(), host);
        }
        let (sink, events) = ChannelSink::new();
        let client = RegistryClient::new(registry.endpoint().clone(), transport.clone());
        let cache = StubCache::new(client, Arc::new(sink))
            .with_policy(policy)
            .with_strategy(strategy);
        Ok(Testbed {
            registry,
            hosts,
            transport,
            stats,
            cache: Arc::new(cache),
            events,
        })
    }

    pub fn host(&self, name: &str) -> &ServiceHost {
        &self.hosts[name]
    }

    pub fn lookups(&self) -> u64 {
        self.registry.table().stats().counts().lookups
    }

    pub fn drain_events(&self) -> Vec<RepairEvent> {
        self.events.try_iter().collect()
    }

    /// Cached record equals the registry's current record for `name`.
    pub fn cache_coherent(&self, name: &str) -> bool {
        let cached = self.cache.record(name);
        cached.is_some() && cached == self.registry.table().peek(name)
    }

    pub fn crash_restart(&self, name: &str) -> Result<(), BenchError> {
        let host = self.host(name);
        host.crash();
        host.restart()?;
        Ok(())
    }
}

fn row(trial: u32, ev: &RepairEvent, cfg: &ScenarioConfig, strategy: Strategy) -> TrialRow {
    let t = ev.timings();
    TrialRow {
        trial,
        cause: ev.cause.as_str().to_string(),
        lookup_us: t.lookup_us,
        cache_us: t.cache_us,
        retry_us: t.retry_us,
        total_us: t.total_us,
        lookup_attempts: ev.lookup_attempts,
        strategy: strategy.as_str().to_string(),
        setting: cfg.setting.as_str().to_string(),
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsReport, BenchError> {
    cfg.validate()?;
    match cfg.scenario {
        Scenario::FollowMe => follow_me(cfg),
        Scenario::RepairBench => measure_reconfiguration(cfg),
        Scenario::StrategyCompare => compare_strategies(cfg),
    }
}

/// Crash and restart the echo service between two calls, `trials` times,
/// recording the repair each time.
pub fn measure_reconfiguration(cfg: &ScenarioConfig) -> Result<MetricsReport, BenchError> {
    cfg.validate()?;
    let mut report = MetricsReport::new(cfg);
    let bed = Testbed::boot(
        &[("echo", ServiceKind::Echo, &[])],
        cfg.latency(),
        Strategy::VirtualStubRepair,
        cfg.repair_policy,
    )?;
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut healthy = Vec::new();

    for trial in 1..=cfg.trials {
        let user = UserComponent::new(format!("bench-{trial}"), "lab");
        let bound = reconfigure(
            &user,
            &bed.cache,
            &[BindingRequest::new("echo", "echo").expect("static")],
        );
        if !bound.all_bound() {
            report.aborted_trials += 1;
            report.check(false, || {
                format!("trial {trial}: echo binding failed: {bound:?}")
            });
            continue;
        }
        let x: i64 = rng.random_range(-1_000_000..1_000_000);
        let start = Instant::now();
        let warm = user.user_send("echo", "add_one", &[ArgValue::Int(x)]);
        healthy.push(start.elapsed().as_micros() as f64);
        report.check(matches!(warm, Ok(ArgValue::Int(v)) if v == x + 1), || {
            format!("trial {trial}: healthy call returned {warm:?}")
        });
        report.check(bed.drain_events().is_empty(), || {
            format!("trial {trial}: healthy call repaired")
        });

        bed.crash_restart("echo")?;
        let before = bed.lookups();
        let y: i64 = rng.random_range(-1_000_000..1_000_000);
        let repaired = user.user_send("echo", "add_one", &[ArgValue::Int(y)]);
        let lookups = bed.lookups() - before;
        let events = bed.drain_events();

        let ok = matches!(repaired, Ok(ArgValue::Int(v)) if v == y + 1);
        report.check(ok, || {
            format!("trial {trial}: repaired call returned {repaired:?}")
        });
        report.check(lookups == 1, || {
            format!("trial {trial}: {lookups} registry lookups, expected 1")
        });
        report.check(events.len() == 1, || {
            format!("trial {trial}: {} repair events, expected 1", events.len())
        });
        report.check(bed.cache_coherent("echo"), || {
            format!("trial {trial}: cached record differs from registry")
        });
        match events.first() {
            Some(ev) if ok => {
                report.check(ev.is_ordered(), || {
                    format!("trial {trial}: repair timestamps out of order")
                });
                report
                    .rows
                    .push(row(trial, ev, cfg, Strategy::VirtualStubRepair));
            }
            _ => report.aborted_trials += 1,
        }
    }

    report.healthy_call_us = Summary::of(healthy);
    report.summarize();
    let rows = report.rows.len() as u32;
    report.check(rows == cfg.trials, || {
        format!("{rows} of {} trials produced a repair event", cfg.trials)
    });
    let sum = report.phase_sum_us();
    let total = report.total_us.mean;
    report.check(sum <= total && total <= MAX_OVERHEAD_RATIO * sum, || {
        format!("decomposition: phase sum {sum:.1}us, total {total:.1}us")
    });
    Ok(report)
}

/// Same workload under each strategy: `calls` invocations with one migration
/// halfway through. A tracker is left behind only for `tracker_follow`.
pub fn compare_strategies(cfg: &ScenarioConfig) -> Result<MetricsReport, BenchError> {
    cfg.validate()?;
    let mut report = MetricsReport::new(cfg);
    let calls = cfg.calls;
    let migrate_at = calls / 2;
    let after = calls - migrate_at;

    for strategy in Strategy::ALL {
        let bed = Testbed::boot(
            &[("echo", ServiceKind::Echo, &[])],
            cfg.latency(),
            strategy,
            cfg.repair_policy,
        )?;
        let stub = bed.cache.get_or_create("echo")?;
        let lookups_before = bed.lookups();
        let invokes_before = bed.stats.sent("invoke_request");
        let total_before = bed.stats.total();
        let mut rng = StdRng::seed_from_u64(cfg.seed);
        let mut failed = 0;

        for i in 0..calls {
            if i == migrate_at {
                // Only the tracker baseline gets a forwarder; behind one, a
                // virtual stub would never see a failure and never rebind.
                let leave_tracker = strategy == Strategy::TrackerFollow;
                bed.host("echo")
                    .migrate(reserve_endpoint(HOST)?, leave_tracker)?;
            }
            let x: i64 = rng.random_range(-1_000_000..1_000_000);
            match stub.invoke_method("add_one", &[ArgValue::Int(x)]) {
                Ok(ArgValue::Int(v)) if v == x + 1 => {}
                other => {
                    log::debug!("{strategy} call {i} failed: {other:?}");
                    failed += 1;
                }
            }
        }

        let events = bed.drain_events();
        for ev in &events {
            report.rows.push(row(1, ev, cfg, strategy));
        }
        // Tracker forwards go through the host's transport, which shares the counters.
        let host_registers = 1;
        let counters = StrategyCounters {
            strategy,
            calls,
            calls_after_migration: after,
            lookups: bed.lookups() - lookups_before,
            fresh_lookups: stub.counts().fresh_lookups,
            invoke_messages: bed.stats.sent("invoke_request") - invokes_before,
            total_messages: bed.stats.total() - total_before - host_registers,
            forwarding_hops: bed.host("echo").hops(),
            failed_calls: failed,
            repair_events: events.len() as u64,
        };
        if !events.is_empty() {
            report.check(bed.cache_coherent("echo"), || {
                format!("{strategy}: cached record differs from registry")
            });
        }
        match strategy {
            Strategy::RebindPerCall => {
                let n = counters.lookups;
                report.check(n == calls as u64, || {
                    format!("rebind_per_call: {n} lookups, expected {calls}")
                });
            }
            Strategy::TrackerFollow => {
                let (n, hops, msgs) = (
                    counters.lookups,
                    counters.forwarding_hops,
                    counters.invoke_messages,
                );
                report.check(n == 0, || {
                    format!("tracker_follow: {n} lookups, expected 0")
                });
                report.check(hops == after as u64, || {
                    format!("tracker_follow: {hops} hops, expected {after}")
                });
                let want = (calls + after) as u64;
                report.check(msgs == want, || {
                    format!("tracker_follow: {msgs} invoke messages, expected {want}")
                });
            }
            Strategy::VirtualStubRepair => {
                let n = counters.fresh_lookups;
                report.check(n <= 1, || {
                    format!("virtual_stub_repair: {n} successful lookups, expected <= 1")
                });
                let ev = counters.repair_events;
                report.check(ev == n, || {
                    format!("virtual_stub_repair: {ev} repair events for {n} lookups")
                });
            }
        }
        report.check(failed == 0, || format!("{strategy}: {failed} failed calls"));
        report.strategies.push(counters);
    }
    report.summarize();
    Ok(report)
}

/// Scripted follow-me run. Returns the client-visible transcript and the
/// repair events observed, checking receipts and cache coherence as it goes.
fn follow_me_run(
    cfg: &ScenarioConfig,
    trial: u32,
    inject_faults: bool,
    report: &mut MetricsReport,
) -> Result<(Vec<String>, Vec<RepairEvent>), BenchError> {
    let policies = load_policies(cfg.policies.as_deref().unwrap_or(FOLLOW_ME_POLICIES))?;
    let bed = Testbed::boot(
        &follow_me_services(),
        cfg.latency(),
        cfg.strategy,
        cfg.repair_policy,
    )?;
    let engine = PolicyEngine::new(policies, bed.cache.clone());
    let user = Arc::new(UserComponent::new("alice", "hall"));
    user.set_preference("reading_brightness", ArgValue::Int(70));
    engine.add_user(user.clone());

    // Same seed for every run so transcripts are comparable.
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut transcript = Vec::new();
    let mut events = Vec::new();
    let initial = [
        BindingRequest::new("print", "printer").expect("static"),
        BindingRequest::new("light", "light").expect("static"),
    ];
    let bound = reconfigure(&user, &bed.cache, &initial);
    report.check(bound.all_bound(), || {
        format!("trial {trial}: initial bindings failed")
    });

    let send = |role: &str, method: &str, args: Vec<ArgValue>, transcript: &mut Vec<String>| {
        let shown: Vec<String> = args.iter().map(ToString::to_string).collect();
        let line = match user.user_send(role, method, &args) {
            Ok(v) => format!("{role}.{method}({}) = {v}", shown.join(", ")),
            Err(e) => format!("{role}.{method}({}) failed: {e}", shown.join(", ")),
        };
        transcript.push(line);
    };
    let fire = |ev: ContextEvent,
                transcript: &mut Vec<String>,
                report: &mut MetricsReport|
     -> Result<(), BenchError> {
        for a in engine.on_event(&ev)? {
            report.check(a.outcome == crate::policy::ActionOutcome::Done, || {
                format!(
                    "trial {trial}: action {} of {} failed: {:?}",
                    a.action, a.policy_id, a.outcome
                )
            });
            transcript.push(format!("{} -> {}", a.policy_id, a.action));
        }
        Ok(())
    };
    let fault = |name: &str| -> Result<(), BenchError> {
        if inject_faults {
            bed.crash_restart(name)?;
        }
        Ok(())
    };
    let msg = |rng: &mut StdRng, n: u32| format!("note-{n}-{:04}", rng.random_range(0..10_000));

    let m1 = msg(&mut rng, 1);
    let m2 = msg(&mut rng, 2);
    let m3 = msg(&mut rng, 3);
    let m4 = msg(&mut rng, 4);

    fire(
        ContextEvent::new("location_changed", "alice").with_attr("location", "office"),
        &mut transcript,
        report,
    )?;
    send(
        "display",
        "display",
        vec![m1.clone().into()],
        &mut transcript,
    );
    fault("screen-office")?;
    send(
        "display",
        "display",
        vec![m2.clone().into()],
        &mut transcript,
    );
    collect(&bed, "screen-office", trial, &mut events, report);

    fire(
        ContextEvent::new("location_changed", "alice").with_attr("location", "kitchen"),
        &mut transcript,
        report,
    )?;
    send(
        "display",
        "display",
        vec![m3.clone().into()],
        &mut transcript,
    );
    fault("screen-kitchen")?;
    send(
        "display",
        "display",
        vec![m4.clone().into()],
        &mut transcript,
    );
    collect(&bed, "screen-kitchen", trial, &mut events, report);

    send("print", "print", vec![m1.clone().into()], &mut transcript);
    fire(
        ContextEvent::new("activity_changed", "alice").with_attr("activity", "reading"),
        &mut transcript,
        report,
    )?;
    send("light", "get_brightness", vec![], &mut transcript);
    fire(
        ContextEvent::new("activity_changed", "alice").with_attr("activity", "cooking"),
        &mut transcript,
        report,
    )?;

    let shown = |name: &str| -> Vec<String> {
        bed.host(name)
            .receipts()
            .into_iter()
            .map(|r| r.args.first().map(ToString::to_string).unwrap_or_default())
            .collect()
    };
    let office = shown("screen-office");
    let kitchen = shown("screen-kitchen");
    report.check(office == [m1.clone(), m2.clone()], || {
        format!("trial {trial}: screen-office received {office:?}")
    });
    report.check(kitchen == [m3.clone(), m4.clone()], || {
        format!("trial {trial}: screen-kitchen received {kitchen:?}")
    });
    let brightness = bed.host("light").receipts().len();
    report.check(brightness == 2, || {
        format!("trial {trial}: light handled {brightness} calls, expected 2")
    });
    Ok((transcript, events))
}

fn collect(
    bed: &Testbed,
    name: &str,
    trial: u32,
    events: &mut Vec<RepairEvent>,
    report: &mut MetricsReport,
) {
    let new = bed.drain_events();
    if !new.is_empty() {
        report.check(bed.cache_coherent(name), || {
            format!("trial {trial}: cached record for {name} differs from registry after repair")
        });
    }
    events.extend(new);
}

pub fn follow_me(cfg: &ScenarioConfig) -> Result<MetricsReport, BenchError> {
    cfg.validate()?;
    let mut report = MetricsReport::new(cfg);
    let (reference, reference_events) = follow_me_run(cfg, 0, false, &mut report)?;
    report.check(reference_events.is_empty(), || {
        "fault-free run performed repairs".to_string()
    });
    report.transcript = reference.clone();

    for trial in 1..=cfg.trials {
        let (transcript, events) = follow_me_run(cfg, trial, true, &mut report)?;
        if transcript != reference {
            report.aborted_trials += 1;
            report.check(false, || {
                format!("trial {trial}: transcript differs from fault-free run: {transcript:?}")
            });
        }
        if cfg.strategy == Strategy::VirtualStubRepair {
            let n = events.len();
            report.check(n == 2, || {
                format!("trial {trial}: {n} repair events, expected 2")
            });
        }
        for ev in &events {
            report.rows.push(row(trial, ev, cfg, cfg.strategy));
        }
    }
    report.summarize();
    Ok(report)
}
