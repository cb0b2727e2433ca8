//! Repair timing records and the sinks that collect them.

use std::fmt;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::wire::StubRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairCause {
    StaleIncarnation,
    ConnectionRefused,
    Timeout,
}

impl RepairCause {
    pub fn as_str(self) -> &'static str {
        match self {
            RepairCause::StaleIncarnation => "stale_incarnation",
            RepairCause::ConnectionRefused => "connection_refused",
            RepairCause::Timeout => "timeout",
        }
    }
}

impl fmt::Display for RepairCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One completed repair: failure observed, registry lookup, cache update,
/// retried call. Timestamps are monotonic and nondecreasing in that order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepairEvent {
    pub service_name: String,
    pub cause: RepairCause,
    pub t_fail: Instant,
    pub t_lookup_done: Instant,
    pub t_cache_done: Instant,
    pub t_retry_done: Instant,
    pub lookup_attempts: u32,
    pub old_record: StubRecord,
    pub new_record: StubRecord,
}

impl RepairEvent {
    pub fn d_lookup(&self) -> Duration {
        self.t_lookup_done - self.t_fail
    }

    pub fn d_cache(&self) -> Duration {
        self.t_cache_done - self.t_lookup_done
    }

    pub fn d_retry(&self) -> Duration {
        self.t_retry_done - self.t_cache_done
    }

    pub fn d_total(&self) -> Duration {
        self.t_retry_done - self.t_fail
    }

    pub fn is_ordered(&self) -> bool {
        self.t_fail <= self.t_lookup_done
            && self.t_lookup_done <= self.t_cache_done
            && self.t_cache_done <= self.t_retry_done
    }

    pub fn timings(&self) -> RepairTimings {
        RepairTimings {
            lookup_us: self.d_lookup().as_micros() as u64,
            cache_us: self.d_cache().as_micros() as u64,
            retry_us: self.d_retry().as_micros() as u64,
            total_us: self.d_total().as_micros() as u64,
        }
    }
}

/// Phase durations of one repair in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RepairTimings {
    pub lookup_us: u64,
    pub cache_us: u64,
    pub retry_us: u64,
    pub total_us: u64,
}

pub trait MetricsSink: Send + Sync {
    fn record(&self, event: RepairEvent);
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&self, _event: RepairEvent) {}
}

/// Keeps every event in arrival order.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Mutex<Vec<RepairEvent>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<RepairEvent> {
        self.events.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.events.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn take(&self) -> Vec<RepairEvent> {
        std::mem::take(&mut *self.events.lock())
    }
}

impl MetricsSink for EventLog {
    fn record(&self, event: RepairEvent) {
        self.events.lock().push(event);
    }
}

/// Forwards events over an ordered channel to a single aggregator.
pub struct ChannelSink {
    tx: Mutex<mpsc::Sender<RepairEvent>>,
}

impl ChannelSink {
    pub fn new() -> (ChannelSink, mpsc::Receiver<RepairEvent>) {
        let (tx, rx) = mpsc::channel();
        (ChannelSink { tx: Mutex::new(tx) }, rx)
    }
}

impl MetricsSink for ChannelSink {
    fn record(&self, event: RepairEvent) {
        // A dropped receiver means nobody is aggregating any more.
        let _ = self.tx.lock().send(event);
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
}

impl Summary {
    pub fn of<I: IntoIterator<Item = f64>>(values: I) -> Summary {
        let values: Vec<f64> = values.into_iter().collect();
        let n = values.len();
        if n == 0 {
            return Summary::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_dev = if n > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary { n, mean, std_dev }
    }
}
