//! Python bindings. Structured values (records, events, reports) cross the
//! boundary as JSON and come out as plain dicts and lists.

use std::collections::HashMap;
use std::sync::mpsc::Receiver;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyBytes, PyString};
use serde_json::json;

use healbind::bench::{run_scenario, ScenarioConfig};
use healbind::cache::StubCache;
use healbind::metrics::{ChannelSink, RepairEvent};
use healbind::policy::{load_policies, ActionOutcome, ContextEvent, PolicyEngine};
use healbind::reconfig::{reconfigure, BindingOutcome, BindingRequest, UserComponent};
use healbind::registry::{RegistryClient, RegistryServer};
use healbind::service::{ControlClient, ServiceDescriptor, ServiceHost, ServiceKind};
use healbind::stub::{Strategy, StubError, VirtualStub};
use healbind::transport::{reserve_endpoint, Transport, TransportStats};
use healbind::wire::{self, ArgValue, Endpoint, Message, StubRecord};

create_exception!(healbind, HealbindError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    HealbindError::new_err(e.to_string())
}

fn stub_err(e: StubError) -> PyErr {
    match e.code() {
        Some(code) => HealbindError::new_err((code.to_string(), e.to_string())),
        None => err(e),
    }
}

fn endpoint(s: &str) -> PyResult<Endpoint> {
    s.parse().map_err(|e| PyValueError::new_err(format!("{e}")))
}

fn to_arg(ob: &Bound<'_, PyAny>) -> PyResult<ArgValue> {
    if ob.is_instance_of::<PyBool>() {
        return Err(PyTypeError::new_err(
            "arguments must be int or str, not bool",
        ));
    }
    if let Ok(s) = ob.cast::<PyString>() {
        return Ok(ArgValue::Text(s.to_str()?.to_string()));
    }
    ob.extract::<i64>()
        .map(ArgValue::Int)
        .map_err(|_| PyTypeError::new_err("arguments must be int (64-bit) or str"))
}

fn to_args(obs: &[Bound<'_, PyAny>]) -> PyResult<Vec<ArgValue>> {
    obs.iter().map(to_arg).collect()
}

fn from_arg(py: Python<'_>, v: &ArgValue) -> PyResult<Py<PyAny>> {
    Ok(match v {
        ArgValue::Int(i) => i.into_pyobject(py)?.into_any().unbind(),
        ArgValue::Text(s) => PyString::new(py, s).into_any().unbind(),
    })
}

fn from_json(py: Python<'_>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    let text = value.to_string();
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn record_json(r: &StubRecord) -> serde_json::Value {
    json!({
        "service_name": r.service_name,
        "endpoint": r.endpoint.to_string(),
        "incarnation": r.incarnation,
    })
}

fn event_json(ev: &RepairEvent) -> serde_json::Value {
    let t = ev.timings();
    json!({
        "service_name": ev.service_name,
        "cause": ev.cause.as_str(),
        "lookup_us": t.lookup_us,
        "cache_us": t.cache_us,
        "retry_us": t.retry_us,
        "total_us": t.total_us,
        "lookup_attempts": ev.lookup_attempts,
        "old_record": record_json(&ev.old_record),
        "new_record": record_json(&ev.new_record),
    })
}

/// A raw command-line value as `int` when it is a 64-bit integer, else `str`.
#[pyfunction]
fn classify_arg(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    from_arg(py, &wire::classify_arg(text))
}

/// Frame a message given as a JSON object string.
#[pyfunction]
fn encode_frame<'py>(py: Python<'py>, message_json: &str) -> PyResult<Bound<'py, PyBytes>> {
    let m: Message =
        serde_json::from_str(message_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(PyBytes::new(py, &wire::encode_frame(&m)))
}

/// Decode the first frame in `data`. Returns `(message_json, bytes_consumed)`.
#[pyfunction]
fn decode_frame(data: &[u8]) -> PyResult<(String, usize)> {
    let (m, used) = wire::decode_frame(data).map_err(err)?;
    Ok((
        String::from_utf8(wire::encode_payload(&m)).expect("JSON is UTF-8"),
        used,
    ))
}

#[pyclass(name = "Registry", frozen)]
struct PyRegistry {
    server: Mutex<Option<RegistryServer>>,
    endpoint: Endpoint,
}

#[pymethods]
impl PyRegistry {
    #[new]
    #[pyo3(signature = (host = "127.0.0.1", port = 0))]
    fn new(host: &str, port: u16) -> PyResult<Self> {
        let server = RegistryServer::start(host, port).map_err(err)?;
        let endpoint = server.endpoint().clone();
        Ok(PyRegistry {
            server: Mutex::new(Some(server)),
            endpoint,
        })
    }

    #[getter]
    fn endpoint(&self) -> String {
        self.endpoint.to_string()
    }

    /// Registry-side counters: lookups, lookups_found, lookups_not_found,
    /// registers, unregisters.
    fn counts(&self) -> PyResult<HashMap<&'static str, u64>> {
        let guard = self.server.lock().unwrap();
        let server = guard.as_ref().ok_or_else(|| err("registry is shut down"))?;
        let c = server.table().stats().counts();
        Ok(HashMap::from([
            ("lookups", c.lookups),
            ("lookups_found", c.lookups_found),
            ("lookups_not_found", c.lookups_not_found),
            ("registers", c.registers),
            ("unregisters", c.unregisters),
        ]))
    }

    /// Current record for `name` without counting a lookup.
    fn peek(&self, py: Python<'_>, name: &str) -> PyResult<Option<Py<PyAny>>> {
        let guard = self.server.lock().unwrap();
        let server = guard.as_ref().ok_or_else(|| err("registry is shut down"))?;
        server
            .table()
            .peek(name)
            .map(|r| from_json(py, &record_json(&r)))
            .transpose()
    }

    fn shutdown(&self) {
        if let Some(mut s) = self.server.lock().unwrap().take() {
            s.shutdown();
        }
    }
}

#[pyclass(name = "ServiceHost", frozen)]
struct PyServiceHost {
    host: Mutex<Option<ServiceHost>>,
}

impl PyServiceHost {
    fn with<T>(&self, f: impl FnOnce(&ServiceHost) -> PyResult<T>) -> PyResult<T> {
        let guard = self.host.lock().unwrap();
        f(guard
            .as_ref()
            .ok_or_else(|| err("service host is stopped"))?)
    }
}

#[pymethods]
impl PyServiceHost {
    /// Start `name` of `kind` on fresh local ports and register it.
    #[new]
    #[pyo3(signature = (name, kind, registry, params = None))]
    fn new(
        py: Python<'_>,
        name: &str,
        kind: &str,
        registry: &str,
        params: Option<HashMap<String, Bound<'_, PyAny>>>,
    ) -> PyResult<Self> {
        let kind: ServiceKind = kind.parse().map_err(PyValueError::new_err)?;
        let registry = endpoint(registry)?;
        let mut desc = ServiceDescriptor::new(
            name,
            kind,
            reserve_endpoint("127.0.0.1").map_err(err)?,
            reserve_endpoint("127.0.0.1").map_err(err)?,
        )
        .map_err(err)?;
        for (k, v) in params.unwrap_or_default() {
            desc = desc.with_param(k, to_arg(&v)?);
        }
        let host = py
            .detach(|| ServiceHost::start(desc, &registry, Transport::default()))
            .map_err(err)?;
        Ok(PyServiceHost {
            host: Mutex::new(Some(host)),
        })
    }

    fn record(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        self.with(|h| from_json(py, &record_json(&h.record())))
    }

    #[getter]
    fn control_endpoint(&self) -> PyResult<String> {
        self.with(|h| Ok(h.control_endpoint().to_string()))
    }

    fn is_running(&self) -> PyResult<bool> {
        self.with(|h| Ok(h.is_running()))
    }

    fn crash(&self) -> PyResult<()> {
        self.with(|h| {
            h.crash();
            Ok(())
        })
    }

    fn restart(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let rec = self.with(|h| py.detach(|| h.restart()).map_err(err))?;
        from_json(py, &record_json(&rec))
    }

    /// Move to a fresh local port, optionally leaving a forwarder behind.
    #[pyo3(signature = (leave_tracker = false))]
    fn migrate(&self, py: Python<'_>, leave_tracker: bool) -> PyResult<Py<PyAny>> {
        let ep = reserve_endpoint("127.0.0.1").map_err(err)?;
        let rec = self.with(|h| py.detach(|| h.migrate(ep, leave_tracker)).map_err(err))?;
        from_json(py, &record_json(&rec))
    }

    fn hops(&self) -> PyResult<u64> {
        self.with(|h| Ok(h.hops()))
    }

    fn served(&self) -> PyResult<u64> {
        self.with(|h| Ok(h.served()))
    }

    fn stop(&self) -> PyResult<()> {
        match self.host.lock().unwrap().take() {
            Some(h) => h.stop().map_err(err),
            None => Ok(()),
        }
    }
}

/// Restart a host through its control endpoint.
#[pyfunction]
fn control_restart(py: Python<'_>, control_endpoint: &str) -> PyResult<Py<PyAny>> {
    let ctl = ControlClient::new(endpoint(control_endpoint)?, Transport::default());
    let rec = py.detach(|| ctl.restart()).map_err(err)?;
    from_json(py, &record_json(&rec))
}

#[pyclass(name = "StubCache", frozen)]
struct PyStubCache {
    cache: Arc<StubCache>,
    events: Mutex<Receiver<RepairEvent>>,
    stats: Arc<TransportStats>,
}

#[pymethods]
impl PyStubCache {
    #[new]
    #[pyo3(signature = (registry, strategy = "virtual_stub_repair", latency_ms = 0))]
    fn new(registry: &str, strategy: &str, latency_ms: u64) -> PyResult<Self> {
        let strategy: Strategy = strategy.parse().map_err(PyValueError::new_err)?;
        let stats = TransportStats::new();
        let transport = Transport::new(Duration::from_millis(latency_ms), stats.clone());
        let (sink, events) = ChannelSink::new();
        let client = RegistryClient::new(endpoint(registry)?, transport);
        let cache = StubCache::new(client, Arc::new(sink)).with_strategy(strategy);
        Ok(PyStubCache {
            cache: Arc::new(cache),
            events: Mutex::new(events),
            stats,
        })
    }

    fn get_or_create(&self, py: Python<'_>, service_name: &str) -> PyResult<PyVirtualStub> {
        let cache = self.cache.clone();
        let stub = py
            .detach(|| cache.get_or_create(service_name))
            .map_err(stub_err)?;
        Ok(PyVirtualStub { inner: stub })
    }

    fn record(&self, py: Python<'_>, service_name: &str) -> PyResult<Option<Py<PyAny>>> {
        self.cache
            .record(service_name)
            .map(|r| from_json(py, &record_json(&r)))
            .transpose()
    }

    fn evict(&self, service_name: &str) {
        self.cache.evict(service_name);
    }

    fn stats(&self) -> HashMap<&'static str, u64> {
        let s = self.cache.stats();
        HashMap::from([
            ("hits", s.hits),
            ("misses", s.misses),
            ("updates", s.updates),
            ("evictions", s.evictions),
        ])
    }

    /// Messages sent by this cache's stubs, by message type.
    fn messages_sent(&self) -> HashMap<&'static str, u64> {
        self.stats.snapshot().into_iter().collect()
    }

    /// Repair events recorded since the last call.
    fn drain_events(&self, py: Python<'_>) -> PyResult<Vec<Py<PyAny>>> {
        let evs: Vec<RepairEvent> = self.events.lock().unwrap().try_iter().collect();
        evs.iter().map(|e| from_json(py, &event_json(e))).collect()
    }
}

#[pyclass(name = "VirtualStub", frozen)]
struct PyVirtualStub {
    inner: Arc<VirtualStub>,
}

#[pymethods]
impl PyVirtualStub {
    #[getter]
    fn service_name(&self) -> &str {
        self.inner.service_name()
    }

    #[getter]
    fn strategy(&self) -> &'static str {
        self.inner.strategy().as_str()
    }

    fn current(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        from_json(py, &record_json(&self.inner.current()))
    }

    #[pyo3(signature = (method, *args))]
    fn invoke(
        &self,
        py: Python<'_>,
        method: &str,
        args: Vec<Bound<'_, PyAny>>,
    ) -> PyResult<Py<PyAny>> {
        let args = to_args(&args)?;
        let stub = self.inner.clone();
        let v = py
            .detach(|| stub.invoke_method(method, &args))
            .map_err(stub_err)?;
        from_arg(py, &v)
    }

    fn counts(&self) -> HashMap<&'static str, u64> {
        let c = self.inner.counts();
        HashMap::from([
            ("invokes", c.invokes),
            ("lookups", c.lookups),
            ("fresh_lookups", c.fresh_lookups),
            ("repairs", c.repairs),
        ])
    }

    fn serialize(&self) -> String {
        self.inner.serialize()
    }
}

#[pyclass(name = "UserComponent", frozen)]
struct PyUser {
    inner: Arc<UserComponent>,
}

#[pymethods]
impl PyUser {
    #[new]
    #[pyo3(signature = (user_id, location = ""))]
    fn new(user_id: &str, location: &str) -> Self {
        PyUser {
            inner: Arc::new(UserComponent::new(user_id, location)),
        }
    }

    #[getter]
    fn user_id(&self) -> &str {
        self.inner.user_id()
    }

    fn set_preference(&self, key: &str, value: Bound<'_, PyAny>) -> PyResult<()> {
        self.inner.set_preference(key, to_arg(&value)?);
        Ok(())
    }

    fn get_preference(&self, py: Python<'_>, key: &str) -> PyResult<Option<Py<PyAny>>> {
        self.inner
            .get_preference(key)
            .map(|v| from_arg(py, &v))
            .transpose()
    }

    fn roles(&self) -> Vec<String> {
        self.inner.roles()
    }

    /// Bind each `(role, service_name)` through `cache`. Returns
    /// `(role, service_name, outcome)` with outcome `bound`, `not_found` or
    /// an error message.
    fn reconfigure(
        &self,
        py: Python<'_>,
        cache: &PyStubCache,
        requests: Vec<(String, String)>,
    ) -> PyResult<Vec<(String, String, String)>> {
        let reqs = requests
            .into_iter()
            .map(|(r, s)| BindingRequest::new(r, s).map_err(err))
            .collect::<PyResult<Vec<_>>>()?;
        let user = self.inner.clone();
        let cache = cache.cache.clone();
        let report = py.detach(|| reconfigure(&user, &cache, &reqs));
        Ok(report
            .entries
            .into_iter()
            .map(|(req, o)| {
                let o = match o {
                    BindingOutcome::Bound => "bound".to_string(),
                    BindingOutcome::NotFound => "not_found".to_string(),
                    BindingOutcome::Failed(e) => e,
                };
                (req.role, req.service_name, o)
            })
            .collect())
    }

    #[pyo3(signature = (role, method, *args))]
    fn send(
        &self,
        py: Python<'_>,
        role: &str,
        method: &str,
        args: Vec<Bound<'_, PyAny>>,
    ) -> PyResult<Py<PyAny>> {
        let args = to_args(&args)?;
        let user = self.inner.clone();
        let v = py
            .detach(|| user.user_send(role, method, &args))
            .map_err(|e| match e {
                healbind::reconfig::BindError::Stub(s) => stub_err(s),
                other => err(other),
            })?;
        from_arg(py, &v)
    }

    fn adapt(
        &self,
        py: Python<'_>,
        role: &str,
        method: &str,
        value: Bound<'_, PyAny>,
    ) -> PyResult<Py<PyAny>> {
        let value = to_arg(&value)?;
        let user = self.inner.clone();
        let v = py
            .detach(|| healbind::adapt::adapt(&user, role, method, value))
            .map_err(|e| match e {
                healbind::reconfig::BindError::Stub(s) => stub_err(s),
                other => err(other),
            })?;
        from_arg(py, &v)
    }
}

#[pyclass(name = "PolicyEngine", frozen)]
struct PyPolicyEngine {
    inner: Arc<PolicyEngine>,
}

fn context_event(
    name: &str,
    subject: &str,
    attrs: Option<HashMap<String, Bound<'_, PyAny>>>,
) -> PyResult<ContextEvent> {
    let mut ev = ContextEvent::new(name, subject);
    for (k, v) in attrs.unwrap_or_default() {
        ev = ev.with_attr(k, to_arg(&v)?);
    }
    Ok(ev)
}

#[pymethods]
impl PyPolicyEngine {
    /// `source` is the text of a policy file; `None` loads the built-in
    /// follow-me policies.
    #[new]
    #[pyo3(signature = (cache, source = None))]
    fn new(cache: &PyStubCache, source: Option<&str>) -> PyResult<Self> {
        let set =
            load_policies(source.unwrap_or(healbind::policy::FOLLOW_ME_POLICIES)).map_err(err)?;
        Ok(PyPolicyEngine {
            inner: Arc::new(PolicyEngine::new(set, cache.cache.clone())),
        })
    }

    fn add_user(&self, user: &PyUser) {
        self.inner.add_user(user.inner.clone());
    }

    #[pyo3(signature = (name, subject, attrs = None))]
    fn triggered(
        &self,
        name: &str,
        subject: &str,
        attrs: Option<HashMap<String, Bound<'_, PyAny>>>,
    ) -> PyResult<Vec<String>> {
        let ev = context_event(name, subject, attrs)?;
        let user = self
            .inner
            .user(subject)
            .ok_or_else(|| err(format!("unknown user {subject:?}")))?;
        Ok(self.inner.triggered(&ev, &user))
    }

    /// Run the event. Returns `(policy_id, action, outcome)` per action, where
    /// outcome is `done` or the failure text.
    #[pyo3(signature = (name, subject, attrs = None))]
    fn on_event(
        &self,
        py: Python<'_>,
        name: &str,
        subject: &str,
        attrs: Option<HashMap<String, Bound<'_, PyAny>>>,
    ) -> PyResult<Vec<(String, String, String)>> {
        let ev = context_event(name, subject, attrs)?;
        let engine = self.inner.clone();
        let done = py.detach(|| engine.on_event(&ev)).map_err(err)?;
        Ok(done
            .into_iter()
            .map(|a| {
                let outcome = match a.outcome {
                    ActionOutcome::Done => "done".to_string(),
                    ActionOutcome::Failed(e) => e,
                };
                (a.policy_id, a.action.to_string(), outcome)
            })
            .collect())
    }
}

/// Run a bench scenario and return its report as a dict.
#[pyfunction]
#[pyo3(signature = (scenario, setting = "local", trials = 20, strategy = "virtual_stub_repair", seed = 0, latency_ms = None, calls = 100, policies = None, out = None))]
#[allow(clippy::too_many_arguments)]
fn run_bench(
    py: Python<'_>,
    scenario: &str,
    setting: &str,
    trials: u32,
    strategy: &str,
    seed: u64,
    latency_ms: Option<u64>,
    calls: u32,
    policies: Option<String>,
    out: Option<String>,
) -> PyResult<Py<PyAny>> {
    let mut cfg = ScenarioConfig::new(
        scenario.parse().map_err(PyValueError::new_err)?,
        setting.parse().map_err(PyValueError::new_err)?,
    );
    cfg.trials = trials;
    cfg.strategy = strategy.parse().map_err(PyValueError::new_err)?;
    cfg.seed = seed;
    cfg.calls = calls;
    cfg.policies = policies;
    if let Some(ms) = latency_ms {
        cfg.injected_one_way_latency_ms = ms;
    }
    let report = py.detach(|| run_scenario(&cfg)).map_err(err)?;
    if let Some(path) = out {
        let f = std::fs::File::create(&path).map_err(err)?;
        report.write_csv(f).map_err(err)?;
    }
    let mut value = serde_json::to_value(&report).map_err(err)?;
    value["passed"] = json!(report.passed());
    from_json(py, &value)
}

#[pymodule]
#[pyo3(name = "healbind")]
fn healbind_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HealbindError", m.py().get_type::<HealbindError>())?;
    m.add("CSV_HEADER", healbind::bench::CSV_HEADER)?;
    m.add_function(wrap_pyfunction!(classify_arg, m)?)?;
    m.add_function(wrap_pyfunction!(encode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(decode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(control_restart, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add_class::<PyRegistry>()?;
    m.add_class::<PyServiceHost>()?;
    m.add_class::<PyStubCache>()?;
    m.add_class::<PyVirtualStub>()?;
    m.add_class::<PyUser>()?;
    m.add_class::<PyPolicyEngine>()?;
    Ok(())
}
