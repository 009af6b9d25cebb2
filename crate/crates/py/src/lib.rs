//! Python bindings: an in-process node, the TCP server, the frame codec, the
//! protection cost model and the energy accounting functions.

use std::sync::{Arc, Mutex};

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use evstream::energy::{self, PowerSample, SyntheticPowerModel};
use evstream::protection::ProfileOverrides;
use evstream::pubsub::{MemorySink, SubscriberId};
use evstream::wire::{self, Decoded, ServerConfig};
use evstream::{Command, OpKind, OpMask, ProtectionMode, ProtectionProfile, Reply, Status};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn op_name(op: OpKind) -> &'static str {
    match op {
        OpKind::Create => "create",
        OpKind::Read => "read",
        OpKind::Update => "update",
        OpKind::Delete => "delete",
    }
}

fn parse_ops(ops: Vec<String>) -> PyResult<OpMask> {
    ops.iter().try_fold(OpMask::EMPTY, |mask, name| {
        let op = OpKind::ALL
            .into_iter()
            .find(|op| op_name(*op) == name)
            .ok_or_else(|| value_err(format!("unknown operation {name:?}")))?;
        Ok(mask.with(op))
    })
}

fn reply_err(reply: Reply) -> PyErr {
    match reply {
        Reply::Error {
            status: Status::NotFound | Status::UnknownId,
            message,
        } => PyKeyError::new_err(message),
        Reply::Error { message, .. } => PyValueError::new_err(message),
        other => PyRuntimeError::new_err(format!("unexpected reply {other:?}")),
    }
}

fn profile(mode: &str, per_call_ns: Option<u64>, per_byte_ns: Option<u64>, epc_bytes: Option<u64>, page_penalty_ns: Option<u64>) -> PyResult<ProtectionProfile> {
    let mode: ProtectionMode = mode.parse().map_err(value_err)?;
    ProtectionProfile::preset(mode)
        .with_overrides(ProfileOverrides {
            per_call_ns,
            per_byte_ns,
            epc_capacity_bytes: epc_bytes,
            page_fault_penalty_ns: page_penalty_ns,
        })
        .map_err(value_err)
}

fn samples(points: Vec<(f64, f64)>) -> Vec<PowerSample> {
    points.into_iter().map(|(t, w)| PowerSample::new(t, w)).collect()
}

/// In-process store with callbacks and pub/sub. Events for subscribed
/// patterns collect in an inbox read by `events()`.
#[pyclass(module = "evstream_py")]
struct Node {
    inner: Mutex<(evstream::Node, SubscriberId)>,
    inbox: Arc<MemorySink>,
}

impl Node {
    fn apply(&self, cmd: Command) -> Reply {
        let mut guard = self.inner.lock().expect("node lock poisoned");
        let (node, conn) = &mut *guard;
        let conn = *conn;
        node.apply(Some(conn), cmd)
    }
}

#[pymethods]
impl Node {
    #[new]
    #[pyo3(signature = (inbox_capacity = 65536))]
    fn new(inbox_capacity: usize) -> Self {
        let mut node = evstream::Node::default();
        let inbox = MemorySink::new(inbox_capacity);
        let conn = node.connect(inbox.clone());
        Node {
            inner: Mutex::new((node, conn)),
            inbox,
        }
    }

    /// Returns `(version, "create" | "update")`.
    fn set(&self, key: &[u8], value: &[u8]) -> PyResult<(u64, &'static str)> {
        match self.apply(Command::Set {
            key: key.to_vec(),
            value: value.to_vec(),
        }) {
            Reply::Set { version, op } => Ok((version, op_name(op))),
            other => Err(reply_err(other)),
        }
    }

    /// Returns the value, or None for an absent key.
    fn get<'py>(&self, py: Python<'py>, key: &[u8]) -> PyResult<Option<Bound<'py, PyBytes>>> {
        match self.apply(Command::Get { key: key.to_vec() }) {
            Reply::Get { value } => Ok(Some(PyBytes::new(py, &value))),
            Reply::Error {
                status: Status::NotFound,
                ..
            } => Ok(None),
            other => Err(reply_err(other)),
        }
    }

    /// Returns whether the key existed.
    fn delete(&self, key: &[u8]) -> PyResult<bool> {
        match self.apply(Command::Del { key: key.to_vec() }) {
            Reply::Del { .. } => Ok(true),
            Reply::Error {
                status: Status::NotFound,
                ..
            } => Ok(false),
            other => Err(reply_err(other)),
        }
    }

    /// `ops` is a list drawn from "create", "read", "update", "delete".
    fn register_callback(&self, ops: Vec<String>, key_filter: &[u8], channel: &[u8]) -> PyResult<u64> {
        match self.apply(Command::RegisterCallback {
            op_mask: parse_ops(ops)?,
            key_filter: key_filter.to_vec(),
            channel: channel.to_vec(),
        }) {
            Reply::Registered { id } => Ok(id),
            other => Err(reply_err(other)),
        }
    }

    fn unregister_callback(&self, id: u64) -> PyResult<()> {
        match self.apply(Command::UnregisterCallback { id }) {
            Reply::Unregistered => Ok(()),
            other => Err(reply_err(other)),
        }
    }

    fn subscribe(&self, pattern: &[u8]) -> PyResult<()> {
        match self.apply(Command::Subscribe {
            pattern: pattern.to_vec(),
        }) {
            Reply::Subscribed(_) => Ok(()),
            other => Err(reply_err(other)),
        }
    }

    fn unsubscribe(&self, pattern: &[u8]) -> PyResult<()> {
        match self.apply(Command::Unsubscribe {
            pattern: pattern.to_vec(),
        }) {
            Reply::Unsubscribed => Ok(()),
            other => Err(reply_err(other)),
        }
    }

    /// Returns the event's sequence number on `channel`.
    fn publish(&self, channel: &[u8], payload: &[u8]) -> PyResult<u64> {
        match self.apply(Command::Publish {
            channel: channel.to_vec(),
            payload: payload.to_vec(),
        }) {
            Reply::Published { seq, .. } => Ok(seq),
            other => Err(reply_err(other)),
        }
    }

    /// Drains the inbox as `(channel, seq, publish_ts_ns, payload)` tuples.
    fn events<'py>(&self, py: Python<'py>) -> Vec<(Bound<'py, PyBytes>, u64, u64, Bound<'py, PyBytes>)> {
        self.inbox
            .drain()
            .iter()
            .map(|e| (PyBytes::new(py, &e.channel), e.seq, e.publish_ts, PyBytes::new(py, &e.payload)))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.lock().expect("node lock poisoned").0.store().len()
    }
}

/// The TCP server running on background threads.
#[pyclass(module = "evstream_py")]
struct Server {
    inner: Mutex<Option<wire::Server>>,
    #[pyo3(get)]
    address: String,
}

#[pymethods]
impl Server {
    #[new]
    #[pyo3(signature = (listen = "127.0.0.1:0", profile = "native", per_call_ns = None, per_byte_ns = None, epc_bytes = None, page_penalty_ns = None))]
    fn new(
        listen: &str,
        profile: &str,
        per_call_ns: Option<u64>,
        per_byte_ns: Option<u64>,
        epc_bytes: Option<u64>,
        page_penalty_ns: Option<u64>,
    ) -> PyResult<Self> {
        let p = self::profile(profile, per_call_ns, per_byte_ns, epc_bytes, page_penalty_ns)?;
        let server = wire::serve(listen, evstream::Node::default(), p, ServerConfig::default())
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(Server {
            address: server.local_addr().to_string(),
            inner: Mutex::new(Some(server)),
        })
    }

    /// Total protection delay charged so far, in nanoseconds.
    fn charged_overhead_ns(&self) -> PyResult<u64> {
        match &*self.inner.lock().expect("server lock poisoned") {
            Some(s) => Ok(s.charged_overhead_ns()),
            None => Err(PyRuntimeError::new_err("server is shut down")),
        }
    }

    /// Stops accepting, closes connections and joins the server threads.
    fn shutdown(&self, py: Python<'_>) {
        let server = self.inner.lock().expect("server lock poisoned").take();
        if let Some(s) = server {
            py.detach(|| s.shutdown());
        }
    }
}

/// Delay in nanoseconds the named profile charges one request.
#[pyfunction]
#[pyo3(signature = (profile_name, request_bytes, resident_bytes = 0, per_call_ns = None, per_byte_ns = None, epc_bytes = None, page_penalty_ns = None))]
fn overhead_ns(
    profile_name: &str,
    request_bytes: u64,
    resident_bytes: u64,
    per_call_ns: Option<u64>,
    per_byte_ns: Option<u64>,
    epc_bytes: Option<u64>,
    page_penalty_ns: Option<u64>,
) -> PyResult<u64> {
    Ok(profile(profile_name, per_call_ns, per_byte_ns, epc_bytes, page_penalty_ns)?.overhead_ns(request_bytes, resident_bytes))
}

#[pyfunction]
fn glob_match(pattern: &[u8], subject: &[u8]) -> bool {
    evstream::glob::glob_match(pattern, subject)
}

#[pyfunction]
fn encode_frame<'py>(py: Python<'py>, frame_type: u8, body: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
    Ok(PyBytes::new(py, &wire::encode_frame(frame_type, body).map_err(value_err)?))
}

/// Returns `(frame_type, body, consumed)` for a whole frame at the start of
/// `buf`, or `None` when more bytes are needed. Malformed input raises.
#[pyfunction]
fn decode_frame<'py>(py: Python<'py>, buf: &[u8]) -> PyResult<Option<(u8, Bound<'py, PyBytes>, usize)>> {
    match wire::decode_frame(buf).map_err(value_err)? {
        Decoded::Frame {
            frame_type,
            body,
            consumed,
        } => Ok(Some((frame_type as u8, PyBytes::new(py, body), consumed))),
        Decoded::NeedMore(_) => Ok(None),
    }
}

/// Joules under a trace of `(t_s, watts)` points.
#[pyfunction]
fn integrate(trace: Vec<(f64, f64)>) -> PyResult<f64> {
    energy::integrate(&samples(trace)).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (trace, messages_delivered, baseline_w = None))]
fn energy_per_message<'py>(
    py: Python<'py>,
    trace: Vec<(f64, f64)>,
    messages_delivered: u64,
    baseline_w: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = energy::energy_per_message(&samples(trace), messages_delivered, baseline_w).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("joules_total", r.joules_total)?;
    d.set_item("joules_baseline", r.joules_baseline)?;
    d.set_item("messages_delivered", r.messages_delivered)?;
    d.set_item("joules_per_message", r.joules_per_message)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (p_idle_w, p_max_w, capacity_msgs_per_s, achieved_rate, duration_s, sample_hz = 10.0))]
fn synthesize_trace(
    p_idle_w: f64,
    p_max_w: f64,
    capacity_msgs_per_s: f64,
    achieved_rate: f64,
    duration_s: f64,
    sample_hz: f64,
) -> PyResult<Vec<(f64, f64)>> {
    let model = SyntheticPowerModel::new(p_idle_w, p_max_w, capacity_msgs_per_s).map_err(value_err)?;
    let trace = energy::synthesize_trace(&model, achieved_rate, duration_s, sample_hz).map_err(value_err)?;
    Ok(trace.iter().map(|s| (s.t_s, s.power_w)).collect())
}

/// Least squares line; returns `(slope, intercept, r_squared)`.
#[pyfunction]
fn fit_linear(points: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let f = energy::fit_linear(&points).map_err(value_err)?;
    Ok((f.slope, f.intercept, f.r_squared))
}

#[pymodule]
fn evstream_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Node>()?;
    m.add_class::<Server>()?;
    m.add_function(wrap_pyfunction!(overhead_ns, m)?)?;
    m.add_function(wrap_pyfunction!(glob_match, m)?)?;
    m.add_function(wrap_pyfunction!(encode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(decode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(energy_per_message, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_trace, m)?)?;
    m.add_function(wrap_pyfunction!(fit_linear, m)?)?;
    Ok(())
}
