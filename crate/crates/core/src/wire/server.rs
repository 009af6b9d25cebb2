//! TCP endpoint for the processing node.
//!
//! Each connection gets a reader thread that executes requests in order and a
//! writer thread for output (replies and pushed events) that could not be
//! sent immediately. All requests funnel through one lock around the node, which is
//! the store's serialized command sequence.

use std::collections::{HashMap, VecDeque};
use std::io::{self, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::os::fd::AsRawFd;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};

use crate::node::{Node, Reply, Status};
use crate::protection::{ProfileError, ProtectionGate, ProtectionProfile};
use crate::pubsub::{Event, EventSink, Overflow, SubscriberId, DEFAULT_QUEUE_CAPACITY};

use super::frame::{encode_into, FrameReader, FrameType};
use super::message::{decode_command, encode_event, encode_reply};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: io::Error },
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Clone, Copy)]
pub struct ServerConfig {
    /// Events a subscriber may have queued before it is disconnected.
    pub queue_capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }
}

enum Outbound {
    Reply(FrameType, Reply),
    Event(Arc<Event>),
    Overflow,
    /// Tail of a frame whose head went out on the fast path.
    Raw(Vec<u8>),
}

impl Outbound {
    fn encode(&self, frame: &mut Vec<u8>) -> Result<(), super::frame::FrameError> {
        match self {
            Outbound::Reply(ty, reply) => encode_into(FrameType::Reply, &encode_reply(Some(*ty), reply), frame),
            Outbound::Event(ev) => encode_into(FrameType::Evt, &encode_event(ev), frame),
            Outbound::Overflow => encode_into(
                FrameType::Reply,
                &encode_reply(None, &Reply::error(Status::Overflow, "subscriber queue overflow")),
                frame,
            ),
            Outbound::Raw(bytes) => {
                frame.extend_from_slice(bytes);
                Ok(())
            }
        }
    }
}

#[derive(Default)]
struct OutboxState {
    queue: VecDeque<Outbound>,
    queued_events: usize,
    /// The writer thread holds a batch it has not finished writing.
    busy: bool,
    closed: bool,
}

/// Per-connection outgoing queue; also the connection's [`EventSink`].
///
/// When nothing is queued or being written, the sending thread writes the
/// frame itself with a non-blocking send. Anything that does not fit in the
/// socket buffer goes to the writer thread, as does everything queued behind
/// it, so frames leave in the order they were pushed.
struct Outbox {
    state: Mutex<OutboxState>,
    ready: Condvar,
    stream: TcpStream,
    capacity: usize,
}

impl Outbox {
    fn new(stream: TcpStream, capacity: usize) -> Self {
        Outbox {
            state: Mutex::new(OutboxState::default()),
            ready: Condvar::new(),
            stream,
            capacity,
        }
    }

    fn push_reply(&self, request: FrameType, reply: Reply) {
        let mut s = self.state.lock().unwrap();
        if !s.closed {
            self.send(&mut s, Outbound::Reply(request, reply));
        }
    }

    fn send(&self, s: &mut OutboxState, item: Outbound) {
        if s.busy || !s.queue.is_empty() {
            self.enqueue(s, item);
            return;
        }
        let mut frame = Vec::new();
        if let Err(e) = item.encode(&mut frame) {
            log::error!("cannot encode outgoing frame: {e}");
            return;
        }
        match try_send(&self.stream, &frame) {
            Ok(n) if n == frame.len() => {}
            Ok(n) => {
                s.queue.push_back(Outbound::Raw(frame.split_off(n)));
                self.ready.notify_one();
            }
            Err(_) => {
                let _ = self.stream.shutdown(Shutdown::Both);
                s.closed = true;
                self.ready.notify_one();
            }
        }
    }

    fn enqueue(&self, s: &mut OutboxState, item: Outbound) {
        if matches!(item, Outbound::Event(_)) {
            s.queued_events += 1;
        }
        s.queue.push_back(item);
        self.ready.notify_one();
    }

    fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.ready.notify_one();
    }

    /// Blocks for the next batch; empty once closed and drained.
    fn next_batch(&self, batch: &mut Vec<Outbound>) {
        let guard = self.state.lock().unwrap();
        let mut s = self
            .ready
            .wait_while(guard, |s| s.queue.is_empty() && !s.closed)
            .unwrap();
        batch.extend(s.queue.drain(..));
        s.queued_events = 0;
        s.busy = !batch.is_empty();
    }

    fn batch_done(&self) {
        self.state.lock().unwrap().busy = false;
    }
}

/// Writes what the socket buffer accepts right now, never blocking.
fn try_send(stream: &TcpStream, buf: &[u8]) -> io::Result<usize> {
    let mut sent = 0;
    while sent < buf.len() {
        // SAFETY: the pointer and length describe a live slice; the fd is owned by `stream`.
        let n = unsafe {
            libc::send(
                stream.as_raw_fd(),
                buf[sent..].as_ptr().cast(),
                buf.len() - sent,
                libc::MSG_DONTWAIT | libc::MSG_NOSIGNAL,
            )
        };
        if n >= 0 {
            sent += n as usize;
            continue;
        }
        let err = io::Error::last_os_error();
        match err.kind() {
            io::ErrorKind::WouldBlock => break,
            io::ErrorKind::Interrupted => continue,
            _ => return Err(err),
        }
    }
    Ok(sent)
}

impl EventSink for Outbox {
    fn push(&self, event: Arc<Event>) -> Result<(), Overflow> {
        let mut s = self.state.lock().unwrap();
        if s.closed {
            return Ok(());
        }
        if s.queued_events >= self.capacity {
            return Err(Overflow);
        }
        self.send(&mut s, Outbound::Event(event));
        Ok(())
    }

    fn overflowed(&self) {
        let mut s = self.state.lock().unwrap();
        s.queue.push_back(Outbound::Overflow);
        s.closed = true;
        self.ready.notify_one();
    }
}

struct Core {
    node: Node,
    gate: ProtectionGate,
}

struct Shared {
    core: Mutex<Core>,
    shutting_down: AtomicBool,
    connections: Mutex<HashMap<u64, TcpStream>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
    next_conn: AtomicU64,
    config: ServerConfig,
}

/// A running server. Dropping the handle shuts it down.
pub struct Server {
    shared: Arc<Shared>,
    addr: SocketAddr,
    acceptor: Option<JoinHandle<()>>,
}

/// Binds `addr` and starts serving `node` under `profile`.
pub fn serve(
    addr: impl ToSocketAddrs + std::fmt::Debug,
    node: Node,
    profile: ProtectionProfile,
    config: ServerConfig,
) -> Result<Server, ServerError> {
    let listener = TcpListener::bind(&addr).map_err(|source| ServerError::BindFailure {
        addr: format!("{addr:?}"),
        source,
    })?;
    let local = listener.local_addr().map_err(|source| ServerError::BindFailure {
        addr: format!("{addr:?}"),
        source,
    })?;
    let shared = Arc::new(Shared {
        core: Mutex::new(Core {
            node,
            gate: ProtectionGate::new(profile),
        }),
        shutting_down: AtomicBool::new(false),
        connections: Mutex::new(HashMap::new()),
        workers: Mutex::new(Vec::new()),
        next_conn: AtomicU64::new(1),
        config,
    });
    let acceptor = {
        let shared = Arc::clone(&shared);
        thread::Builder::new()
            .name("evstream-accept".into())
            .spawn(move || accept_loop(listener, shared))
            .expect("spawn acceptor")
    };
    log::info!("listening on {local} with {:?} profile", profile.mode);
    Ok(Server {
        shared,
        addr: local,
        acceptor: Some(acceptor),
    })
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn profile(&self) -> ProtectionProfile {
        *self.shared.core.lock().unwrap().gate.profile()
    }

    /// Swaps the profile. Rejected once any request has been charged.
    pub fn set_profile(&self, profile: ProtectionProfile) -> Result<(), ProfileError> {
        self.shared.core.lock().unwrap().gate.reconfigure(profile)
    }

    /// Total protection delay injected so far.
    pub fn charged_overhead_ns(&self) -> u64 {
        self.shared.core.lock().unwrap().gate.charged_ns()
    }

    pub fn store_footprint(&self) -> u64 {
        self.shared.core.lock().unwrap().node.store().footprint()
    }

    /// Runs `f` against the node under the command lock.
    pub fn with_node<T>(&self, f: impl FnOnce(&mut Node) -> T) -> T {
        f(&mut self.shared.core.lock().unwrap().node)
    }

    pub fn connection_count(&self) -> usize {
        self.shared.connections.lock().unwrap().len()
    }

    /// Stops accepting, lets every connection finish its in-flight request
    /// and flush queued output, then joins all threads.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        let Some(acceptor) = self.acceptor.take() else {
            return;
        };
        self.shared.shutting_down.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        let _ = acceptor.join();
        for stream in self.shared.connections.lock().unwrap().values() {
            let _ = stream.shutdown(Shutdown::Read);
        }
        let workers = std::mem::take(&mut *self.shared.workers.lock().unwrap());
        for w in workers {
            let _ = w.join();
        }
        log::info!("server on {} stopped", self.addr);
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.shutting_down.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        if let Err(e) = start_connection(stream, &shared) {
            log::warn!("dropping connection: {e}");
        }
    }
}

fn start_connection(stream: TcpStream, shared: &Arc<Shared>) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let conn_id = shared.next_conn.fetch_add(1, Ordering::Relaxed);
    let outbox = Arc::new(Outbox::new(stream.try_clone()?, shared.config.queue_capacity));
    let subscriber = shared.core.lock().unwrap().node.connect(outbox.clone());
    shared
        .connections
        .lock()
        .unwrap()
        .insert(conn_id, stream.try_clone()?);

    let writer = {
        let stream = stream.try_clone()?;
        let outbox = Arc::clone(&outbox);
        thread::Builder::new()
            .name(format!("evstream-w{conn_id}"))
            .spawn(move || write_loop(stream, &outbox))?
    };
    let reader = {
        let shared = Arc::clone(shared);
        thread::Builder::new()
            .name(format!("evstream-r{conn_id}"))
            .spawn(move || {
                read_loop(&stream, &shared, subscriber, &outbox);
                shared.core.lock().unwrap().node.disconnect(subscriber);
                outbox.close();
                let _ = writer.join();
                let _ = stream.shutdown(Shutdown::Both);
                shared.connections.lock().unwrap().remove(&conn_id);
            })?
    };
    let mut workers = shared.workers.lock().unwrap();
    workers.retain(|w| !w.is_finished());
    workers.push(reader);
    Ok(())
}

fn read_loop(stream: &TcpStream, shared: &Shared, subscriber: SubscriberId, outbox: &Outbox) {
    let mut reader = FrameReader::new(stream);
    loop {
        let frame = match reader.read_frame() {
            Ok(Some(f)) => f,
            Ok(None) => return,
            Err(e) => {
                log::debug!("closing connection: {e}");
                return;
            }
        };
        let cmd = match decode_command(frame.frame_type, &frame.body) {
            Ok(cmd) => cmd,
            Err(e) => {
                log::debug!("closing connection on malformed request: {e}");
                outbox.push_reply(frame.frame_type, Reply::error(Status::BadRequest, e));
                return;
            }
        };
        let reply = {
            let mut core = shared.core.lock().unwrap();
            let Core { node, gate } = &mut *core;
            let executed = node.execute(Some(subscriber), cmd);
            gate.apply(executed.payload_bytes as u64, node.store().footprint());
            node.complete(executed)
        };
        outbox.push_reply(frame.frame_type, reply);
    }
}

fn write_loop(stream: TcpStream, outbox: &Outbox) {
    let mut out = BufWriter::with_capacity(64 * 1024, &stream);
    let mut batch = Vec::new();
    let mut frame = Vec::new();
    loop {
        outbox.next_batch(&mut batch);
        if batch.is_empty() {
            let _ = out.flush();
            return;
        }
        for item in batch.drain(..) {
            frame.clear();
            if let Err(e) = item.encode(&mut frame) {
                log::error!("cannot encode outgoing frame: {e}");
                continue;
            }
            if out.write_all(&frame).is_err() {
                let _ = stream.shutdown(Shutdown::Both);
                outbox.close();
                return;
            }
            if matches!(item, Outbound::Overflow) {
                let _ = out.flush();
                let _ = stream.shutdown(Shutdown::Both);
                return;
            }
        }
        if out.flush().is_err() {
            let _ = stream.shutdown(Shutdown::Both);
            outbox.close();
            return;
        }
        outbox.batch_done();
    }
}
