use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crate::clock;
use crate::host::split_payload;
use crate::node::{Command, Reply};
use crate::store::{OpKind, OpMask};
use crate::wire::{Client, ClientError, ClientReader, Incoming};

use super::schedule::{payload, payload_digest, schedule};
use super::{BenchError, LatencyRecord, WorkloadSpec};

/// Lead time between setup and the first scheduled send.
const START_LEAD_NS: u64 = 50_000_000;
/// How long subscribers may keep draining after the last send.
const DRAIN_TIMEOUT: Duration = Duration::from_secs(5);
const POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Clone)]
pub struct RunResult {
    pub spec: WorkloadSpec,
    /// One record per scheduled send, in schedule order.
    pub records: Vec<LatencyRecord>,
    pub start_ns: u64,
    pub end_ns: u64,
    /// Sends actually issued before the cutoff.
    pub sent: usize,
    /// Events received by every subscriber.
    pub delivered: usize,
    /// `delivered / duration_s`.
    pub achieved_rate: f64,
    /// Requests the server answered with an error.
    pub error_replies: usize,
    pub payload_digest: String,
}

impl RunResult {
    pub fn elapsed_s(&self) -> f64 {
        (self.end_ns - self.start_ns) as f64 / 1e9
    }
}

struct Arrival {
    index: usize,
    seq: u64,
    publish_ns: u64,
    receive_ns: u64,
}

fn unique_prefix(channel: &str) -> String {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    format!(
        "{channel}.{:x}.{:x}.{}",
        std::process::id(),
        clock::now_ns(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    )
}

struct PublisherOutcome {
    /// `(schedule index, actual send time)` per issued send.
    sends: Vec<(usize, u64)>,
    errors: usize,
}

fn publisher_key(prefix: &str, publisher: usize) -> Vec<u8> {
    format!("{prefix}:p{publisher}").into_bytes()
}

fn reduce_timer_slack() {
    // Default slack is 50us, which would dominate send jitter at high rates.
    // SAFETY: PR_SET_TIMERSLACK only affects the calling thread.
    unsafe {
        libc::prctl(libc::PR_SET_TIMERSLACK, 1000 as libc::c_ulong);
    }
}

/// Asks for the lowest real-time priority so an arriving event is timestamped
/// as soon as it is readable instead of waiting behind other runnable threads.
/// Without the privilege the thread keeps its normal policy.
fn prioritize_receiver() {
    let param = libc::sched_param { sched_priority: 1 };
    // SAFETY: pid 0 is the calling thread; `param` is a valid sched_param.
    let rc = unsafe { libc::sched_setscheduler(0, libc::SCHED_FIFO, &param) };
    if rc != 0 {
        log::debug!("subscriber stays at normal priority: {}", std::io::Error::last_os_error());
    }
}

/// Runs one open-loop measurement against the server at `addr`.
///
/// Subscribers are connected and acknowledged before the first send. Each
/// publisher owns one key; a callback registered for the run maps creates
/// and updates of those keys onto `spec.channel`. The callback and keys are
/// removed afterwards.
pub fn run(spec: &WorkloadSpec, addr: SocketAddr) -> Result<RunResult, BenchError> {
    let sched = schedule(spec)?;
    let n = sched.offsets_ns.len();
    let publishers = spec.publishers;
    let prefix = unique_prefix(&spec.channel);
    let channel = spec.channel.as_bytes();

    let mut control = Client::connect(addr)?;
    let reg_id = control.register_callback(
        OpMask::EMPTY.with(OpKind::Create).with(OpKind::Update),
        format!("{prefix}:*").as_bytes(),
        channel,
    )?;

    let stop = Arc::new(AtomicBool::new(false));
    let expected = Arc::new(AtomicUsize::new(usize::MAX));
    let mut sub_writers = Vec::new();
    let mut sub_threads = Vec::new();
    for s in 0..spec.subscribers {
        let mut client = Client::connect(addr)?;
        client.subscribe(channel)?;
        let (writer, reader) = client.split();
        sub_writers.push(writer);
        let (stop, expected, prefix) = (Arc::clone(&stop), Arc::clone(&expected), prefix.clone());
        sub_threads.push(
            thread::Builder::new()
                .name(format!("bench-sub{s}"))
                .spawn(move || subscriber_loop(reader, &prefix, publishers, &stop, &expected))?,
        );
    }

    let start_ns = clock::now_ns() + START_LEAD_NS;
    let duration_ns = (spec.duration_s * 1e9) as u64;
    let slot_ns = (1e9 / spec.target_rate) as u64;
    let cutoff_ns = start_ns + duration_ns + slot_ns.max(50_000_000);

    let mut pub_threads = Vec::new();
    for (p, indices) in sched.per_publisher.iter().cloned().enumerate() {
        let client = Client::connect(addr)?;
        let (mut writer, mut reader) = client.split();
        let key = publisher_key(&prefix, p);
        let offsets = sched.offsets_ns.clone();
        let (size, seed) = (spec.message_size_bytes, spec.seed);
        // Replies are drained between sends on the same thread, so a reply
        // never wakes a second publisher thread while an event is in flight.
        let sender = thread::Builder::new()
            .name(format!("bench-pub{p}"))
            .spawn(move || -> Result<PublisherOutcome, String> {
                reduce_timer_slack();
                let mut out = PublisherOutcome {
                    sends: Vec::with_capacity(indices.len()),
                    errors: 0,
                };
                let tally = |incoming: Incoming, errors: &mut usize| {
                    if let Incoming::Reply(_, Reply::Error { .. }) = incoming {
                        *errors += 1;
                    }
                };
                // Work between sends happens in the spin window before the
                // next deadline, so right after a send this thread only
                // goes back to sleep.
                for i in indices {
                    let due = start_ns + offsets[i];
                    if clock::now_ns().max(due) > cutoff_ns {
                        break;
                    }
                    clock::sleep_coarse_until_ns(due);
                    let cmd = Command::Set {
                        key: key.clone(),
                        value: payload(seed, i, size),
                    };
                    while let Some(incoming) = reader.try_recv().map_err(|e| e.to_string())? {
                        tally(incoming, &mut out.errors);
                    }
                    clock::spin_until_ns(due);
                    let actual = clock::now_ns();
                    writer.send(&cmd).map_err(|e| e.to_string())?;
                    out.sends.push((i, actual));
                }
                writer.finish().map_err(|e| e.to_string())?;
                loop {
                    match reader.recv() {
                        Ok(incoming) => tally(incoming, &mut out.errors),
                        Err(ClientError::Closed) => return Ok(out),
                        Err(e) => return Err(e.to_string()),
                    }
                }
            })?;
        pub_threads.push(sender);
    }

    let mut lost: Option<String> = None;
    let mut actual_send = vec![None; n];
    let mut sent = 0usize;
    let mut error_replies = 0usize;
    for sender in pub_threads {
        match sender.join().expect("publisher thread panicked") {
            Ok(out) => {
                sent += out.sends.len();
                error_replies += out.errors;
                for (i, t) in out.sends {
                    actual_send[i] = Some(t);
                }
            }
            Err(e) => lost = lost.or(Some(format!("publisher: {e}"))),
        }
    }
    expected.store(sent - error_replies.min(sent), Ordering::SeqCst);

    let drain_deadline = clock::now_ns() + DRAIN_TIMEOUT.as_nanos() as u64;
    while clock::now_ns() < drain_deadline && !sub_threads.iter().all(|t| t.is_finished()) {
        thread::sleep(Duration::from_millis(5));
    }
    stop.store(true, Ordering::SeqCst);
    let end_ns = clock::now_ns();

    let mut receive: Vec<Vec<u64>> = vec![Vec::new(); n];
    let mut seq = vec![None; n];
    let mut publish = vec![None; n];
    for t in sub_threads {
        let (arrivals, error) = t.join().expect("subscriber thread panicked");
        if let Some(e) = error {
            lost = lost.or(Some(format!("subscriber: {e}")));
        }
        for a in arrivals {
            if a.index < n {
                receive[a.index].push(a.receive_ns);
                seq[a.index] = Some(a.seq);
                publish[a.index] = Some(a.publish_ns);
            }
        }
    }

    if lost.is_none() {
        let mut cleanup = || -> Result<(), ClientError> {
            control.unregister_callback(reg_id)?;
            for p in 0..publishers {
                match control.del(&publisher_key(&prefix, p)) {
                    Ok(_) => {}
                    Err(e) if e.status() == Some(crate::node::Status::NotFound) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(())
        };
        if let Err(e) = cleanup() {
            log::warn!("benchmark cleanup failed: {e}");
        }
    }
    for w in sub_writers {
        let _ = w.finish();
    }

    let records: Vec<LatencyRecord> = (0..n)
        .map(|i| LatencyRecord {
            index: i,
            seq: seq[i],
            intended_send_ns: start_ns + sched.offsets_ns[i],
            actual_send_ns: actual_send[i],
            publish_ns: publish[i],
            receive_ns: std::mem::take(&mut receive[i]),
            subscribers: spec.subscribers,
        })
        .collect();
    let delivered = records.iter().filter(|r| r.is_complete()).count();
    let result = RunResult {
        spec: spec.clone(),
        achieved_rate: delivered as f64 / spec.duration_s,
        records,
        start_ns,
        end_ns,
        sent,
        delivered,
        error_replies,
        payload_digest: payload_digest(spec.seed, n, spec.message_size_bytes),
    };
    match lost {
        Some(reason) => Err(BenchError::ConnectionLost {
            reason,
            partial: Box::new(result),
        }),
        None => Ok(result),
    }
}

fn subscriber_loop(
    mut reader: ClientReader,
    prefix: &str,
    publishers: usize,
    stop: &AtomicBool,
    expected: &AtomicUsize,
) -> (Vec<Arrival>, Option<String>) {
    prioritize_receiver();
    let mut arrivals = Vec::new();
    let mut ordinals = vec![0usize; publishers];
    let key_prefix = format!("{prefix}:p");
    if let Err(e) = reader.set_read_timeout(Some(POLL)) {
        return (arrivals, Some(e.to_string()));
    }
    loop {
        if arrivals.len() >= expected.load(Ordering::SeqCst) || stop.load(Ordering::SeqCst) {
            return (arrivals, None);
        }
        match reader.recv() {
            Ok(Incoming::Event(ev)) => {
                let receive_ns = clock::now_ns();
                let Some(p) = split_payload(&ev.payload)
                    .and_then(|(key, _)| key.strip_prefix(key_prefix.as_bytes()))
                    .and_then(|id| std::str::from_utf8(id).ok()?.parse::<usize>().ok())
                    .filter(|&p| p < publishers)
                else {
                    continue;
                };
                let index = ordinals[p] * publishers + p;
                ordinals[p] += 1;
                arrivals.push(Arrival {
                    index,
                    seq: ev.seq,
                    publish_ns: ev.publish_ts,
                    receive_ns,
                });
            }
            Ok(Incoming::Reply(None, Reply::Error { message, .. })) => return (arrivals, Some(message)),
            Ok(Incoming::Reply(..)) => {}
            Err(ClientError::Frame(crate::wire::FrameError::Io(e)))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => return (arrivals, Some(e.to_string())),
        }
    }
}
