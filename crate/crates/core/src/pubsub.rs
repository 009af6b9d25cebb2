//! Channels, subscriptions and fan-out.
//!
//! Sequence numbers are per channel, start at 1 and have no gaps. A subscriber
//! whose patterns overlap on one channel still gets each event once. There is
//! no backlog: subscribing never replays earlier events.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use crate::clock;
use crate::glob::{Glob, GlobError};
use crate::store::{DEFAULT_MAX_VALUE_LEN, MAX_KEY_LEN};

pub const MAX_CHANNEL_LEN: usize = 128;
/// Room for a dispatched `key 0x00 value` payload at the store's limits.
pub const DEFAULT_MAX_PAYLOAD: usize = MAX_KEY_LEN + 1 + DEFAULT_MAX_VALUE_LEN;
pub const DEFAULT_QUEUE_CAPACITY: usize = 65536;

pub type SubscriberId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub channel: Vec<u8>,
    pub seq: u64,
    pub publish_ts: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PubSubError {
    #[error("invalid glob: {0}")]
    InvalidGlob(#[from] GlobError),
    #[error("channel name must be 1..={MAX_CHANNEL_LEN} bytes, got {0}")]
    InvalidChannelName(usize),
    #[error("payload is {len} bytes, limit is {limit}")]
    ValueTooLarge { len: usize, limit: usize },
    #[error("no such subscription")]
    UnknownSubscription,
    #[error("unknown subscriber {0}")]
    UnknownSubscriber(SubscriberId),
}

pub fn validate_channel(channel: &[u8]) -> Result<(), PubSubError> {
    if channel.is_empty() || channel.len() > MAX_CHANNEL_LEN {
        Err(PubSubError::InvalidChannelName(channel.len()))
    } else {
        Ok(())
    }
}

/// The subscriber's queue is full; the broker drops the subscriber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overflow;

/// Where a subscriber's events go. Implementations must preserve push order.
pub trait EventSink: Send + Sync {
    fn push(&self, event: Arc<Event>) -> Result<(), Overflow>;

    /// Called once when the broker drops the subscriber because of overflow.
    fn overflowed(&self) {}
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubscribeAck {
    /// First sequence number delivered for every matching channel that already exists.
    /// Channels created later start at 1.
    pub start_positions: Vec<(Vec<u8>, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Published {
    pub seq: u64,
    pub delivered: usize,
}

/// An event whose sequence number and timestamp are fixed but which has not
/// been handed to subscribers yet.
#[derive(Debug)]
pub struct Staged {
    event: Arc<Event>,
    recipients: Vec<SubscriberId>,
}

impl Staged {
    pub fn event(&self) -> &Event {
        &self.event
    }

    pub fn recipient_count(&self) -> usize {
        self.recipients.len()
    }
}

struct Subscriber {
    patterns: Vec<Glob>,
    sink: Arc<dyn EventSink>,
}

impl Subscriber {
    fn wants(&self, channel: &[u8]) -> bool {
        self.patterns.iter().any(|p| p.matches(channel))
    }
}

pub struct Broker {
    last_seq: HashMap<Vec<u8>, u64>,
    subscribers: BTreeMap<SubscriberId, Subscriber>,
    next_subscriber: SubscriberId,
    max_payload: usize,
}

impl std::fmt::Debug for Broker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Broker")
            .field("channels", &self.last_seq.len())
            .field("subscribers", &self.subscribers.len())
            .field("max_payload", &self.max_payload)
            .finish()
    }
}

impl Default for Broker {
    fn default() -> Self {
        Broker::new(DEFAULT_MAX_PAYLOAD)
    }
}

impl Broker {
    pub fn new(max_payload: usize) -> Self {
        Broker {
            last_seq: HashMap::new(),
            subscribers: BTreeMap::new(),
            next_subscriber: 1,
            max_payload,
        }
    }

    /// Registers a delivery endpoint with no subscriptions yet.
    pub fn connect(&mut self, sink: Arc<dyn EventSink>) -> SubscriberId {
        let id = self.next_subscriber;
        self.next_subscriber += 1;
        self.subscribers.insert(
            id,
            Subscriber {
                patterns: Vec::new(),
                sink,
            },
        );
        id
    }

    /// Drops the subscriber and all its subscriptions. Returns false if unknown.
    pub fn disconnect(&mut self, id: SubscriberId) -> bool {
        self.subscribers.remove(&id).is_some()
    }

    pub fn is_connected(&self, id: SubscriberId) -> bool {
        self.subscribers.contains_key(&id)
    }

    pub fn subscribe(
        &mut self,
        id: SubscriberId,
        pattern: &[u8],
    ) -> Result<SubscribeAck, PubSubError> {
        let glob = Glob::new(pattern)?;
        let sub = self
            .subscribers
            .get_mut(&id)
            .ok_or(PubSubError::UnknownSubscriber(id))?;
        let mut start_positions: Vec<(Vec<u8>, u64)> = self
            .last_seq
            .iter()
            .filter(|(ch, _)| glob.matches(ch))
            .map(|(ch, &last)| (ch.clone(), last + 1))
            .collect();
        start_positions.sort();
        if !sub.patterns.contains(&glob) {
            sub.patterns.push(glob);
        }
        Ok(SubscribeAck { start_positions })
    }

    pub fn unsubscribe(&mut self, id: SubscriberId, pattern: &[u8]) -> Result<(), PubSubError> {
        let sub = self
            .subscribers
            .get_mut(&id)
            .ok_or(PubSubError::UnknownSubscriber(id))?;
        let idx = sub
            .patterns
            .iter()
            .position(|p| p.as_bytes() == pattern)
            .ok_or(PubSubError::UnknownSubscription)?;
        sub.patterns.remove(idx);
        Ok(())
    }

    /// Assigns the next sequence number and timestamp, and fixes the recipient set.
    ///
    /// Staged events must be delivered in the order they were staged, with no
    /// other publish in between, or per-channel FIFO order is lost.
    pub fn stage(&mut self, channel: &[u8], payload: Vec<u8>) -> Result<Staged, PubSubError> {
        validate_channel(channel)?;
        if payload.len() > self.max_payload {
            return Err(PubSubError::ValueTooLarge {
                len: payload.len(),
                limit: self.max_payload,
            });
        }
        let recipients = self
            .subscribers
            .iter()
            .filter(|(_, s)| s.wants(channel))
            .map(|(&id, _)| id)
            .collect();
        let last = self.last_seq.entry(channel.to_vec()).or_insert(0);
        *last += 1;
        let event = Event {
            channel: channel.to_vec(),
            seq: *last,
            publish_ts: clock::now_ns(),
            payload,
        };
        Ok(Staged {
            event: Arc::new(event),
            recipients,
        })
    }

    /// Hands a staged event to its recipients. Subscribers that overflow are dropped.
    pub fn deliver(&mut self, staged: Staged) -> Published {
        let mut delivered = 0;
        for id in staged.recipients {
            let Some(sub) = self.subscribers.get(&id) else {
                continue;
            };
            match sub.sink.push(Arc::clone(&staged.event)) {
                Ok(()) => delivered += 1,
                Err(Overflow) => {
                    log::warn!("subscriber {id} overflowed its queue, disconnecting");
                    sub.sink.overflowed();
                    self.subscribers.remove(&id);
                }
            }
        }
        Published {
            seq: staged.event.seq,
            delivered,
        }
    }

    pub fn publish(&mut self, channel: &[u8], payload: Vec<u8>) -> Result<Published, PubSubError> {
        let staged = self.stage(channel, payload)?;
        Ok(self.deliver(staged))
    }

    /// Last assigned sequence number on `channel`, 0 if nothing was published.
    pub fn last_seq(&self, channel: &[u8]) -> u64 {
        self.last_seq.get(channel).copied().unwrap_or(0)
    }

    pub fn subscriber_count(&self) -> usize {
        self.subscribers.len()
    }
}

/// Bounded in-memory event queue, usable as an [`EventSink`].
pub struct MemorySink {
    state: Mutex<MemoryState>,
    ready: Condvar,
    capacity: usize,
}

#[derive(Default)]
struct MemoryState {
    queue: VecDeque<Arc<Event>>,
    overflowed: bool,
}

impl MemorySink {
    pub fn new(capacity: usize) -> Arc<Self> {
        Arc::new(MemorySink {
            state: Mutex::new(MemoryState::default()),
            ready: Condvar::new(),
            capacity,
        })
    }

    pub fn try_recv(&self) -> Option<Arc<Event>> {
        self.state.lock().unwrap().queue.pop_front()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Arc<Event>> {
        let guard = self.state.lock().unwrap();
        let (mut guard, _) = self
            .ready
            .wait_timeout_while(guard, timeout, |s| s.queue.is_empty())
            .unwrap();
        guard.queue.pop_front()
    }

    pub fn drain(&self) -> Vec<Arc<Event>> {
        self.state.lock().unwrap().queue.drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_overflowed(&self) -> bool {
        self.state.lock().unwrap().overflowed
    }
}

impl EventSink for MemorySink {
    fn push(&self, event: Arc<Event>) -> Result<(), Overflow> {
        let mut state = self.state.lock().unwrap();
        if state.queue.len() >= self.capacity {
            return Err(Overflow);
        }
        state.queue.push_back(event);
        self.ready.notify_one();
        Ok(())
    }

    fn overflowed(&self) {
        self.state.lock().unwrap().overflowed = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sub(broker: &mut Broker) -> (SubscriberId, Arc<MemorySink>) {
        let sink = MemorySink::new(DEFAULT_QUEUE_CAPACITY);
        (broker.connect(sink.clone()), sink)
    }

    #[test]
    fn subscribe_then_publish_delivers() {
        let mut b = Broker::default();
        let (id, sink) = sub(&mut b);
        b.subscribe(id, b"scores").unwrap();
        let p = b.publish(b"scores", b"3-2".to_vec()).unwrap();
        assert_eq!(p, Published { seq: 1, delivered: 1 });
        let ev = sink.try_recv().unwrap();
        assert_eq!(ev.channel, b"scores");
        assert_eq!(ev.payload, b"3-2");
    }

    #[test]
    fn no_replay_for_late_subscriber() {
        let mut b = Broker::default();
        b.publish(b"scores", b"early".to_vec()).unwrap();
        let (id, sink) = sub(&mut b);
        let ack = b.subscribe(id, b"scores").unwrap();
        assert_eq!(ack.start_positions, vec![(b"scores".to_vec(), 2)]);
        assert!(sink.is_empty());
        b.publish(b"scores", b"late".to_vec()).unwrap();
        assert_eq!(sink.try_recv().unwrap().seq, 2);
    }

    #[test]
    fn pattern_subscription() {
        let mut b = Broker::default();
        let (id, sink) = sub(&mut b);
        b.subscribe(id, b"sco?es").unwrap();
        assert_eq!(b.publish(b"scores", vec![]).unwrap().delivered, 1);
        assert_eq!(b.publish(b"scoores", vec![]).unwrap().delivered, 0);
        assert_eq!(sink.len(), 1);
    }

    #[test]
    fn unsubscribe_stops_delivery() {
        let mut b = Broker::default();
        let (id, sink) = sub(&mut b);
        b.subscribe(id, b"c").unwrap();
        b.unsubscribe(id, b"c").unwrap();
        assert_eq!(b.publish(b"c", vec![1]).unwrap().delivered, 0);
        assert!(sink.is_empty());
        assert_eq!(b.unsubscribe(id, b"nope"), Err(PubSubError::UnknownSubscription));
    }

    #[test]
    fn overlapping_patterns_deliver_once() {
        let mut b = Broker::default();
        let (id, sink) = sub(&mut b);
        b.subscribe(id, b"scores").unwrap();
        b.subscribe(id, b"sc*").unwrap();
        assert_eq!(b.publish(b"scores", vec![]).unwrap().delivered, 1);
        b.unsubscribe(id, b"sc*").unwrap();
        assert_eq!(b.publish(b"scores", vec![]).unwrap().delivered, 1);
        assert_eq!(sink.len(), 2);
    }

    #[test]
    fn zero_and_many_subscribers() {
        let mut b = Broker::default();
        assert_eq!(b.publish(b"c", vec![]).unwrap(), Published { seq: 1, delivered: 0 });
        for _ in 0..3 {
            let (id, _) = sub(&mut b);
            b.subscribe(id, b"c").unwrap();
        }
        assert_eq!(b.publish(b"c", vec![]).unwrap(), Published { seq: 2, delivered: 3 });
        assert_eq!(b.publish(b"c", vec![]).unwrap().seq, 3);
    }

    #[test]
    fn channel_and_payload_validation() {
        let mut b = Broker::new(4);
        assert_eq!(b.publish(b"", vec![]), Err(PubSubError::InvalidChannelName(0)));
        assert_eq!(
            b.publish(&[b'c'; MAX_CHANNEL_LEN + 1], vec![]),
            Err(PubSubError::InvalidChannelName(MAX_CHANNEL_LEN + 1))
        );
        assert_eq!(
            b.publish(b"c", vec![0; 5]),
            Err(PubSubError::ValueTooLarge { len: 5, limit: 4 })
        );
        assert_eq!(b.last_seq(b"c"), 0);
        let (id, _) = sub(&mut b);
        assert!(matches!(b.subscribe(id, b""), Err(PubSubError::InvalidGlob(_))));
    }

    #[test]
    fn overflow_disconnects_subscriber() {
        let mut b = Broker::default();
        let sink = MemorySink::new(2);
        let id = b.connect(sink.clone());
        b.subscribe(id, b"c").unwrap();
        for _ in 0..2 {
            assert_eq!(b.publish(b"c", vec![]).unwrap().delivered, 1);
        }
        assert_eq!(b.publish(b"c", vec![]).unwrap().delivered, 0);
        assert!(sink.has_overflowed());
        assert!(!b.is_connected(id));
        assert_eq!(b.publish(b"c", vec![]).unwrap().delivered, 0);
    }

    #[test]
    fn disconnect_stops_delivery() {
        let mut b = Broker::default();
        let (id, sink) = sub(&mut b);
        b.subscribe(id, b"*").unwrap();
        assert!(b.disconnect(id));
        assert_eq!(b.publish(b"c", vec![]).unwrap().delivered, 0);
        assert!(sink.is_empty());
        assert!(!b.disconnect(id));
    }

    #[test]
    fn timestamps_follow_sequence() {
        let mut b = Broker::default();
        let (id, sink) = sub(&mut b);
        b.subscribe(id, b"c").unwrap();
        for _ in 0..100 {
            b.publish(b"c", vec![]).unwrap();
        }
        let events = sink.drain();
        for w in events.windows(2) {
            assert_eq!(w[1].seq, w[0].seq + 1);
            assert!(w[1].publish_ts >= w[0].publish_ts);
        }
    }

    proptest! {
        #[test]
        fn delivered_count_matches_brute_force(
            patterns in prop::collection::vec(
                prop::collection::vec(prop::collection::vec(prop::sample::select(vec![b'a', b'b', b'*', b'?']), 1..5), 0..3),
                0..6),
            channels in prop::collection::vec(prop::collection::vec(prop::sample::select(vec![b'a', b'b']), 1..5), 1..10),
        ) {
            let mut b = Broker::default();
            for pats in &patterns {
                let (id, _) = sub(&mut b);
                for p in pats {
                    b.subscribe(id, p).unwrap();
                }
            }
            for ch in &channels {
                let expected = patterns
                    .iter()
                    .filter(|pats| pats.iter().any(|p| crate::glob::glob_match(p, ch)))
                    .count();
                prop_assert_eq!(b.publish(ch, vec![]).unwrap().delivered, expected);
            }
        }
    }
}
