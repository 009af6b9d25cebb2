//! The processing node: store, callback host and broker behind one
//! serialized command sequence.
//!
//! A command runs in two steps. [`Node::execute`] applies it and stages any
//! events it produces; [`Node::complete`] hands those events to subscribers
//! and finalizes the reply. The server injects protection overhead between
//! the two while still holding the node, so per-channel order is preserved.

use std::sync::Arc;

use crate::host::{HostError, ModuleHost};
use crate::pubsub::{Broker, EventSink, PubSubError, Staged, SubscribeAck, SubscriberId};
use crate::store::{OpKind, OpMask, Store, StoreError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Set { key: Vec<u8>, value: Vec<u8> },
    Get { key: Vec<u8> },
    Del { key: Vec<u8> },
    Subscribe { pattern: Vec<u8> },
    Unsubscribe { pattern: Vec<u8> },
    Publish { channel: Vec<u8>, payload: Vec<u8> },
    RegisterCallback { op_mask: OpMask, key_filter: Vec<u8>, channel: Vec<u8> },
    UnregisterCallback { id: u64 },
}

/// Reply status codes, one byte on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    NotFound = 1,
    EmptyKey = 2,
    KeyTooLong = 3,
    ValueTooLarge = 4,
    InvalidGlob = 5,
    EmptyOpMask = 6,
    InvalidChannelName = 7,
    UnknownId = 8,
    UnknownSubscription = 9,
    BadRequest = 10,
    /// Unsolicited: the subscriber's queue overflowed and the connection is closing.
    Overflow = 11,
}

impl Status {
    pub fn from_code(code: u8) -> Option<Status> {
        use Status::*;
        [
            Ok,
            NotFound,
            EmptyKey,
            KeyTooLong,
            ValueTooLarge,
            InvalidGlob,
            EmptyOpMask,
            InvalidChannelName,
            UnknownId,
            UnknownSubscription,
            BadRequest,
            Overflow,
        ]
        .into_iter()
        .find(|s| *s as u8 == code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Set { version: u64, op: OpKind },
    Get { value: Vec<u8> },
    Del { op: OpKind },
    Subscribed(SubscribeAck),
    Unsubscribed,
    Published { seq: u64, delivered: u32 },
    Registered { id: u64 },
    Unregistered,
    Error { status: Status, message: String },
}

impl Reply {
    pub fn error(status: Status, message: impl ToString) -> Self {
        Reply::Error {
            status,
            message: message.to_string(),
        }
    }

    pub fn status(&self) -> Status {
        match self {
            Reply::Error { status, .. } => *status,
            _ => Status::Ok,
        }
    }
}

impl From<StoreError> for Reply {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::EmptyKey => Status::EmptyKey,
            StoreError::KeyTooLong(_) => Status::KeyTooLong,
            StoreError::ValueTooLarge { .. } => Status::ValueTooLarge,
            StoreError::NotFound => Status::NotFound,
        };
        Reply::error(status, e)
    }
}

impl From<PubSubError> for Reply {
    fn from(e: PubSubError) -> Self {
        let status = match e {
            PubSubError::InvalidGlob(_) => Status::InvalidGlob,
            PubSubError::InvalidChannelName(_) => Status::InvalidChannelName,
            PubSubError::ValueTooLarge { .. } => Status::ValueTooLarge,
            PubSubError::UnknownSubscription => Status::UnknownSubscription,
            PubSubError::UnknownSubscriber(_) => Status::BadRequest,
        };
        Reply::error(status, e)
    }
}

impl From<HostError> for Reply {
    fn from(e: HostError) -> Self {
        let status = match e {
            HostError::InvalidGlob(_) => Status::InvalidGlob,
            HostError::EmptyOpMask => Status::EmptyOpMask,
            HostError::InvalidChannelName(_) => Status::InvalidChannelName,
            HostError::UnknownId(_) => Status::UnknownId,
        };
        Reply::error(status, e)
    }
}

/// A command that has been applied but whose events are not yet delivered.
#[derive(Debug)]
pub struct Executed {
    pub reply: Reply,
    pub staged: Vec<Staged>,
    /// Value or payload bytes the command moved through protected memory.
    pub payload_bytes: usize,
}

#[derive(Debug, Default)]
pub struct Node {
    store: Store,
    host: ModuleHost,
    broker: Broker,
}

impl Node {
    pub fn new(store: Store, broker: Broker) -> Self {
        Node {
            store,
            host: ModuleHost::default(),
            broker,
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn host(&self) -> &ModuleHost {
        &self.host
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    pub fn connect(&mut self, sink: Arc<dyn EventSink>) -> SubscriberId {
        self.broker.connect(sink)
    }

    pub fn disconnect(&mut self, id: SubscriberId) -> bool {
        self.broker.disconnect(id)
    }

    /// Applies `cmd` on behalf of `conn` and stages the resulting events.
    pub fn execute(&mut self, conn: Option<SubscriberId>, cmd: Command) -> Executed {
        let Node { store, host, broker } = self;
        let mut staged = Vec::new();
        let mut sink = |op: OpKind, key: &[u8], value: &[u8]| {
            staged.extend(host.stage(op, key, value, broker));
        };
        let (reply, payload_bytes) = match cmd {
            Command::Set { key, value } => {
                let n = value.len();
                match store.set(&key, &value, &mut sink) {
                    Ok((version, op)) => (Reply::Set { version, op }, n),
                    Err(e) => (e.into(), 0),
                }
            }
            Command::Get { key } => match store.get(&key, &mut sink) {
                Ok(value) => {
                    let n = value.len();
                    (Reply::Get { value }, n)
                }
                Err(e) => (e.into(), 0),
            },
            Command::Del { key } => match store.del(&key, &mut sink) {
                Ok(op) => (Reply::Del { op }, 0),
                Err(e) => (e.into(), 0),
            },
            Command::Publish { channel, payload } => {
                let n = payload.len();
                match broker.stage(&channel, payload) {
                    Ok(s) => {
                        let seq = s.event().seq;
                        staged.push(s);
                        (Reply::Published { seq, delivered: 0 }, n)
                    }
                    Err(e) => (e.into(), 0),
                }
            }
            Command::Subscribe { pattern } => match conn {
                Some(id) => (
                    broker.subscribe(id, &pattern).map_or_else(Reply::from, Reply::Subscribed),
                    0,
                ),
                None => (Reply::error(Status::BadRequest, "subscribe needs a connection"), 0),
            },
            Command::Unsubscribe { pattern } => match conn {
                Some(id) => (
                    broker.unsubscribe(id, &pattern).map_or_else(Reply::from, |()| Reply::Unsubscribed),
                    0,
                ),
                None => (Reply::error(Status::BadRequest, "unsubscribe needs a connection"), 0),
            },
            Command::RegisterCallback {
                op_mask,
                key_filter,
                channel,
            } => (
                host.register(op_mask, &key_filter, &channel)
                    .map_or_else(Reply::from, |id| Reply::Registered { id }),
                0,
            ),
            Command::UnregisterCallback { id } => (
                host.unregister(id).map_or_else(Reply::from, |()| Reply::Unregistered),
                0,
            ),
        };
        Executed {
            reply,
            staged,
            payload_bytes,
        }
    }

    /// Delivers staged events and returns the final reply.
    pub fn complete(&mut self, executed: Executed) -> Reply {
        let Executed { mut reply, staged, .. } = executed;
        let mut total = 0usize;
        for s in staged {
            total += self.broker.deliver(s).delivered;
        }
        if let Reply::Published { delivered, .. } = &mut reply {
            *delivered = total as u32;
        }
        reply
    }

    /// Executes and completes in one step.
    pub fn apply(&mut self, conn: Option<SubscriberId>, cmd: Command) -> Reply {
        let executed = self.execute(conn, cmd);
        self.complete(executed)
    }
}
