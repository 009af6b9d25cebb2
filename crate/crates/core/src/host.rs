//! Callback registrations that turn store commands into channel events.
//!
//! A registration is a declarative rule: an operation mask, a glob over keys
//! and a target channel. When a command matches, one event with payload
//! `key 0x00 value` is published on the target channel. Matches are emitted in
//! ascending registration id.

use rayon::prelude::*;

use crate::glob::{Glob, GlobError};
use crate::pubsub::{validate_channel, Broker, Event, PubSubError, Staged};
use crate::store::{OpKind, OpMask};

/// Above this many registrations, matching runs on the rayon pool.
const PARALLEL_MATCH_THRESHOLD: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HostError {
    #[error("invalid key filter: {0}")]
    InvalidGlob(#[from] GlobError),
    #[error("operation mask is empty")]
    EmptyOpMask,
    #[error("invalid target channel name ({0} bytes)")]
    InvalidChannelName(usize),
    #[error("unknown callback id {0}")]
    UnknownId(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallbackRegistration {
    pub id: u64,
    pub op_mask: OpMask,
    pub key_filter: Glob,
    pub target_channel: Vec<u8>,
}

impl CallbackRegistration {
    pub fn matches(&self, op: OpKind, key: &[u8]) -> bool {
        self.op_mask.contains(op) && self.key_filter.matches(key)
    }
}

/// Builds the event payload for a matched command.
pub fn event_payload(key: &[u8], value: &[u8]) -> Vec<u8> {
    let mut payload = Vec::with_capacity(key.len() + 1 + value.len());
    payload.extend_from_slice(key);
    payload.push(0);
    payload.extend_from_slice(value);
    payload
}

/// Splits a payload built by [`event_payload`] at the first zero byte.
pub fn split_payload(payload: &[u8]) -> Option<(&[u8], &[u8])> {
    let at = payload.iter().position(|&b| b == 0)?;
    Some((&payload[..at], &payload[at + 1..]))
}

#[derive(Debug)]
pub struct ModuleHost {
    registrations: Vec<CallbackRegistration>,
    next_id: u64,
}

impl Default for ModuleHost {
    fn default() -> Self {
        ModuleHost {
            registrations: Vec::new(),
            next_id: 1,
        }
    }
}

impl ModuleHost {
    pub fn register(
        &mut self,
        op_mask: OpMask,
        key_filter: &[u8],
        target_channel: &[u8],
    ) -> Result<u64, HostError> {
        if op_mask.is_empty() {
            return Err(HostError::EmptyOpMask);
        }
        let key_filter = Glob::new(key_filter)?;
        validate_channel(target_channel).map_err(|_| HostError::InvalidChannelName(target_channel.len()))?;
        let id = self.next_id;
        self.next_id += 1;
        self.registrations.push(CallbackRegistration {
            id,
            op_mask,
            key_filter,
            target_channel: target_channel.to_vec(),
        });
        Ok(id)
    }

    pub fn unregister(&mut self, id: u64) -> Result<(), HostError> {
        let idx = self
            .registrations
            .binary_search_by_key(&id, |r| r.id)
            .map_err(|_| HostError::UnknownId(id))?;
        self.registrations.remove(idx);
        Ok(())
    }

    pub fn registrations(&self) -> &[CallbackRegistration] {
        &self.registrations
    }

    /// Registrations triggered by `(op, key)`, in id order.
    pub fn matching(&self, op: OpKind, key: &[u8]) -> Vec<&CallbackRegistration> {
        if self.registrations.len() >= PARALLEL_MATCH_THRESHOLD {
            self.registrations
                .par_iter()
                .filter(|r| r.matches(op, key))
                .collect()
        } else {
            self.registrations
                .iter()
                .filter(|r| r.matches(op, key))
                .collect()
        }
    }

    /// Stages one event per matching registration without delivering it.
    pub fn stage(&self, op: OpKind, key: &[u8], value: &[u8], broker: &mut Broker) -> Vec<Staged> {
        let mut staged = Vec::new();
        for reg in self.matching(op, key) {
            match broker.stage(&reg.target_channel, event_payload(key, value)) {
                Ok(s) => staged.push(s),
                // Only reachable when the broker's payload limit is below the store's.
                Err(PubSubError::ValueTooLarge { len, limit }) => {
                    log::error!("callback {} dropped a {len}-byte payload (limit {limit})", reg.id)
                }
                Err(e) => log::error!("callback {} failed to publish: {e}", reg.id),
            }
        }
        staged
    }

    /// Publishes one event per matching registration and returns the emitted events.
    pub fn dispatch(&self, op: OpKind, key: &[u8], value: &[u8], broker: &mut Broker) -> Vec<Event> {
        self.stage(op, key, value, broker)
            .into_iter()
            .map(|s| {
                let event = s.event().clone();
                broker.deliver(s);
                event
            })
            .collect()
    }
}
