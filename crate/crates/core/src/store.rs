//! In-memory key-value store with CRUD classification.
//!
//! Every successful command hands exactly one `(op, key, value)` triple to a
//! [`MutationSink`]; failed commands hand over nothing.

use std::collections::HashMap;

pub const MAX_KEY_LEN: usize = 512;
pub const DEFAULT_MAX_VALUE_LEN: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Create,
    Read,
    Update,
    Delete,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Create, OpKind::Read, OpKind::Update, OpKind::Delete];

    /// One-byte wire code.
    pub fn code(self) -> u8 {
        match self {
            OpKind::Create => 1,
            OpKind::Read => 2,
            OpKind::Update => 3,
            OpKind::Delete => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => OpKind::Create,
            2 => OpKind::Read,
            3 => OpKind::Update,
            4 => OpKind::Delete,
            _ => return None,
        })
    }

    fn bit(self) -> u8 {
        1 << (self.code() - 1)
    }
}

/// A set of [`OpKind`]s stored as a bitmask (bit 0 Create .. bit 3 Delete).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct OpMask(u8);

impl OpMask {
    pub const EMPTY: OpMask = OpMask(0);
    pub const WRITES: OpMask = OpMask(0b1101);
    pub const ALL: OpMask = OpMask(0b1111);

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits & !0b1111 == 0).then_some(OpMask(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn with(self, op: OpKind) -> Self {
        OpMask(self.0 | op.bit())
    }

    pub fn contains(self, op: OpKind) -> bool {
        self.0 & op.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl FromIterator<OpKind> for OpMask {
    fn from_iter<I: IntoIterator<Item = OpKind>>(iter: I) -> Self {
        iter.into_iter().fold(OpMask::EMPTY, OpMask::with)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("key is empty")]
    EmptyKey,
    #[error("key is {0} bytes, limit is {MAX_KEY_LEN}")]
    KeyTooLong(usize),
    #[error("value is {len} bytes, limit is {limit}")]
    ValueTooLarge { len: usize, limit: usize },
    #[error("key not found")]
    NotFound,
}

/// Receives one call per successful store command.
pub trait MutationSink {
    fn dispatch(&mut self, op: OpKind, key: &[u8], value: &[u8]);
}

impl<F: FnMut(OpKind, &[u8], &[u8])> MutationSink for F {
    fn dispatch(&mut self, op: OpKind, key: &[u8], value: &[u8]) {
        self(op, key, value)
    }
}

/// Sink that drops everything.
pub struct NoDispatch;

impl MutationSink for NoDispatch {
    fn dispatch(&mut self, _: OpKind, _: &[u8], _: &[u8]) {}
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub value: Vec<u8>,
    /// Starts at 1 and resets when the key is deleted and re-created.
    pub version: u64,
}

#[derive(Debug)]
pub struct Store {
    entries: HashMap<Vec<u8>, Entry>,
    max_value_len: usize,
    footprint: u64,
}

impl Default for Store {
    fn default() -> Self {
        Store::new(DEFAULT_MAX_VALUE_LEN)
    }
}

pub fn validate_key(key: &[u8]) -> Result<(), StoreError> {
    if key.is_empty() {
        Err(StoreError::EmptyKey)
    } else if key.len() > MAX_KEY_LEN {
        Err(StoreError::KeyTooLong(key.len()))
    } else {
        Ok(())
    }
}

impl Store {
    pub fn new(max_value_len: usize) -> Self {
        Store {
            entries: HashMap::new(),
            max_value_len,
            footprint: 0,
        }
    }

    pub fn max_value_len(&self) -> usize {
        self.max_value_len
    }

    pub fn set(
        &mut self,
        key: &[u8],
        value: &[u8],
        sink: &mut dyn MutationSink,
    ) -> Result<(u64, OpKind), StoreError> {
        validate_key(key)?;
        if value.len() > self.max_value_len {
            return Err(StoreError::ValueTooLarge {
                len: value.len(),
                limit: self.max_value_len,
            });
        }
        let (version, op) = match self.entries.get_mut(key) {
            Some(entry) => {
                self.footprint -= entry.value.len() as u64;
                entry.value.clear();
                entry.value.extend_from_slice(value);
                entry.version += 1;
                (entry.version, OpKind::Update)
            }
            None => {
                self.footprint += key.len() as u64;
                self.entries.insert(
                    key.to_vec(),
                    Entry {
                        value: value.to_vec(),
                        version: 1,
                    },
                );
                (1, OpKind::Create)
            }
        };
        self.footprint += value.len() as u64;
        sink.dispatch(op, key, value);
        Ok((version, op))
    }

    pub fn get(&self, key: &[u8], sink: &mut dyn MutationSink) -> Result<Vec<u8>, StoreError> {
        let entry = self.entries.get(key).ok_or(StoreError::NotFound)?;
        sink.dispatch(OpKind::Read, key, &entry.value);
        Ok(entry.value.clone())
    }

    /// Removes `key`. The sink sees the value the entry held.
    pub fn del(&mut self, key: &[u8], sink: &mut dyn MutationSink) -> Result<OpKind, StoreError> {
        let entry = self.entries.remove(key).ok_or(StoreError::NotFound)?;
        self.footprint -= (key.len() + entry.value.len()) as u64;
        sink.dispatch(OpKind::Delete, key, &entry.value);
        Ok(OpKind::Delete)
    }

    pub fn entry(&self, key: &[u8]) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Bytes held by keys and values; what a protected deployment keeps resident.
    pub fn footprint(&self) -> u64 {
        self.footprint
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u8], &Entry)> {
        self.entries.iter().map(|(k, e)| (k.as_slice(), e))
    }
}
