//! Byte-oriented glob patterns: literal bytes, `*` (any run, including empty)
//! and `?` (exactly one byte). There is no escaping and no character classes.

use std::fmt;

/// Longest accepted pattern, in bytes.
pub const MAX_PATTERN_LEN: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GlobError {
    #[error("glob pattern is empty")]
    Empty,
    #[error("glob pattern is {0} bytes, limit is {MAX_PATTERN_LEN}")]
    TooLong(usize),
}

/// A validated glob pattern.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Glob {
    pattern: Vec<u8>,
}

impl Glob {
    pub fn new(pattern: impl Into<Vec<u8>>) -> Result<Self, GlobError> {
        let pattern = pattern.into();
        if pattern.is_empty() {
            return Err(GlobError::Empty);
        }
        if pattern.len() > MAX_PATTERN_LEN {
            return Err(GlobError::TooLong(pattern.len()));
        }
        Ok(Glob { pattern })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pattern
    }

    /// True when the pattern has no wildcards, i.e. it names exactly one string.
    pub fn is_literal(&self) -> bool {
        !self.pattern.iter().any(|&b| b == b'*' || b == b'?')
    }

    pub fn matches(&self, subject: &[u8]) -> bool {
        glob_match(&self.pattern, subject)
    }
}

impl fmt::Debug for Glob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Glob({:?})", String::from_utf8_lossy(&self.pattern))
    }
}

impl fmt::Display for Glob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.pattern))
    }
}

/// Matches `subject` against `pattern` in O(|pattern| * |subject|) worst case.
///
/// Greedy scan remembering the most recent `*`; on mismatch the star absorbs
/// one more byte. Only the latest star needs to be retried because every
/// earlier star can already absorb anything the later one could.
pub fn glob_match(pattern: &[u8], subject: &[u8]) -> bool {
    let (mut p, mut s) = (0usize, 0usize);
    let mut star: Option<(usize, usize)> = None;

    while s < subject.len() {
        match pattern.get(p) {
            Some(b'*') => {
                star = Some((p, s));
                p += 1;
            }
            Some(&c) if c == b'?' || c == subject[s] => {
                p += 1;
                s += 1;
            }
            _ => match star {
                Some((sp, ss)) => {
                    p = sp + 1;
                    s = ss + 1;
                    star = Some((sp, ss + 1));
                }
                None => return false,
            },
        }
    }
    pattern[p..].iter().all(|&b| b == b'*')
}
