//! Length-prefixed frames.
//!
//! ```text
//! +------+------+---------+------+----------------+----------------+
//! | 0x45 | 0x56 | version | type | body_len (u32, big-endian)      | body ...
//! +------+------+---------+------+----------------+----------------+
//! ```

use std::io::{self, Read};

pub const MAGIC: [u8; 2] = [0x45, 0x56];
pub const PROTO_VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 8;
/// 1 MiB of value plus 1 KiB for keys, channel names and fixed fields.
pub const MAX_BODY_LEN: usize = (1 << 20) + 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Set = 0x01,
    Get = 0x02,
    Del = 0x03,
    Sub = 0x10,
    Unsub = 0x11,
    Pub = 0x12,
    Evt = 0x13,
    RegCb = 0x20,
    UnregCb = 0x21,
    Reply = 0x7F,
}

impl FrameType {
    pub const ALL: [FrameType; 10] = [
        FrameType::Set,
        FrameType::Get,
        FrameType::Del,
        FrameType::Sub,
        FrameType::Unsub,
        FrameType::Pub,
        FrameType::Evt,
        FrameType::RegCb,
        FrameType::UnregCb,
        FrameType::Reply,
    ];
}

impl TryFrom<u8> for FrameType {
    type Error = FrameError;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        FrameType::ALL
            .into_iter()
            .find(|t| *t as u8 == code)
            .ok_or(FrameError::UnknownFrameType(code))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("frame body of {0} bytes exceeds the {MAX_BODY_LEN}-byte limit")]
    BodyTooLarge(usize),
    #[error("unknown frame type 0x{0:02x}")]
    UnknownFrameType(u8),
    #[error("stream ended inside a frame")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_frame(frame_type: u8, body: &[u8]) -> Result<Vec<u8>, FrameError> {
    let frame_type = FrameType::try_from(frame_type)?;
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    encode_into(frame_type, body, &mut out)?;
    Ok(out)
}

pub fn encode_into(frame_type: FrameType, body: &[u8], out: &mut Vec<u8>) -> Result<(), FrameError> {
    if body.len() > MAX_BODY_LEN {
        return Err(FrameError::BodyTooLarge(body.len()));
    }
    out.extend_from_slice(&MAGIC);
    out.push(PROTO_VERSION);
    out.push(frame_type as u8);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
    Ok(())
}

#[derive(Debug, PartialEq, Eq)]
pub enum Decoded<'a> {
    Frame {
        frame_type: FrameType,
        body: &'a [u8],
        /// Bytes of `buf` occupied by this frame.
        consumed: usize,
    },
    /// At least this many more bytes are needed to make progress.
    NeedMore(usize),
}

/// Decodes the frame at the start of `buf`, never looking past its end.
///
/// Header fields are validated as soon as they are available, so a bad
/// stream is rejected without waiting for a body that may never come.
pub fn decode_frame(buf: &[u8]) -> Result<Decoded<'_>, FrameError> {
    for (i, &m) in MAGIC.iter().enumerate() {
        match buf.get(i) {
            Some(&b) if b != m => return Err(FrameError::BadMagic([buf[0], buf.get(1).copied().unwrap_or(0)])),
            None => return Ok(Decoded::NeedMore(HEADER_LEN - buf.len())),
            _ => {}
        }
    }
    match buf.get(2) {
        Some(&v) if v != PROTO_VERSION => return Err(FrameError::UnsupportedVersion(v)),
        None => return Ok(Decoded::NeedMore(HEADER_LEN - buf.len())),
        _ => {}
    }
    let frame_type = match buf.get(3) {
        Some(&t) => FrameType::try_from(t)?,
        None => return Ok(Decoded::NeedMore(HEADER_LEN - buf.len())),
    };
    if buf.len() < HEADER_LEN {
        return Ok(Decoded::NeedMore(HEADER_LEN - buf.len()));
    }
    let body_len = u32::from_be_bytes([buf[4], buf[5], buf[6], buf[7]]) as usize;
    if body_len > MAX_BODY_LEN {
        return Err(FrameError::BodyTooLarge(body_len));
    }
    let total = HEADER_LEN + body_len;
    if buf.len() < total {
        return Ok(Decoded::NeedMore(total - buf.len()));
    }
    Ok(Decoded::Frame {
        frame_type,
        body: &buf[HEADER_LEN..total],
        consumed: total,
    })
}

/// Owned frame read from a stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub frame_type: FrameType,
    pub body: Vec<u8>,
}

/// Pulls whole frames off a byte stream.
pub struct FrameReader<R> {
    inner: R,
    buf: Vec<u8>,
    start: usize,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        FrameReader {
            inner,
            buf: Vec::with_capacity(64 * 1024),
            start: 0,
        }
    }

    pub fn get_ref(&self) -> &R {
        &self.inner
    }

    /// A complete frame already sitting in the buffer, without touching the stream.
    pub fn buffered_frame(&mut self) -> Result<Option<Frame>, FrameError> {
        match decode_frame(&self.buf[self.start..])? {
            Decoded::Frame {
                frame_type,
                body,
                consumed,
            } => {
                let frame = Frame {
                    frame_type,
                    body: body.to_vec(),
                };
                self.start += consumed;
                if self.start == self.buf.len() {
                    self.buf.clear();
                    self.start = 0;
                }
                Ok(Some(frame))
            }
            Decoded::NeedMore(_) => Ok(None),
        }
    }

    /// Next frame, or `None` on a clean end of stream between frames.
    pub fn read_frame(&mut self) -> Result<Option<Frame>, FrameError> {
        loop {
            if let Some(frame) = self.buffered_frame()? {
                return Ok(Some(frame));
            }
            match decode_frame(&self.buf[self.start..])? {
                Decoded::Frame { .. } => unreachable!("buffered_frame takes whole frames"),
                Decoded::NeedMore(n) => {
                    if self.start > 0 {
                        self.buf.drain(..self.start);
                        self.start = 0;
                    }
                    let have = self.buf.len();
                    self.buf.resize(have + n.max(16 * 1024), 0);
                    let read = match self.inner.read(&mut self.buf[have..]) {
                        Ok(r) => r,
                        Err(e) if e.kind() == io::ErrorKind::Interrupted => 0,
                        Err(e) => {
                            self.buf.truncate(have);
                            return Err(e.into());
                        }
                    };
                    self.buf.truncate(have + read);
                    if read == 0 {
                        return if have == 0 { Ok(None) } else { Err(FrameError::Truncated) };
                    }
                }
            }
        }
    }
}
