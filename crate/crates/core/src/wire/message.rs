//! Frame bodies for requests, replies and pushed events.
//!
//! All integers are big-endian. Layouts:
//!
//! | frame   | body |
//! |---------|------|
//! | SET     | key_len u16, key, value |
//! | GET/DEL | key |
//! | SUB/UNSUB | pattern |
//! | PUB     | channel_len u16, channel, payload |
//! | REGCB   | op_mask u8, filter_len u16, filter, channel |
//! | UNREGCB | id u64 |
//! | EVT     | channel_len u16, channel, seq u64, publish_ts_ns u64, payload |
//! | REPLY   | status u8, request type u8, result |
//!
//! Reply results on success: SET `version u64, op u8`; GET `value`; DEL `op u8`;
//! SUB `count u32, (channel_len u16, channel, start_seq u64)*`; PUB
//! `seq u64, delivered u32`; REGCB `id u64`; UNSUB/UNREGCB empty. On failure the
//! result is a UTF-8 message. An unsolicited reply carries request type 0.

use crate::node::{Command, Reply, Status};
use crate::pubsub::{Event, SubscribeAck};
use crate::store::{OpKind, OpMask};

use super::frame::FrameType;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MessageError {
    #[error("{0} body is truncated")]
    Truncated(&'static str),
    #[error("{0} body has {1} trailing bytes")]
    Trailing(&'static str, usize),
    #[error("invalid field: {0}")]
    Invalid(&'static str),
    #[error("frame type {0:?} is not a request")]
    NotARequest(FrameType),
}

struct Cursor<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Cursor { buf, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MessageError> {
        if self.buf.len() < n {
            return Err(MessageError::Truncated(self.what));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, MessageError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, MessageError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, MessageError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, MessageError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn short_bytes(&mut self) -> Result<&'a [u8], MessageError> {
        let n = self.u16()? as usize;
        self.take(n)
    }

    fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }

    fn finish(self) -> Result<(), MessageError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(MessageError::Trailing(self.what, self.buf.len()))
        }
    }
}

fn put_short(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u16).to_be_bytes());
    out.extend_from_slice(bytes);
}

pub fn encode_command(cmd: &Command) -> (FrameType, Vec<u8>) {
    let mut body = Vec::new();
    let ty = match cmd {
        Command::Set { key, value } => {
            put_short(&mut body, key);
            body.extend_from_slice(value);
            FrameType::Set
        }
        Command::Get { key } => {
            body.extend_from_slice(key);
            FrameType::Get
        }
        Command::Del { key } => {
            body.extend_from_slice(key);
            FrameType::Del
        }
        Command::Subscribe { pattern } => {
            body.extend_from_slice(pattern);
            FrameType::Sub
        }
        Command::Unsubscribe { pattern } => {
            body.extend_from_slice(pattern);
            FrameType::Unsub
        }
        Command::Publish { channel, payload } => {
            put_short(&mut body, channel);
            body.extend_from_slice(payload);
            FrameType::Pub
        }
        Command::RegisterCallback {
            op_mask,
            key_filter,
            channel,
        } => {
            body.push(op_mask.bits());
            put_short(&mut body, key_filter);
            body.extend_from_slice(channel);
            FrameType::RegCb
        }
        Command::UnregisterCallback { id } => {
            body.extend_from_slice(&id.to_be_bytes());
            FrameType::UnregCb
        }
    };
    (ty, body)
}

pub fn decode_command(ty: FrameType, body: &[u8]) -> Result<Command, MessageError> {
    let mut c = Cursor::new(body, "request");
    let cmd = match ty {
        FrameType::Set => Command::Set {
            key: c.short_bytes()?.to_vec(),
            value: c.rest().to_vec(),
        },
        FrameType::Get => Command::Get { key: c.rest().to_vec() },
        FrameType::Del => Command::Del { key: c.rest().to_vec() },
        FrameType::Sub => Command::Subscribe { pattern: c.rest().to_vec() },
        FrameType::Unsub => Command::Unsubscribe { pattern: c.rest().to_vec() },
        FrameType::Pub => Command::Publish {
            channel: c.short_bytes()?.to_vec(),
            payload: c.rest().to_vec(),
        },
        FrameType::RegCb => Command::RegisterCallback {
            op_mask: OpMask::from_bits(c.u8()?).ok_or(MessageError::Invalid("op_mask"))?,
            key_filter: c.short_bytes()?.to_vec(),
            channel: c.rest().to_vec(),
        },
        FrameType::UnregCb => Command::UnregisterCallback { id: c.u64()? },
        FrameType::Evt | FrameType::Reply => return Err(MessageError::NotARequest(ty)),
    };
    c.finish()?;
    Ok(cmd)
}

/// `request` is the frame type that prompted the reply, `None` if unsolicited.
pub fn encode_reply(request: Option<FrameType>, reply: &Reply) -> Vec<u8> {
    let mut body = vec![reply.status() as u8, request.map_or(0, |t| t as u8)];
    match reply {
        Reply::Set { version, op } => {
            body.extend_from_slice(&version.to_be_bytes());
            body.push(op.code());
        }
        Reply::Get { value } => body.extend_from_slice(value),
        Reply::Del { op } => body.push(op.code()),
        Reply::Subscribed(ack) => {
            body.extend_from_slice(&(ack.start_positions.len() as u32).to_be_bytes());
            for (channel, start) in &ack.start_positions {
                put_short(&mut body, channel);
                body.extend_from_slice(&start.to_be_bytes());
            }
        }
        Reply::Unsubscribed | Reply::Unregistered => {}
        Reply::Published { seq, delivered } => {
            body.extend_from_slice(&seq.to_be_bytes());
            body.extend_from_slice(&delivered.to_be_bytes());
        }
        Reply::Registered { id } => body.extend_from_slice(&id.to_be_bytes()),
        Reply::Error { message, .. } => body.extend_from_slice(message.as_bytes()),
    }
    body
}

pub fn decode_reply(body: &[u8]) -> Result<(Option<FrameType>, Reply), MessageError> {
    let mut c = Cursor::new(body, "reply");
    let status = Status::from_code(c.u8()?).ok_or(MessageError::Invalid("status"))?;
    let request = match c.u8()? {
        0 => None,
        t => Some(FrameType::try_from(t).map_err(|_| MessageError::Invalid("request type"))?),
    };
    if status != Status::Ok {
        let message = String::from_utf8_lossy(c.rest()).into_owned();
        return Ok((request, Reply::Error { status, message }));
    }
    let op = |c: &mut Cursor| OpKind::from_code(c.u8()?).ok_or(MessageError::Invalid("op"));
    let reply = match request.ok_or(MessageError::Invalid("request type"))? {
        FrameType::Set => Reply::Set {
            version: c.u64()?,
            op: op(&mut c)?,
        },
        FrameType::Get => Reply::Get { value: c.rest().to_vec() },
        FrameType::Del => Reply::Del { op: op(&mut c)? },
        FrameType::Sub => {
            let n = c.u32()? as usize;
            let mut start_positions = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                let channel = c.short_bytes()?.to_vec();
                start_positions.push((channel, c.u64()?));
            }
            Reply::Subscribed(SubscribeAck { start_positions })
        }
        FrameType::Unsub => Reply::Unsubscribed,
        FrameType::Pub => Reply::Published {
            seq: c.u64()?,
            delivered: c.u32()?,
        },
        FrameType::RegCb => Reply::Registered { id: c.u64()? },
        FrameType::UnregCb => Reply::Unregistered,
        t @ (FrameType::Evt | FrameType::Reply) => return Err(MessageError::NotARequest(t)),
    };
    c.finish()?;
    Ok((request, reply))
}

pub fn encode_event(event: &Event) -> Vec<u8> {
    let mut body = Vec::with_capacity(2 + event.channel.len() + 16 + event.payload.len());
    put_short(&mut body, &event.channel);
    body.extend_from_slice(&event.seq.to_be_bytes());
    body.extend_from_slice(&event.publish_ts.to_be_bytes());
    body.extend_from_slice(&event.payload);
    body
}

pub fn decode_event(body: &[u8]) -> Result<Event, MessageError> {
    let mut c = Cursor::new(body, "event");
    let channel = c.short_bytes()?.to_vec();
    if channel.is_empty() {
        return Err(MessageError::Invalid("channel_len"));
    }
    Ok(Event {
        channel,
        seq: c.u64()?,
        publish_ts: c.u64()?,
        payload: c.rest().to_vec(),
    })
}
