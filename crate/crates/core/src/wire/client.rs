//! Blocking client.

use std::collections::VecDeque;
use std::io::{self, BufWriter, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::os::fd::AsRawFd;
use std::time::Duration;

use crate::node::{Command, Reply, Status};
use crate::pubsub::{Event, SubscribeAck};
use crate::store::{OpKind, OpMask};

use super::frame::{encode_into, Frame, FrameError, FrameReader, FrameType};
use super::message::{decode_event, decode_reply, encode_command, MessageError};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error("server replied {status:?}: {message}")]
    Server { status: Status, message: String },
    #[error("connection closed by server")]
    Closed,
    #[error("unexpected reply {0:?}")]
    Unexpected(Box<Reply>),
}

impl ClientError {
    pub fn status(&self) -> Option<Status> {
        match self {
            ClientError::Server { status, .. } => Some(*status),
            _ => None,
        }
    }
}

/// Something the server sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Incoming {
    Reply(Option<FrameType>, Reply),
    Event(Event),
}

/// Receiving half of a connection.
pub struct ClientReader {
    frames: FrameReader<TcpStream>,
}

impl ClientReader {
    /// Next frame from the server; `Closed` at end of stream.
    pub fn recv(&mut self) -> Result<Incoming, ClientError> {
        let frame = self.frames.read_frame()?.ok_or(ClientError::Closed)?;
        Self::decode(frame)
    }

    /// Like [`recv`](Self::recv), but returns `None` instead of waiting when
    /// nothing has arrived yet. A frame that has started arriving is read to
    /// its end.
    pub fn try_recv(&mut self) -> Result<Option<Incoming>, ClientError> {
        if let Some(frame) = self.frames.buffered_frame()? {
            return Self::decode(frame).map(Some);
        }
        let mut pfd = libc::pollfd {
            fd: self.frames.get_ref().as_raw_fd(),
            events: libc::POLLIN,
            revents: 0,
        };
        // SAFETY: one valid pollfd, zero timeout.
        let ready = unsafe { libc::poll(&mut pfd, 1, 0) };
        if ready < 0 {
            return Err(io::Error::last_os_error().into());
        }
        if ready == 0 {
            return Ok(None);
        }
        self.recv().map(Some)
    }

    fn decode(frame: Frame) -> Result<Incoming, ClientError> {
        match frame.frame_type {
            FrameType::Evt => Ok(Incoming::Event(decode_event(&frame.body)?)),
            FrameType::Reply => {
                let (req, reply) = decode_reply(&frame.body)?;
                Ok(Incoming::Reply(req, reply))
            }
            other => Err(MessageError::NotARequest(other).into()),
        }
    }

    pub fn set_read_timeout(&self, timeout: Option<Duration>) -> io::Result<()> {
        self.frames.get_ref().set_read_timeout(timeout)
    }
}

/// Sending half of a connection. Requests may be pipelined.
pub struct ClientWriter {
    out: BufWriter<TcpStream>,
    frame: Vec<u8>,
}

impl ClientWriter {
    /// Writes and flushes one request.
    pub fn send(&mut self, cmd: &Command) -> Result<(), ClientError> {
        self.send_buffered(cmd)?;
        self.out.flush()?;
        Ok(())
    }

    /// Queues one request without flushing.
    pub fn send_buffered(&mut self, cmd: &Command) -> Result<(), ClientError> {
        let (ty, body) = encode_command(cmd);
        self.frame.clear();
        encode_into(ty, &body, &mut self.frame)?;
        self.out.write_all(&self.frame)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), ClientError> {
        self.out.flush()?;
        Ok(())
    }

    /// Writes raw bytes, bypassing the codec.
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), ClientError> {
        self.out.write_all(bytes)?;
        self.out.flush()?;
        Ok(())
    }

    /// Half-closes the connection; the server drains and closes its side.
    pub fn finish(mut self) -> Result<(), ClientError> {
        self.out.flush()?;
        self.out.get_ref().shutdown(Shutdown::Write)?;
        Ok(())
    }
}

/// A request/reply client that buffers events arriving between replies.
pub struct Client {
    reader: ClientReader,
    writer: ClientWriter,
    pending_events: VecDeque<Event>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let read_half = stream.try_clone()?;
        Ok(Client {
            reader: ClientReader {
                frames: FrameReader::new(read_half),
            },
            writer: ClientWriter {
                out: BufWriter::with_capacity(64 * 1024, stream),
                frame: Vec::new(),
            },
            pending_events: VecDeque::new(),
        })
    }

    pub fn split(self) -> (ClientWriter, ClientReader) {
        (self.writer, self.reader)
    }

    pub fn writer(&mut self) -> &mut ClientWriter {
        &mut self.writer
    }

    /// Sends `cmd` and waits for its reply. Error replies become `ClientError::Server`.
    pub fn request(&mut self, cmd: &Command) -> Result<Reply, ClientError> {
        self.writer.send(cmd)?;
        loop {
            match self.reader.recv()? {
                Incoming::Event(ev) => self.pending_events.push_back(ev),
                Incoming::Reply(_, Reply::Error { status, message }) => {
                    return Err(ClientError::Server { status, message })
                }
                Incoming::Reply(_, reply) => return Ok(reply),
            }
        }
    }

    /// Next pushed event, waiting up to `timeout`. `Ok(None)` on timeout.
    pub fn next_event(&mut self, timeout: Duration) -> Result<Option<Event>, ClientError> {
        if let Some(ev) = self.pending_events.pop_front() {
            return Ok(Some(ev));
        }
        self.reader.set_read_timeout(Some(timeout))?;
        let result = self.reader.recv();
        self.reader.set_read_timeout(None)?;
        match result {
            Ok(Incoming::Event(ev)) => Ok(Some(ev)),
            Ok(Incoming::Reply(_, Reply::Error { status, message })) => Err(ClientError::Server { status, message }),
            Ok(Incoming::Reply(_, other)) => Err(ClientError::Unexpected(Box::new(other))),
            Err(ClientError::Frame(FrameError::Io(e)))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) =>
            {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    pub fn set(&mut self, key: &[u8], value: &[u8]) -> Result<(u64, OpKind), ClientError> {
        match self.request(&Command::Set {
            key: key.to_vec(),
            value: value.to_vec(),
        })? {
            Reply::Set { version, op } => Ok((version, op)),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }

    pub fn get(&mut self, key: &[u8]) -> Result<Vec<u8>, ClientError> {
        match self.request(&Command::Get { key: key.to_vec() })? {
            Reply::Get { value } => Ok(value),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }

    pub fn del(&mut self, key: &[u8]) -> Result<OpKind, ClientError> {
        match self.request(&Command::Del { key: key.to_vec() })? {
            Reply::Del { op } => Ok(op),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }

    pub fn subscribe(&mut self, pattern: &[u8]) -> Result<SubscribeAck, ClientError> {
        match self.request(&Command::Subscribe {
            pattern: pattern.to_vec(),
        })? {
            Reply::Subscribed(ack) => Ok(ack),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }

    pub fn unsubscribe(&mut self, pattern: &[u8]) -> Result<(), ClientError> {
        match self.request(&Command::Unsubscribe {
            pattern: pattern.to_vec(),
        })? {
            Reply::Unsubscribed => Ok(()),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }

    /// Returns `(seq, delivered_count)`.
    pub fn publish(&mut self, channel: &[u8], payload: &[u8]) -> Result<(u64, u32), ClientError> {
        match self.request(&Command::Publish {
            channel: channel.to_vec(),
            payload: payload.to_vec(),
        })? {
            Reply::Published { seq, delivered } => Ok((seq, delivered)),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }

    pub fn register_callback(&mut self, op_mask: OpMask, key_filter: &[u8], channel: &[u8]) -> Result<u64, ClientError> {
        match self.request(&Command::RegisterCallback {
            op_mask,
            key_filter: key_filter.to_vec(),
            channel: channel.to_vec(),
        })? {
            Reply::Registered { id } => Ok(id),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }

    pub fn unregister_callback(&mut self, id: u64) -> Result<(), ClientError> {
        match self.request(&Command::UnregisterCallback { id })? {
            Reply::Unregistered => Ok(()),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }
}
