//! Binary protocol, server endpoint and client.

pub mod client;
pub mod frame;
pub mod message;
pub mod server;

pub use client::{Client, ClientError, ClientReader, ClientWriter, Incoming};
pub use frame::{decode_frame, encode_frame, Decoded, Frame, FrameError, FrameReader, FrameType, HEADER_LEN, MAX_BODY_LEN};
pub use server::{serve, Server, ServerConfig, ServerError};
