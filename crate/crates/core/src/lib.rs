//! Event-based streaming on an in-memory key-value store.
//!
//! Store commands are classified as create/read/update/delete and matched
//! against registered callbacks; each match publishes an event to a pub/sub
//! channel. Around that core sit a binary wire protocol and TCP server, a
//! memory-protection cost model, an open-loop benchmark harness and energy
//! accounting.

pub mod bench;
pub mod clock;
pub mod energy;
pub mod glob;
pub mod host;
pub mod node;
pub mod protection;
pub mod pubsub;
pub mod store;
pub mod sweep;
pub mod wire;

pub use host::{CallbackRegistration, ModuleHost};
pub use node::{Command, Node, Reply, Status};
pub use protection::{ProtectionMode, ProtectionProfile};
pub use pubsub::{Broker, Event};
pub use store::{OpKind, OpMask, Store};
