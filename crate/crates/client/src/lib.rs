//! Client side of the SDA control protocol.
//!
//! Every message is a 4-byte big-endian body length followed by a UTF-8 JSON
//! body. Requests are `{"v":1,"id":N,"cmd":"...","args":{...}}`; the service
//! answers each with one reply carrying the same id and may send progress
//! events for long-running commands before it.

pub mod client;
pub mod protocol;

pub use client::{Client, ClientError, Progress};
pub use protocol::{ErrorBody, Event, FrameError, Incoming, Reply, Request, Status};
