//! Control service for simulated SDA nodes.
//!
//! One process hosts a TX node (`tx0`), an RX node (`rx0`) and the scenario
//! channel between them. Clients connect over TCP and speak the framed JSON
//! protocol of `sda-client`: mode, beam, gain and AWV settings, frame
//! transmission and capture, and full beam sweeps. Each command runs
//! atomically against the node state; sweeps run on the blocking pool so
//! status queries keep answering while one is in progress.

mod node;
mod server;

pub use node::{BeamSetting, CommandError, IqRef, Mode, NodeState, Service, COMMANDS, GAIN_MAX_DB, GAIN_MIN_DB, PROGRESS_STRIDE, RX_NODE, TX_NODE};
pub use server::{spawn, ServerConfig, ServerError, ServerHandle, DEFAULT_COMMAND_TIMEOUT, DEFAULT_SCENARIO};
