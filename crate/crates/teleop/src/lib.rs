//! Live teleoperation service for a simulated formation.
//!
//! Clients connect to `/ws`, receive [`vrb_formation::sim::StateSnapshot`]
//! messages every tick and send [`protocol::CommandMessage`] formation rates.
//! The first snapshot on each connection carries the obstacle map.

pub mod error;
pub mod protocol;
pub mod server;
pub mod session;

pub use error::{ProtocolError, TeleopError};
pub use protocol::{ClientMessage, CommandMessage, ErrorMessage, RateLimits};
pub use server::{serve, Health, ServeOptions, ServerHandle, ServerStats};
pub use session::{CommandSlot, Session, COMMAND_TIMEOUT};
