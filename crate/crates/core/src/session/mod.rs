//! Live sessions for a human client: free driving, intervention scenes and
//! team supervision over a websocket.

pub mod protocol;
mod server;
#[allow(clippy::module_inception)]
mod session;

pub use protocol::{ClientMessage, EventKind, ObstacleFrame, Phase, PhaseParams, RobotFrame, ServerMessage};
pub use server::{Server, ServerConfig};
pub use session::{LogSink, Session, SessionConfig, TeamSetup};
