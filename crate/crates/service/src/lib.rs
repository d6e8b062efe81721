//! Serves critical-state decks and runs live supervised sessions in which a
//! human can take control from a policy, with every takeover logged and
//! classified against an oracle critical set.

pub mod assets;
pub mod error;
pub mod protocol;
pub mod server;
pub mod session;

pub use assets::Assets;
pub use error::{Result, ServiceError};
pub use server::{router, serve, AppState, ServerConfig, StartRequest};
pub use session::{classify_intervention, Case, Command, Controller, Event, Mode, Oracle, Session, SessionConfig, SessionReport};
