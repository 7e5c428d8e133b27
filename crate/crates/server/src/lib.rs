//! Interactive render and edit service.
//!
//! One [`Hub`] owns the shared composition and its revision counter. Every
//! connection gets a [`Session`] that turns client messages into replies.
//! Edits are applied under the hub's write lock; renders work on a snapshot
//! and long jobs run on a copy in a worker thread that swaps the result in.

pub mod frame;
pub mod protocol;
mod net;
mod session;

pub use net::Server;
pub use session::{Hub, Outgoing, Session};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("busy: a job is running")]
    Busy,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] texgs::Error),
}
