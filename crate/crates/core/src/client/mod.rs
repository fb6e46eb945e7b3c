//! Producer/consumer SDK for the data plane.

mod admin;
mod conn;
mod consumer;
mod credentials;
mod producer;

pub use admin::{ApiError, ControlClient};
pub use conn::{connect_any, Connection, TopicRoute};
pub use consumer::{ConsumedRecord, Consumer, ConsumerConfig, StartPosition};
pub use credentials::{Credentials, PROFILE_ENV};
pub use producer::{retry_backoff, Delivery, DeliveryReport, Outcome, Producer, ProducerConfig};

use crate::protocol::{CodecError, Status};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol error: {0}")]
    Codec(#[from] CodecError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("broker returned {0}")]
    Status(Status),
    #[error("authentication failed (UNAUTHORIZED)")]
    Unauthorized,
    #[error("connection closed by broker")]
    Closed,
    #[error("no reachable broker")]
    NoBrokers,
    #[error("producer buffer full")]
    BufferFull,
    #[error("configuration error: {0}")]
    Config(String),
}

impl ClientError {
    /// Wire status carried by this error, if any.
    pub fn status(&self) -> Option<Status> {
        match self {
            ClientError::Status(s) => Some(*s),
            ClientError::Unauthorized => Some(Status::Unauthorized),
            _ => None,
        }
    }
}
