//! Binary data-plane protocol: framing codec, HMAC handshake, and the
//! per-broker TCP server.

pub mod auth;
pub mod codec;
mod server;

pub use codec::{
    decode_request, decode_response, encode_request, encode_response, read_frame, write_frame,
    BrokerMeta, CodecError, PartitionMeta, Redirect, Request, Response, ResponseBody, Status,
    MAX_FRAME,
};
pub use server::{status_of, BrokerServer};
