//! Dynamic delegation: the server generates the proxy key pair and a CSR for
//! the client's DN, the client signs it with the user's key, and the server
//! joins its private key with the returned certificate. Neither private key
//! crosses the wire.

mod client;
mod message;
mod server;
mod transcript;

pub use client::{
    client_sign_challenge, run_delegation, DelegationOutcome, DelegationTransport, Loopback,
};
pub use message::{
    decode_frame, encode_frame, AckStatus, CsrChallenge, DelegationAck, DelegationMessage,
    InitRequest, SessionId, SignedUpload, MAX_FRAME_LEN,
};
pub use server::{
    server_complete, server_handle_init, DelegationSession, SessionState, SessionStore,
    SESSION_TTL,
};
pub use transcript::{Direction, Frame, SecretNeedles, Transcript};

use thiserror::Error;

use crate::cert::CertError;

#[derive(Debug, Error)]
pub enum DelegationError {
    #[error("malformed distinguished name: {0}")]
    MalformedDn(String),
    #[error("challenge is for {challenge}, not for {identity}")]
    SubjectMismatch { challenge: String, identity: String },
    #[error("invalid challenge: {0}")]
    InvalidChallenge(String),
    #[error("unknown delegation session")]
    UnknownSession,
    #[error("delegation session expired")]
    SessionExpired,
    #[error("delegated chain rejected: {reason}")]
    ChainInvalid { ack: DelegationAck, reason: String },
    #[error("server rejected delegation: {0}")]
    Rejected(String),
    #[error("unexpected {0} message")]
    Unexpected(&'static str),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error(transparent)]
    Cert(#[from] CertError),
}
