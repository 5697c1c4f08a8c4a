//! Command-line client: holds the user's credential locally, delegates to the
//! gateway, drives jobs, and benchmarks the two ways of handing over a proxy.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod http;

pub use config::ClientConfig;
pub use error::ClientError;
pub use http::GatewayClient;
