//! Core of the grid gateway: X.509 proxy delegation, JDL handling, and the
//! simulated grid back end.

pub mod backend;
pub mod cert;
pub mod delegation;
pub mod jdl;
