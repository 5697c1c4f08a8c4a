use gridgate_core::backend::SandboxError;
use gridgate_core::cert::CertError;
use gridgate_core::delegation::DelegationError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("gateway returned {status} {code}: {message}")]
    Api {
        status: u16,
        code: String,
        message: String,
        body: serde_json::Value,
    },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("bench configuration: {0}")]
    Bench(String),
    #[error(transparent)]
    Delegation(#[from] DelegationError),
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ClientError {
    /// 2 for anything the user can fix on the command line, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            ClientError::Usage(_) | ClientError::Config(_) | ClientError::Bench(_) => 2,
            _ => 1,
        }
    }

    /// The gateway's error code, if this came from the gateway.
    pub fn api_code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        ClientError::Transport(e.to_string())
    }
}
