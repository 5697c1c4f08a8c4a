//! X.509 mechanics: keys, requests, proxy issuance, bundles, validation,
//! and PKCS#12 conversion.

mod dn;
mod keys;
mod p12;
mod proxy;
mod testca;
mod validate;
mod x509;

pub use dn::{DistinguishedName, Rdn};
pub use keys::{
    generate_keypair, KeyPair, PrivateKey, PublicKey, DEFAULT_STRENGTH, SUPPORTED_STRENGTHS,
};
pub use p12::{build_p12, convert_p12_to_pem, PemPair};
pub use proxy::{
    assemble_proxy_bundle, build_proxy_csr, create_local_proxy, load_private_key_file, remaining_lifetime,
    sign_proxy_csr, IdentityCredential, ProxyBundle,
};
pub use testca::{fixed_not_after, fixed_not_before, IssueParams, TestCa, TEST_CA_DN};
pub use validate::{
    validate_proxy_chain, FailureCode, ValidationFailure, ValidationReport, CLOCK_SKEW,
};
pub use x509::{
    CertSigningRequest, Certificate, OID_PROXY_CERT_INFO, PEM_CERTIFICATE, PEM_CSR,
    PEM_PRIVATE_KEY,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("unsupported key strength {0} (supported: 2048, 3072, 4096)")]
    UnsupportedStrength(u32),
    #[error("malformed distinguished name: {0}")]
    MalformedDn(String),
    #[error("CSR subject {csr} does not match issuer subject {issuer}")]
    CsrSubjectMismatch { csr: String, issuer: String },
    #[error("CSR self-signature does not verify")]
    InvalidCsrSignature,
    #[error("issuing certificate has expired")]
    IssuerExpired,
    #[error("requested lifetime must be positive")]
    InvalidLifetime,
    #[error("private key does not match certificate")]
    KeyCertMismatch,
    #[error("proxy issuer {proxy_issuer} is not the user certificate subject {user}")]
    IssuerMismatch { proxy_issuer: String, user: String },
    #[error("wrong PKCS#12 password")]
    BadPassword,
    #[error("not a PKCS#12 archive")]
    MalformedArchive,
    #[error("key file {path} has mode {mode:o}; it must be readable by its owner only")]
    InsecureKeyFile { path: String, mode: u32 },
    #[error("decode error: {0}")]
    Decode(String),
    #[error("crypto error: {0}")]
    Crypto(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<openssl::error::ErrorStack> for CertError {
    fn from(e: openssl::error::ErrorStack) -> Self {
        CertError::Crypto(e.to_string())
    }
}
