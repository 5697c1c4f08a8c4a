//! PKCS#12 import/export.

use openssl::pkcs12::Pkcs12;
use openssl::x509::X509;
use zeroize::Zeroizing;

use super::proxy::IdentityCredential;
use super::x509::Certificate;
use super::keys::PrivateKey;
use super::CertError;

/// A certificate and its key, both PEM-armored.
pub struct PemPair {
    pub cert_pem: String,
    pub key_pem: Zeroizing<String>,
}

impl std::fmt::Debug for PemPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PemPair")
            .field("cert_pem", &self.cert_pem)
            .field("key_pem", &"<redacted>")
            .finish()
    }
}

pub fn convert_p12_to_pem(p12: &[u8], password: &str) -> Result<PemPair, CertError> {
    let archive = Pkcs12::from_der(p12).map_err(|_| CertError::MalformedArchive)?;
    let parsed = archive.parse2(password).map_err(|_| CertError::BadPassword)?;
    let (Some(cert), Some(key)) = (parsed.cert, parsed.pkey) else {
        return Err(CertError::MalformedArchive);
    };
    let cert = Certificate::from_der(cert.to_der()?)?;
    let key = PrivateKey::from_pkey(key);
    if !key.matches(&cert.public_key) {
        return Err(CertError::KeyCertMismatch);
    }
    Ok(PemPair {
        cert_pem: cert.to_pem(),
        key_pem: key.to_pem()?,
    })
}

/// Packs an identity (and optional CA chain) into a password-protected archive.
pub fn build_p12(
    identity: &IdentityCredential,
    password: &str,
    friendly_name: &str,
    ca_chain: &[Certificate],
) -> Result<Vec<u8>, CertError> {
    let cert = X509::from_der(identity.certificate().to_der())?;
    let mut builder = Pkcs12::builder();
    builder.name(friendly_name);
    builder.pkey(identity.private_key().pkey());
    builder.cert(&cert);
    if !ca_chain.is_empty() {
        let mut stack = openssl::stack::Stack::new()?;
        for c in ca_chain {
            stack.push(X509::from_der(c.to_der())?)?;
        }
        builder.ca(stack);
    }
    Ok(builder.build2(password)?.to_der()?)
}
