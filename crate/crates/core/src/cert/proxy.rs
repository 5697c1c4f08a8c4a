//! Proxy certificate issuance and the proxy bundle credential.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use openssl::asn1::{Asn1Integer, Asn1Object, Asn1OctetString, Asn1Time};
use openssl::bn::BigNum;
use openssl::hash::MessageDigest;
use openssl::x509::extension::KeyUsage;
use openssl::x509::{X509Extension, X509NameRef, X509Req, X509ReqBuilder, X509};
use rand::RngCore;

use super::dn::DistinguishedName;
use super::keys::{generate_keypair, KeyPair, PrivateKey};
use super::x509::{
    Certificate, CertSigningRequest, OID_PROXY_CERT_INFO, PEM_CERTIFICATE, PEM_PRIVATE_KEY,
};
use super::CertError;

/// DER of `ProxyCertInfo ::= SEQUENCE { proxyPolicy SEQUENCE { id-ppl-inheritAll } }`.
const PROXY_CERT_INFO_INHERIT_ALL: [u8; 14] = [
    0x30, 0x0c, 0x30, 0x0a, 0x06, 0x08, 0x2b, 0x06, 0x01, 0x05, 0x05, 0x07, 0x15, 0x01,
];

/// A user's long-lived certificate and its private key. Client-side only:
/// this type deliberately has no serialization.
#[derive(Clone)]
pub struct IdentityCredential {
    certificate: Certificate,
    private_key: PrivateKey,
}

impl IdentityCredential {
    pub fn new(certificate: Certificate, private_key: PrivateKey) -> Result<Self, CertError> {
        if !private_key.matches(&certificate.public_key) {
            return Err(CertError::KeyCertMismatch);
        }
        Ok(Self {
            certificate,
            private_key,
        })
    }

    pub fn from_pem(cert_pem: &[u8], key_pem: &[u8]) -> Result<Self, CertError> {
        Self::new(Certificate::from_pem(cert_pem)?, PrivateKey::from_pem(key_pem)?)
    }

    pub fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    pub fn private_key(&self) -> &PrivateKey {
        &self.private_key
    }

    pub fn dn(&self) -> &DistinguishedName {
        &self.certificate.subject
    }
}

impl fmt::Debug for IdentityCredential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IdentityCredential")
            .field("subject", &self.certificate.subject.to_string())
            .field("private_key", &"<redacted>")
            .finish()
    }
}

/// The server-side acting credential: proxy certificate, proxy key, and the
/// user's chain (end-entity first).
#[derive(Clone)]
pub struct ProxyBundle {
    proxy_cert: Certificate,
    proxy_private_key: PrivateKey,
    issuer_chain: Vec<Certificate>,
}

impl ProxyBundle {
    pub fn proxy_cert(&self) -> &Certificate {
        &self.proxy_cert
    }

    pub fn proxy_private_key(&self) -> &PrivateKey {
        &self.proxy_private_key
    }

    pub fn issuer_chain(&self) -> &[Certificate] {
        &self.issuer_chain
    }

    /// The delegating user's DN (the end-entity subject, not the proxy's).
    pub fn end_user_dn(&self) -> &DistinguishedName {
        &self.issuer_chain[0].subject
    }

    /// Earliest expiry over the proxy and its chain.
    pub fn expiry(&self) -> DateTime<Utc> {
        self.certificates()
            .map(|c| c.not_after)
            .min()
            .expect("bundle always holds the proxy certificate")
    }

    pub fn certificates(&self) -> impl Iterator<Item = &Certificate> {
        std::iter::once(&self.proxy_cert).chain(self.issuer_chain.iter())
    }

    /// Concatenated PEM: proxy certificate, proxy key, then the issuer chain.
    pub fn to_pem(&self) -> Result<zeroize::Zeroizing<String>, CertError> {
        let mut out = zeroize::Zeroizing::new(self.proxy_cert.to_pem());
        out.push_str(&self.proxy_private_key.to_pem()?);
        for cert in &self.issuer_chain {
            out.push_str(&cert.to_pem());
        }
        Ok(out)
    }

    pub fn from_pem(text: &[u8]) -> Result<Self, CertError> {
        let blocks = pem::parse_many(text).map_err(|e| CertError::Decode(e.to_string()))?;
        let mut blocks = blocks.into_iter();
        let (Some(cert), Some(key)) = (blocks.next(), blocks.next()) else {
            return Err(CertError::Decode("proxy bundle needs a certificate and a key".into()));
        };
        if cert.tag() != PEM_CERTIFICATE || key.tag() != PEM_PRIVATE_KEY {
            return Err(CertError::Decode(
                "proxy bundle must start with CERTIFICATE then PRIVATE KEY".into(),
            ));
        }
        let proxy_cert = Certificate::from_der(cert.into_contents())?;
        let key_der = zeroize::Zeroizing::new(key.into_contents());
        let proxy_key = PrivateKey::from_pkcs8_der(&key_der)?;
        let chain = blocks
            .map(|b| {
                if b.tag() != PEM_CERTIFICATE {
                    return Err(CertError::Decode(format!("unexpected PEM block '{}'", b.tag())));
                }
                Certificate::from_der(b.into_contents())
            })
            .collect::<Result<Vec<_>, _>>()?;
        if chain.is_empty() {
            return Err(CertError::Decode("proxy bundle has no issuer chain".into()));
        }
        let mut bundle = assemble_proxy_bundle(proxy_cert, proxy_key, chain[0].clone())?;
        bundle.issuer_chain = chain;
        Ok(bundle)
    }

    /// Writes the bundle file with owner-only permissions.
    pub fn write_to(&self, path: &Path) -> Result<(), CertError> {
        let pem = self.to_pem()?;
        let mut options = fs::OpenOptions::new();
        options.write(true).create(true).truncate(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            options.mode(0o600);
        }
        let mut file = options.open(path)?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            file.set_permissions(fs::Permissions::from_mode(0o600))?;
        }
        file.write_all(pem.as_bytes())?;
        Ok(())
    }
}

impl PartialEq for ProxyBundle {
    fn eq(&self, other: &Self) -> bool {
        self.proxy_cert == other.proxy_cert
            && self.issuer_chain == other.issuer_chain
            && self.proxy_private_key.public_key().ok() == other.proxy_private_key.public_key().ok()
    }
}

impl fmt::Debug for ProxyBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProxyBundle")
            .field("proxy_subject", &self.proxy_cert.subject.to_string())
            .field("not_after", &self.proxy_cert.not_after)
            .field("chain_len", &self.issuer_chain.len())
            .field("proxy_private_key", &"<redacted>")
            .finish()
    }
}

/// Builds the delegation CSR: the client's DN and the freshly generated public key,
/// self-signed with the matching private key.
pub fn build_proxy_csr(
    client_dn: &DistinguishedName,
    keypair: &KeyPair,
) -> Result<CertSigningRequest, CertError> {
    let mut builder = X509ReqBuilder::new()?;
    builder.set_version(0)?;
    builder.set_subject_name(&*(client_dn.to_x509_name()?))?;
    builder.set_pubkey(keypair.private.pkey())?;
    builder.sign(keypair.private.pkey(), MessageDigest::sha256())?;
    let req: X509Req = builder.build();
    CertSigningRequest::from_der(req.to_der()?)
}

fn random_serial() -> u64 {
    let mut rng = rand::rngs::OsRng;
    loop {
        // positive, non-zero, full 64 bits of entropy
        let serial = rng.next_u64();
        if serial != 0 {
            return serial;
        }
    }
}

pub(crate) fn asn1_time(t: DateTime<Utc>) -> Result<Asn1Time, CertError> {
    Ok(Asn1Time::from_unix(t.timestamp())?)
}

/// Copies `base` and appends one CN, preserving the issuer's exact string encodings.
fn extend_name(base: &X509NameRef, cn: &str) -> Result<openssl::x509::X509Name, CertError> {
    let mut builder = openssl::x509::X509Name::builder()?;
    for entry in base.entries() {
        builder.append_entry(entry)?;
    }
    builder.append_entry_by_nid(openssl::nid::Nid::COMMONNAME, cn)?;
    Ok(builder.build())
}

/// Client-side step: the user's key signs the server's CSR, producing a proxy
/// certificate named `<user DN>/CN=<serial>`.
pub fn sign_proxy_csr(
    csr: &CertSigningRequest,
    issuer: &IdentityCredential,
    lifetime: Duration,
    now: DateTime<Utc>,
) -> Result<Certificate, CertError> {
    if lifetime <= Duration::zero() {
        return Err(CertError::InvalidLifetime);
    }
    if !csr.verify_self_signature() {
        return Err(CertError::InvalidCsrSignature);
    }
    let issuer_cert = issuer.certificate();
    if csr.subject != issuer_cert.subject {
        return Err(CertError::CsrSubjectMismatch {
            csr: csr.subject.to_string(),
            issuer: issuer_cert.subject.to_string(),
        });
    }
    if now >= issuer_cert.not_after {
        return Err(CertError::IssuerExpired);
    }

    let issuer_x509 = X509::from_der(issuer_cert.to_der())?;
    let serial = random_serial();
    let not_after = std::cmp::min(now + lifetime, issuer_cert.not_after);
    let not_before = std::cmp::min(now, not_after - Duration::seconds(1));

    let mut builder = X509::builder()?;
    builder.set_version(2)?;
    let serial_bn = BigNum::from_dec_str(&serial.to_string())?;
    builder.set_serial_number(&*(Asn1Integer::from_bn(&serial_bn)?))?;
    builder.set_subject_name(&*(extend_name(issuer_x509.subject_name(), &serial.to_string())?))?;
    builder.set_issuer_name(issuer_x509.subject_name())?;
    builder.set_pubkey(&*(csr.public_key.to_pkey()?))?;
    builder.set_not_before(&*(asn1_time(not_before)?))?;
    builder.set_not_after(&*(asn1_time(not_after)?))?;
    builder.append_extension(
        KeyUsage::new()
            .critical()
            .digital_signature()
            .key_encipherment()
            .build()?,
    )?;
    builder.append_extension(X509Extension::new_from_der(
        &*(Asn1Object::from_str(OID_PROXY_CERT_INFO)?),
        true,
        &*(Asn1OctetString::new_from_bytes(&PROXY_CERT_INFO_INHERIT_ALL)?),
    )?)?;
    builder.sign(issuer.private_key().pkey(), MessageDigest::sha256())?;
    Certificate::from_der(builder.build().to_der()?)
}

/// Server-side step: proxy certificate from the client, key generated here,
/// and the user's public certificate.
pub fn assemble_proxy_bundle(
    proxy_cert: Certificate,
    proxy_key: PrivateKey,
    user_cert: Certificate,
) -> Result<ProxyBundle, CertError> {
    if !proxy_key.matches(&proxy_cert.public_key) {
        return Err(CertError::KeyCertMismatch);
    }
    if proxy_cert.issuer != user_cert.subject {
        return Err(CertError::IssuerMismatch {
            proxy_issuer: proxy_cert.issuer.to_string(),
            user: user_cert.subject.to_string(),
        });
    }
    Ok(ProxyBundle {
        proxy_cert,
        proxy_private_key: proxy_key,
        issuer_chain: vec![user_cert],
    })
}

/// Time left before any certificate in the bundle expires, floored at zero.
/// A proxy made entirely on the user's machine, as `grid-proxy-init` does.
/// Only the legacy repository flow needs one; the delegation protocol never
/// lets the user side hold the proxy key.
pub fn create_local_proxy(
    identity: &IdentityCredential,
    lifetime: Duration,
    now: DateTime<Utc>,
    strength: u32,
) -> Result<ProxyBundle, CertError> {
    let pair = generate_keypair(strength)?;
    let csr = build_proxy_csr(identity.dn(), &pair)?;
    let cert = sign_proxy_csr(&csr, identity, lifetime, now)?;
    assemble_proxy_bundle(cert, pair.private, identity.certificate().clone())
}

pub fn remaining_lifetime(bundle: &ProxyBundle, now: DateTime<Utc>) -> Duration {
    std::cmp::max(Duration::zero(), bundle.expiry() - now)
}

/// Reads a PEM private key, refusing files readable by group or others.
pub fn load_private_key_file(path: &Path) -> Result<PrivateKey, CertError> {
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = fs::metadata(path)?.permissions().mode();
        if mode & 0o077 != 0 {
            return Err(CertError::InsecureKeyFile {
                path: path.display().to_string(),
                mode: mode & 0o777,
            });
        }
    }
    let pem = zeroize::Zeroizing::new(fs::read(path)?);
    PrivateKey::from_pem(&pem)
}
