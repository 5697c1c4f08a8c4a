//! A reproducible certification authority for fixtures and local deployments.
//!
//! Given the same seed, [`TestCa::from_seed`] produces byte-identical CA
//! certificates, and [`TestCa::issue_user_seeded`] byte-identical user
//! credentials. RSA PKCS#1 v1.5 signing is deterministic, so only the key
//! generation needs a seeded RNG.

use chrono::{DateTime, TimeZone, Utc};
use openssl::asn1::Asn1Integer;
use openssl::bn::BigNum;
use openssl::hash::MessageDigest;
use openssl::x509::extension::{
    BasicConstraints, ExtendedKeyUsage, KeyUsage, SubjectAlternativeName, SubjectKeyIdentifier,
};
use openssl::x509::X509;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rsa::pkcs8::EncodePrivateKey;

use super::dn::DistinguishedName;
use super::keys::{generate_keypair, PrivateKey, PublicKey, DEFAULT_STRENGTH};
use super::proxy::{asn1_time, IdentityCredential};
use super::x509::Certificate;
use super::CertError;

pub const TEST_CA_DN: &str = "/C=IT/O=GridGate Test/CN=GridGate Test CA";

pub fn fixed_not_before() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()
}

pub fn fixed_not_after() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2050, 1, 1, 0, 0, 0).unwrap()
}

fn seeded_key(seed: u64, label: &str) -> Result<PrivateKey, CertError> {
    let mut material = [0u8; 32];
    material[..8].copy_from_slice(&seed.to_be_bytes());
    let digest = openssl::sha::sha256(label.as_bytes());
    material[8..].copy_from_slice(&digest[..24]);
    let mut rng = ChaCha20Rng::from_seed(material);
    let key = rsa::RsaPrivateKey::new(&mut rng, DEFAULT_STRENGTH as usize)
        .map_err(|e| CertError::Crypto(e.to_string()))?;
    let der = key
        .to_pkcs8_der()
        .map_err(|e| CertError::Crypto(e.to_string()))?;
    PrivateKey::from_pkcs8_der(der.as_bytes())
}

fn seeded_serial(seed: u64, label: &str) -> u64 {
    let digest = openssl::sha::sha256(format!("{seed}:{label}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(bytes) >> 1).max(1)
}

/// What to put in a certificate the CA issues.
#[derive(Debug, Clone)]
pub struct IssueParams {
    pub subject: DistinguishedName,
    pub public_key: PublicKey,
    pub serial: u64,
    pub not_before: DateTime<Utc>,
    pub not_after: DateTime<Utc>,
    pub is_ca: bool,
}

#[derive(Clone)]
pub struct TestCa {
    cert: Certificate,
    key: PrivateKey,
}

impl std::fmt::Debug for TestCa {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestCa")
            .field("subject", &self.cert.subject.to_string())
            .finish_non_exhaustive()
    }
}

impl TestCa {
    pub fn from_seed(seed: u64) -> Result<Self, CertError> {
        let key = seeded_key(seed, "ca")?;
        let subject = DistinguishedName::parse(TEST_CA_DN)?;
        let params = IssueParams {
            subject: subject.clone(),
            public_key: key.public_key()?,
            serial: seeded_serial(seed, "ca"),
            not_before: fixed_not_before(),
            not_after: fixed_not_after(),
            is_ca: true,
        };
        let der = build_certificate(&params, &subject, &key, &[])?;
        Ok(Self {
            cert: Certificate::from_der(der)?,
            key,
        })
    }

    pub fn from_parts(cert: Certificate, key: PrivateKey) -> Result<Self, CertError> {
        if !key.matches(&cert.public_key) {
            return Err(CertError::KeyCertMismatch);
        }
        Ok(Self { cert, key })
    }

    pub fn certificate(&self) -> &Certificate {
        &self.cert
    }

    pub fn private_key(&self) -> &PrivateKey {
        &self.key
    }

    pub fn issue(&self, params: &IssueParams) -> Result<Certificate, CertError> {
        let der = build_certificate(params, &self.cert.subject, &self.key, &[])?;
        Certificate::from_der(der)
    }

    /// A TLS server credential for `hosts` (DNS names or IP literals), with
    /// the first host as CN. Reproducible for a given seed.
    pub fn issue_server_seeded(&self, hosts: &[&str], seed: u64) -> Result<IdentityCredential, CertError> {
        let first = hosts
            .first()
            .ok_or_else(|| CertError::MalformedDn("a server certificate needs a host name".into()))?;
        let subject = DistinguishedName::parse(&format!("/C=IT/O=GridGate Test/CN={first}"))?;
        let label = format!("server:{}", hosts.join(","));
        let key = seeded_key(seed, &label)?;
        let params = IssueParams {
            subject,
            public_key: key.public_key()?,
            serial: seeded_serial(seed, &label),
            not_before: fixed_not_before(),
            not_after: fixed_not_after(),
            is_ca: false,
        };
        let hosts: Vec<String> = hosts.iter().map(|h| h.to_string()).collect();
        let der = build_certificate(&params, &self.cert.subject, &self.key, &hosts)?;
        IdentityCredential::new(Certificate::from_der(der)?, key)
    }

    /// A user credential with a fresh random key.
    pub fn issue_user(
        &self,
        dn: &DistinguishedName,
        not_before: DateTime<Utc>,
        not_after: DateTime<Utc>,
    ) -> Result<IdentityCredential, CertError> {
        let pair = generate_keypair(DEFAULT_STRENGTH)?;
        let cert = self.issue(&IssueParams {
            subject: dn.clone(),
            public_key: pair.public.clone(),
            serial: rand::rngs::OsRng.next_u64() >> 1 | 1,
            not_before,
            not_after,
            is_ca: false,
        })?;
        IdentityCredential::new(cert, pair.private)
    }

    /// A reproducible user credential valid for the CA's whole lifetime.
    pub fn issue_user_seeded(
        &self,
        dn: &DistinguishedName,
        seed: u64,
    ) -> Result<IdentityCredential, CertError> {
        let label = dn.to_string();
        let key = seeded_key(seed, &label)?;
        let cert = self.issue(&IssueParams {
            subject: dn.clone(),
            public_key: key.public_key()?,
            serial: seeded_serial(seed, &label),
            not_before: fixed_not_before(),
            not_after: fixed_not_after(),
            is_ca: false,
        })?;
        IdentityCredential::new(cert, key)
    }
}

fn build_certificate(
    params: &IssueParams,
    issuer: &DistinguishedName,
    signing_key: &PrivateKey,
    server_hosts: &[String],
) -> Result<Vec<u8>, CertError> {
    let mut builder = X509::builder()?;
    builder.set_version(2)?;
    let serial = BigNum::from_dec_str(&params.serial.to_string())?;
    builder.set_serial_number(&*(Asn1Integer::from_bn(&serial)?))?;
    builder.set_subject_name(&*(params.subject.to_x509_name()?))?;
    builder.set_issuer_name(&*(issuer.to_x509_name()?))?;
    builder.set_pubkey(&*(params.public_key.to_pkey()?))?;
    builder.set_not_before(&*(asn1_time(params.not_before)?))?;
    builder.set_not_after(&*(asn1_time(params.not_after)?))?;
    if params.is_ca {
        builder.append_extension(BasicConstraints::new().critical().ca().build()?)?;
        builder.append_extension(
            KeyUsage::new()
                .critical()
                .key_cert_sign()
                .crl_sign()
                .digital_signature()
                .build()?,
        )?;
    } else {
        builder.append_extension(BasicConstraints::new().critical().build()?)?;
        builder.append_extension(
            KeyUsage::new()
                .critical()
                .digital_signature()
                .key_encipherment()
                .build()?,
        )?;
        if server_hosts.is_empty() {
            builder.append_extension(ExtendedKeyUsage::new().client_auth().build()?)?;
        } else {
            builder.append_extension(ExtendedKeyUsage::new().server_auth().build()?)?;
            let mut san = SubjectAlternativeName::new();
            for host in server_hosts {
                if host.parse::<std::net::IpAddr>().is_ok() {
                    san.ip(host);
                } else {
                    san.dns(host);
                }
            }
            let ext = san.build(&builder.x509v3_context(None, None))?;
            builder.append_extension(ext)?;
        }
    }
    let ski = SubjectKeyIdentifier::new().build(&builder.x509v3_context(None, None))?;
    builder.append_extension(ski)?;
    builder.sign(signing_key.pkey(), MessageDigest::sha256())?;
    Ok(builder.build().to_der()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let a = TestCa::from_seed(7).unwrap();
        let b = TestCa::from_seed(7).unwrap();
        assert_eq!(a.certificate().to_der(), b.certificate().to_der());
        let c = TestCa::from_seed(8).unwrap();
        assert_ne!(a.certificate().to_der(), c.certificate().to_der());
    }

    #[test]
    fn seeded_users_are_reproducible() {
        let ca = TestCa::from_seed(1).unwrap();
        let dn = DistinguishedName::parse("/C=IT/O=SNS/CN=Alice").unwrap();
        let a = ca.issue_user_seeded(&dn, 1).unwrap();
        let b = ca.issue_user_seeded(&dn, 1).unwrap();
        assert_eq!(a.certificate(), b.certificate());
        assert!(a.certificate().is_signed_by(&ca.certificate().public_key));
        assert!(!a.certificate().is_ca);
        assert!(ca.certificate().is_ca);
    }

    #[test]
    fn server_credentials_carry_alt_names() {
        let ca = TestCa::from_seed(1).unwrap();
        let server = ca.issue_server_seeded(&["localhost", "127.0.0.1"], 1).unwrap();
        let x = X509::from_der(server.certificate().to_der()).unwrap();
        let names = x.subject_alt_names().unwrap();
        assert_eq!(names.iter().filter_map(|n| n.dnsname()).collect::<Vec<_>>(), ["localhost"]);
        assert_eq!(names.iter().filter_map(|n| n.ipaddress()).collect::<Vec<_>>(), [&[127, 0, 0, 1][..]]);
        assert_eq!(server.dn().common_name(), Some("localhost"));
    }
}
