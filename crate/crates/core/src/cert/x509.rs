//! Decoded views over DER certificates and certification requests.
//!
//! Decoding and signature checks go through `x509-parser`; construction
//! (in `proxy.rs` and `testca.rs`) goes through OpenSSL. Keeping the two
//! paths separate means validation never trusts the code that built the
//! object it is checking.

use chrono::{DateTime, Utc};
use x509_parser::certificate::X509Certificate;
use x509_parser::certification_request::X509CertificationRequest;
use x509_parser::num_bigint::BigUint;
use x509_parser::prelude::FromDer;
use x509_parser::x509::{SubjectPublicKeyInfo, X509Name};

use super::dn::{attr_from_oid, DistinguishedName, Rdn};
use super::keys::PublicKey;
use super::CertError;

pub const PEM_CERTIFICATE: &str = "CERTIFICATE";
pub const PEM_CSR: &str = "CERTIFICATE REQUEST";
pub const PEM_PRIVATE_KEY: &str = "PRIVATE KEY";

/// RFC 3820 proxyCertInfo extension.
pub const OID_PROXY_CERT_INFO: &str = "1.3.6.1.5.5.7.1.14";

pub(crate) fn to_pem(tag: &str, der: &[u8]) -> String {
    let block = pem::Pem::new(tag, der.to_vec());
    pem::encode_config(
        &block,
        pem::EncodeConfig::new().set_line_ending(pem::LineEnding::LF),
    )
}

pub(crate) fn from_pem(expected_tag: &str, text: &[u8]) -> Result<Vec<u8>, CertError> {
    let block = pem::parse(text).map_err(|e| CertError::Decode(e.to_string()))?;
    if block.tag() != expected_tag {
        return Err(CertError::Decode(format!(
            "expected PEM '{expected_tag}', found '{}'",
            block.tag()
        )));
    }
    Ok(block.into_contents())
}

fn decode_name(name: &X509Name<'_>) -> Result<DistinguishedName, CertError> {
    let mut rdns = Vec::new();
    for rdn in name.iter() {
        for atv in rdn.iter() {
            let oid = atv.attr_type().to_id_string();
            let attr = attr_from_oid(&oid)
                .ok_or_else(|| CertError::MalformedDn(format!("unsupported attribute {oid}")))?;
            let value = atv
                .as_str()
                .map_err(|e| CertError::Decode(format!("attribute {attr}: {e}")))?;
            rdns.push(Rdn::new(attr, value)?);
        }
    }
    DistinguishedName::new(rdns)
}

fn timestamp(secs: i64) -> Result<DateTime<Utc>, CertError> {
    DateTime::from_timestamp(secs, 0)
        .ok_or_else(|| CertError::Decode(format!("timestamp {secs} out of range")))
}

fn parse_spki(der: &[u8]) -> Option<SubjectPublicKeyInfo<'_>> {
    SubjectPublicKeyInfo::from_der(der).ok().map(|(_, spki)| spki)
}

/// An X.509 certificate: its DER encoding plus the fields we reason about.
#[derive(Debug, Clone)]
pub struct Certificate {
    der: Vec<u8>,
    pub subject: DistinguishedName,
    pub issuer: DistinguishedName,
    pub public_key: PublicKey,
    pub serial: BigUint,
    pub not_before: DateTime<Utc>,
    pub not_after: DateTime<Utc>,
    pub is_ca: bool,
    pub is_proxy: bool,
    pub signature: Vec<u8>,
}

impl PartialEq for Certificate {
    fn eq(&self, other: &Self) -> bool {
        self.der == other.der
    }
}

impl Eq for Certificate {}

impl Certificate {
    pub fn from_der(der: Vec<u8>) -> Result<Self, CertError> {
        let (rest, cert) =
            X509Certificate::from_der(&der).map_err(|e| CertError::Decode(e.to_string()))?;
        if !rest.is_empty() {
            return Err(CertError::Decode("trailing bytes after certificate".into()));
        }
        let subject = decode_name(cert.subject())?;
        let issuer = decode_name(cert.issuer())?;
        let public_key = PublicKey::from_spki_der(cert.public_key().raw.to_vec())?;
        let serial = cert.serial.clone();
        let not_before = timestamp(cert.validity().not_before.timestamp())?;
        let not_after = timestamp(cert.validity().not_after.timestamp())?;
        let is_ca = cert.is_ca();
        let is_proxy = cert
            .extensions()
            .iter()
            .any(|ext| ext.oid.to_id_string() == OID_PROXY_CERT_INFO);
        let signature = cert.signature_value.data.to_vec();
        if not_before >= not_after {
            return Err(CertError::Decode("not_before is not before not_after".into()));
        }
        Ok(Self {
            der,
            subject,
            issuer,
            public_key,
            serial,
            not_before,
            not_after,
            is_ca,
            is_proxy,
            signature,
        })
    }

    pub fn from_pem(pem: &[u8]) -> Result<Self, CertError> {
        Self::from_der(from_pem(PEM_CERTIFICATE, pem)?)
    }

    pub fn to_der(&self) -> &[u8] {
        &self.der
    }

    pub fn to_pem(&self) -> String {
        to_pem(PEM_CERTIFICATE, &self.der)
    }

    /// Whether this certificate's signature verifies under `issuer_key`.
    pub fn is_signed_by(&self, issuer_key: &PublicKey) -> bool {
        let Ok((_, cert)) = X509Certificate::from_der(&self.der) else {
            return false;
        };
        let Some(spki) = parse_spki(issuer_key.as_der()) else {
            return false;
        };
        cert.verify_signature(Some(&spki)).is_ok()
    }

    pub fn is_valid_at(&self, now: DateTime<Utc>) -> bool {
        self.not_before <= now && now <= self.not_after
    }
}

/// A PKCS#10 certification request.
#[derive(Debug, Clone)]
pub struct CertSigningRequest {
    der: Vec<u8>,
    pub subject: DistinguishedName,
    pub public_key: PublicKey,
    pub self_signature: Vec<u8>,
}

impl PartialEq for CertSigningRequest {
    fn eq(&self, other: &Self) -> bool {
        self.der == other.der
    }
}

impl Eq for CertSigningRequest {}

impl CertSigningRequest {
    pub fn from_der(der: Vec<u8>) -> Result<Self, CertError> {
        let (rest, req) =
            X509CertificationRequest::from_der(&der).map_err(|e| CertError::Decode(e.to_string()))?;
        if !rest.is_empty() {
            return Err(CertError::Decode("trailing bytes after request".into()));
        }
        let info = &req.certification_request_info;
        let subject = decode_name(&info.subject)?;
        let public_key = PublicKey::from_spki_der(info.subject_pki.raw.to_vec())?;
        let self_signature = req.signature_value.data.to_vec();
        Ok(Self {
            der,
            subject,
            public_key,
            self_signature,
        })
    }

    pub fn from_pem(pem: &[u8]) -> Result<Self, CertError> {
        Self::from_der(from_pem(PEM_CSR, pem)?)
    }

    pub fn to_der(&self) -> &[u8] {
        &self.der
    }

    pub fn to_pem(&self) -> String {
        to_pem(PEM_CSR, &self.der)
    }

    /// Proof of possession: the request is signed by the key it carries.
    pub fn verify_self_signature(&self) -> bool {
        match X509CertificationRequest::from_der(&self.der) {
            Ok((_, req)) => req.verify_signature().is_ok(),
            Err(_) => false,
        }
    }
}
