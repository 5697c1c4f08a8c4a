//! Independent oracles shared by the integration tests.
//!
//! Everything here goes through the `openssl` command-line tool or builds
//! certificates directly with OpenSSL, never through the crate's own
//! decoding or validation paths.
#![allow(dead_code)]

use std::path::Path;
use std::process::Command;

use chrono::{DateTime, Utc};
use gridgate_core::cert::{Certificate, IdentityCredential, ProxyBundle, PublicKey};
use openssl::asn1::{Asn1Integer, Asn1Object, Asn1OctetString, Asn1Time};
use openssl::bn::BigNum;
use openssl::hash::MessageDigest;
use openssl::nid::Nid;
use openssl::pkey::PKey;
use openssl::x509::{X509Extension, X509Name, X509};

fn write(dir: &Path, name: &str, contents: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path.display().to_string()
}

/// `openssl verify -allow_proxy_certs` over the bundle's PEM files.
pub fn openssl_accepts(bundle: &ProxyBundle, anchors: &[Certificate], at: DateTime<Utc>) -> bool {
    let dir = tempfile::tempdir().unwrap();
    let ca: String = anchors.iter().map(|c| c.to_pem()).collect();
    let chain: String = bundle.issuer_chain().iter().map(|c| c.to_pem()).collect();
    let ca = write(dir.path(), "ca.pem", &ca);
    let chain = write(dir.path(), "chain.pem", &chain);
    let proxy = write(dir.path(), "proxy.pem", &bundle.proxy_cert().to_pem());
    let out = Command::new("openssl")
        .args(["verify", "-allow_proxy_certs", "-CAfile", &ca, "-untrusted", &chain])
        .args(["-attime", &at.timestamp().to_string(), &proxy])
        .output()
        .expect("openssl binary available");
    out.status.success()
}

/// Subject, issuer and serial as printed by `openssl x509`.
pub struct DecodedCert {
    pub subject: String,
    pub issuer: String,
    pub serial_hex: String,
    pub text: String,
}

pub fn openssl_decode(cert_pem: &str) -> DecodedCert {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.pem", cert_pem);
    let out = Command::new("openssl")
        .args(["x509", "-noout", "-nameopt", "compat", "-subject", "-issuer", "-serial", "-text", "-in", &path])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let field = |prefix: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(prefix))
            .unwrap_or_else(|| panic!("no {prefix} in openssl output"))
            .trim()
            .to_string()
    };
    DecodedCert {
        subject: field("subject="),
        issuer: field("issuer="),
        serial_hex: field("serial="),
        text,
    }
}

/// Signs an arbitrary proxy-shaped certificate with the identity's key,
/// bypassing every rule the crate enforces.
pub struct Forge<'a> {
    pub issuer: &'a IdentityCredential,
    pub subject_extra: Vec<(Nid, String)>,
    pub public_key: PublicKey,
    pub not_before: DateTime<Utc>,
    pub not_after: DateTime<Utc>,
    pub ca: bool,
}

impl Forge<'_> {
    pub fn build(&self) -> Certificate {
        let issuer = X509::from_der(self.issuer.certificate().to_der()).unwrap();
        let key_pem = self.issuer.private_key().to_pem().unwrap();
        let key = PKey::private_key_from_pem(key_pem.as_bytes()).unwrap();
        let mut name = X509Name::builder().unwrap();
        for e in issuer.subject_name().entries() {
            name.append_entry(e).unwrap();
        }
        for (nid, value) in &self.subject_extra {
            name.append_entry_by_nid(*nid, value).unwrap();
        }
        let name = name.build();
        let mut b = X509::builder().unwrap();
        b.set_version(2).unwrap();
        let serial = Asn1Integer::from_bn(&BigNum::from_u32(4242).unwrap()).unwrap();
        b.set_serial_number(&serial).unwrap();
        b.set_subject_name(&name).unwrap();
        b.set_issuer_name(issuer.subject_name()).unwrap();
        let pubkey = PKey::public_key_from_der(self.public_key.as_der()).unwrap();
        b.set_pubkey(&pubkey).unwrap();
        b.set_not_before(&Asn1Time::from_unix(self.not_before.timestamp()).unwrap()).unwrap();
        b.set_not_after(&Asn1Time::from_unix(self.not_after.timestamp()).unwrap()).unwrap();
        if self.ca {
            b.append_extension(
                openssl::x509::extension::BasicConstraints::new().critical().ca().build().unwrap(),
            )
            .unwrap();
        }
        let pci = X509Extension::new_from_der(
            &Asn1Object::from_str("1.3.6.1.5.5.7.1.14").unwrap(),
            true,
            &Asn1OctetString::new_from_bytes(&[
                0x30, 0x0c, 0x30, 0x0a, 0x06, 0x08, 0x2b, 0x06, 0x01, 0x05, 0x05, 0x07, 0x15, 0x01,
            ])
            .unwrap(),
        )
        .unwrap();
        b.append_extension(pci).unwrap();
        b.sign(&key, MessageDigest::sha256()).unwrap();
        Certificate::from_der(b.build().to_der().unwrap()).unwrap()
    }
}
