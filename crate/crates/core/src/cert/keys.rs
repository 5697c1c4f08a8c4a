use std::fmt;

use openssl::hash::MessageDigest;
use openssl::pkey::{PKey, Private, Public};
use openssl::rsa::Rsa;
use openssl::sign::{Signer, Verifier};
use zeroize::Zeroizing;

use super::CertError;

pub const SUPPORTED_STRENGTHS: [u32; 3] = [2048, 3072, 4096];
pub const DEFAULT_STRENGTH: u32 = 2048;

/// DER-encoded SubjectPublicKeyInfo.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PublicKey(Vec<u8>);

impl PublicKey {
    pub fn from_spki_der(der: Vec<u8>) -> Result<Self, CertError> {
        PKey::public_key_from_der(&der)?;
        Ok(Self(der))
    }

    pub fn as_der(&self) -> &[u8] {
        &self.0
    }

    pub(crate) fn to_pkey(&self) -> Result<PKey<Public>, CertError> {
        Ok(PKey::public_key_from_der(&self.0)?)
    }

    pub fn bits(&self) -> Result<u32, CertError> {
        Ok(self.to_pkey()?.bits())
    }

    /// RSA-SHA256 signature check; any decoding problem counts as a failed check.
    pub fn verify(&self, data: &[u8], signature: &[u8]) -> bool {
        let Ok(key) = self.to_pkey() else {
            return false;
        };
        let Ok(mut verifier) = Verifier::new(MessageDigest::sha256(), &key) else {
            return false;
        };
        verifier.verify_oneshot(signature, data).unwrap_or(false)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digest = openssl::sha::sha256(&self.0);
        write!(f, "PublicKey(sha256:{})", hex::encode(&digest[..8]))
    }
}

/// A private key. Never printed, never serialized implicitly.
#[derive(Clone)]
pub struct PrivateKey(PKey<Private>);

impl PrivateKey {
    pub fn from_pkey(key: PKey<Private>) -> Self {
        Self(key)
    }

    pub fn from_pem(pem: &[u8]) -> Result<Self, CertError> {
        Ok(Self(PKey::private_key_from_pem(pem)?))
    }

    pub fn from_pkcs8_der(der: &[u8]) -> Result<Self, CertError> {
        Ok(Self(PKey::private_key_from_pkcs8(der)?))
    }

    pub(crate) fn pkey(&self) -> &PKey<Private> {
        &self.0
    }

    pub fn public_key(&self) -> Result<PublicKey, CertError> {
        Ok(PublicKey(self.0.public_key_to_der()?))
    }

    pub fn bits(&self) -> u32 {
        self.0.bits()
    }

    pub fn matches(&self, public: &PublicKey) -> bool {
        self.public_key().map(|p| &p == public).unwrap_or(false)
    }

    pub fn sign(&self, data: &[u8]) -> Result<Vec<u8>, CertError> {
        let mut signer = Signer::new(MessageDigest::sha256(), &self.0)?;
        Ok(signer.sign_oneshot_to_vec(data)?)
    }

    /// PKCS#8 DER. The caller owns the secret copy.
    pub fn to_pkcs8_der(&self) -> Result<Zeroizing<Vec<u8>>, CertError> {
        Ok(Zeroizing::new(self.0.private_key_to_pkcs8()?))
    }

    /// Algorithm-specific DER (PKCS#1 `RSAPrivateKey` for RSA keys).
    pub fn to_traditional_der(&self) -> Result<Zeroizing<Vec<u8>>, CertError> {
        Ok(Zeroizing::new(self.0.private_key_to_der()?))
    }

    /// PKCS#8 PEM (`BEGIN PRIVATE KEY`).
    pub fn to_pem(&self) -> Result<Zeroizing<String>, CertError> {
        let pem = Zeroizing::new(self.0.private_key_to_pem_pkcs8()?);
        Ok(Zeroizing::new(String::from_utf8_lossy(&pem).into_owned()))
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PrivateKey(<{} bits, redacted>)", self.0.bits())
    }
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
    pub strength: u32,
}

impl KeyPair {
    pub fn from_private(private: PrivateKey) -> Result<Self, CertError> {
        Ok(Self {
            public: private.public_key()?,
            strength: private.bits(),
            private,
        })
    }
}

/// Fresh RSA key pair of the requested modulus size.
pub fn generate_keypair(strength: u32) -> Result<KeyPair, CertError> {
    if !SUPPORTED_STRENGTHS.contains(&strength) {
        return Err(CertError::UnsupportedStrength(strength));
    }
    let rsa = Rsa::generate(strength)?;
    KeyPair::from_private(PrivateKey(PKey::from_rsa(rsa)?))
}
