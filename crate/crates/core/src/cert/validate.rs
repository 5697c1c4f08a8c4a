//! Proxy chain validation.
//!
//! Every check runs and every failure is reported; nothing short-circuits,
//! so a report lists all the reasons a bundle is unusable.

use std::fmt;

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;

use super::proxy::ProxyBundle;
use super::x509::Certificate;

/// Tolerance applied to `not_before` to absorb clock differences between hosts.
pub const CLOCK_SKEW: Duration = Duration::minutes(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureCode {
    /// A certificate's signature does not verify under its issuer's key.
    BadSignature,
    /// A certificate's issuer field does not name the next certificate up.
    IssuerNameMismatch,
    /// The chain does not end at a configured trust anchor.
    UntrustedRoot,
    NotYetValid,
    Expired,
    /// Proxy subject is not the issuer subject plus one CN.
    BadProxyNaming,
    /// Proxy validity extends past its issuer's.
    ProxyOutlivesIssuer,
    /// A CA certificate is acting as an end entity (or the proxy claims CA).
    CaAsEndEntity,
    /// A certificate above the end entity is not a CA.
    IssuerNotCa,
    /// The proxy private key does not belong to the proxy certificate.
    KeyMismatch,
}

impl fmt::Display for FailureCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        f.write_str(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationFailure {
    pub code: FailureCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub failures: Vec<ValidationFailure>,
    /// Minimum `not_after` over the chain; present only when valid.
    pub effective_expiry: Option<DateTime<Utc>>,
}

impl ValidationReport {
    pub fn has(&self, code: FailureCode) -> bool {
        self.failures.iter().any(|f| f.code == code)
    }

    pub fn codes(&self) -> Vec<FailureCode> {
        self.failures.iter().map(|f| f.code).collect()
    }

    pub fn summary(&self) -> String {
        self.failures
            .iter()
            .map(|f| format!("{}: {}", f.code, f.message))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

struct Collector(Vec<ValidationFailure>);

impl Collector {
    fn fail(&mut self, code: FailureCode, message: String) {
        self.0.push(ValidationFailure { code, message });
    }
}

fn check_window(out: &mut Collector, label: &str, cert: &Certificate, now: DateTime<Utc>) {
    if now + CLOCK_SKEW < cert.not_before {
        out.fail(
            FailureCode::NotYetValid,
            format!("{label} not valid before {}", cert.not_before),
        );
    }
    if now > cert.not_after {
        out.fail(
            FailureCode::Expired,
            format!("{label} expired at {}", cert.not_after),
        );
    }
}

pub fn validate_proxy_chain(
    bundle: &ProxyBundle,
    trust_anchors: &[Certificate],
    now: DateTime<Utc>,
) -> ValidationReport {
    let mut out = Collector(Vec::new());
    let proxy = bundle.proxy_cert();
    let chain = bundle.issuer_chain();
    let user = &chain[0];

    if !bundle.proxy_private_key().matches(&proxy.public_key) {
        out.fail(
            FailureCode::KeyMismatch,
            "proxy private key does not match the proxy certificate".into(),
        );
    }

    // Signatures and issuer linkage, proxy upward.
    let path: Vec<&Certificate> = bundle.certificates().collect();
    for (i, pair) in path.windows(2).enumerate() {
        let (child, parent) = (pair[0], pair[1]);
        let label = if i == 0 { "proxy".to_string() } else { format!("chain[{}]", i - 1) };
        if child.issuer != parent.subject {
            out.fail(
                FailureCode::IssuerNameMismatch,
                format!("{label} issuer {} is not {}", child.issuer, parent.subject),
            );
        }
        if !child.is_signed_by(&parent.public_key) {
            out.fail(
                FailureCode::BadSignature,
                format!("{label} signature does not verify under {}", parent.subject),
            );
        }
    }

    // Termination at a trust anchor.
    let top = *path.last().expect("non-empty path");
    let anchored_at = if trust_anchors.iter().any(|a| a == top) {
        Some(top)
    } else {
        trust_anchors
            .iter()
            .find(|a| a.subject == top.issuer && top.is_signed_by(&a.public_key))
    };
    match anchored_at {
        Some(anchor) => check_window(&mut out, "trust anchor", anchor, now),
        None => out.fail(
            FailureCode::UntrustedRoot,
            format!("no trust anchor issued {}", top.subject),
        ),
    }

    // Validity windows.
    check_window(&mut out, "proxy", proxy, now);
    for (i, cert) in chain.iter().enumerate() {
        check_window(&mut out, &format!("chain[{i}]"), cert, now);
    }

    // Proxy naming and lifetime relative to the delegating certificate.
    if !proxy.subject.is_proxy_of(&user.subject) {
        out.fail(
            FailureCode::BadProxyNaming,
            format!(
                "proxy subject {} is not {} plus one CN",
                proxy.subject, user.subject
            ),
        );
    }
    if proxy.not_after > user.not_after {
        out.fail(
            FailureCode::ProxyOutlivesIssuer,
            format!(
                "proxy expires {} after its issuer {}",
                proxy.not_after, user.not_after
            ),
        );
    }

    // Role checks below the anchor.
    if proxy.is_ca {
        out.fail(FailureCode::CaAsEndEntity, "proxy certificate claims CA".into());
    }
    if user.is_ca {
        out.fail(
            FailureCode::CaAsEndEntity,
            format!("CA certificate {} used as the delegating end entity", user.subject),
        );
    }
    for (i, cert) in chain.iter().enumerate().skip(1) {
        if !cert.is_ca {
            out.fail(
                FailureCode::IssuerNotCa,
                format!("chain[{i}] {} signs certificates but is not a CA", cert.subject),
            );
        }
    }

    let valid = out.0.is_empty();
    let effective_expiry = valid.then(|| {
        let anchor_expiry = anchored_at.map(|a| a.not_after);
        let expiry = bundle.expiry();
        anchor_expiry.map_or(expiry, |a| a.min(expiry))
    });
    ValidationReport {
        valid,
        failures: out.0,
        effective_expiry,
    }
}
