//! Local differential privacy frequency oracles.
//!
//! Three protocols are provided: k-ary randomized response ([`ProtocolKind::Krr`]),
//! optimized unary encoding ([`ProtocolKind::Oue`]) and optimized local hashing
//! ([`ProtocolKind::Olh`]). A [`ProtocolSpec`] fixes the protocol, the domain and
//! the privacy budget; every other operation here is a function of it.

mod budget;
mod estimate;
mod mechanism;
mod verify;

use std::fmt;
use std::str::FromStr;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tick};

pub use budget::BudgetLedger;
pub use estimate::{aggregate, estimate, estimate_real, FrequencyEstimate};
pub use mechanism::olh_hash;
pub use verify::{passes_ldp, verify_ldp, LDP_RELATIVE_SLACK};

/// Bit vector carried by OUE reports.
pub type Bits = BitVec<u64, Lsb0>;

/// Categorical domain `0..k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Domain {
    size_k: u32,
}

impl Domain {
    pub fn new(size_k: u32) -> Result<Self> {
        if size_k < 2 {
            return Err(Error::param(format!("domain size must be >= 2, got {size_k}")));
        }
        Ok(Domain { size_k })
    }

    pub fn k(&self) -> u32 {
        self.size_k
    }

    pub fn check(&self, item: u32) -> Result<()> {
        if item < self.size_k {
            Ok(())
        } else {
            Err(Error::Domain {
                item,
                k: self.size_k,
            })
        }
    }
}

/// Privacy budget. `delta` is carried for forward compatibility only; every
/// mechanism here is pure epsilon-LDP and rejects a nonzero delta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::param(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::param(format!("delta must lie in [0, 1), got {delta}")));
        }
        Ok(PrivacyParams { epsilon, delta })
    }

    pub fn pure(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Krr,
    Oue,
    Olh,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 3] = [ProtocolKind::Krr, ProtocolKind::Oue, ProtocolKind::Olh];

    pub fn name(&self) -> &'static str {
        match self {
            ProtocolKind::Krr => "krr",
            ProtocolKind::Oue => "oue",
            ProtocolKind::Olh => "olh",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "krr" => Ok(ProtocolKind::Krr),
            "oue" => Ok(ProtocolKind::Oue),
            "olh" => Ok(ProtocolKind::Olh),
            other => Err(Error::config(format!("unknown protocol `{other}`"))),
        }
    }
}

/// A fully parameterized LDP mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    pub domain: Domain,
    pub privacy: PrivacyParams,
    /// Hash range `g`; only meaningful for OLH.
    pub olh_range_g: Option<u32>,
}

impl ProtocolSpec {
    /// Builds a spec with the optimized parameters for `kind`. For OLH the
    /// hash range is `round(e^epsilon) + 1`.
    pub fn new(kind: ProtocolKind, k: u32, epsilon: f64) -> Result<Self> {
        let privacy = PrivacyParams::pure(epsilon)?;
        let g = match kind {
            ProtocolKind::Olh => Some(Self::optimal_olh_range(epsilon)),
            _ => None,
        };
        let spec = ProtocolSpec {
            kind,
            domain: Domain::new(k)?,
            privacy,
            olh_range_g: g,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn krr(k: u32, epsilon: f64) -> Result<Self> {
        Self::new(ProtocolKind::Krr, k, epsilon)
    }

    pub fn oue(k: u32, epsilon: f64) -> Result<Self> {
        Self::new(ProtocolKind::Oue, k, epsilon)
    }

    pub fn olh(k: u32, epsilon: f64) -> Result<Self> {
        Self::new(ProtocolKind::Olh, k, epsilon)
    }

    /// OLH with an explicit hash range.
    pub fn olh_with_range(k: u32, epsilon: f64, g: u32) -> Result<Self> {
        let mut spec = Self::olh(k, epsilon)?;
        spec.olh_range_g = Some(g);
        spec.validate()?;
        Ok(spec)
    }

    pub fn optimal_olh_range(epsilon: f64) -> u32 {
        let g = epsilon.exp().round() + 1.0;
        if g.is_finite() && g < u32::MAX as f64 {
            (g as u32).max(2)
        } else {
            u32::MAX
        }
    }

    pub fn validate(&self) -> Result<()> {
        let PrivacyParams { epsilon, delta } = self.privacy;
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::param(format!("epsilon must be positive, got {epsilon}")));
        }
        if delta != 0.0 {
            return Err(Error::config(format!(
                "delta = {delta}: only pure epsilon-LDP mechanisms are implemented"
            )));
        }
        Domain::new(self.domain.k())?;
        match (self.kind, self.olh_range_g) {
            (ProtocolKind::Olh, Some(g)) if g >= 2 => Ok(()),
            (ProtocolKind::Olh, g) => Err(Error::param(format!("OLH range must be >= 2, got {g:?}"))),
            (_, None) => Ok(()),
            (kind, Some(_)) => Err(Error::param(format!("hash range given for {kind}"))),
        }
    }

    pub fn k(&self) -> u32 {
        self.domain.k()
    }

    pub fn epsilon(&self) -> f64 {
        self.privacy.epsilon
    }

    /// OLH hash range (panics for other protocols).
    pub fn g(&self) -> u32 {
        self.olh_range_g.expect("hash range is only defined for OLH")
    }

    /// Probability that the perturbed output keeps the (hashed) true value.
    pub fn p(&self) -> f64 {
        let e = self.epsilon().exp();
        match self.kind {
            ProtocolKind::Krr => e / (e + self.k() as f64 - 1.0),
            ProtocolKind::Oue => 0.5,
            ProtocolKind::Olh => e / (e + self.g() as f64 - 1.0),
        }
    }

    /// Probability of reporting one particular other value (KRR, OLH inner
    /// randomized response) or of setting one other bit (OUE).
    pub fn q(&self) -> f64 {
        let e = self.epsilon().exp();
        match self.kind {
            ProtocolKind::Krr => 1.0 / (e + self.k() as f64 - 1.0),
            ProtocolKind::Oue => 1.0 / (e + 1.0),
            ProtocolKind::Olh => 1.0 / (e + self.g() as f64 - 1.0),
        }
    }

    /// `(p*, q*)`: probability that a report supports its true item, and
    /// that it supports any given other item.
    pub fn support_probs(&self) -> (f64, f64) {
        match self.kind {
            ProtocolKind::Krr | ProtocolKind::Oue => (self.p(), self.q()),
            ProtocolKind::Olh => (self.p(), 1.0 / self.g() as f64),
        }
    }

    /// Per-item support probability of a draw uniform over the output space.
    pub fn uniform_support(&self) -> f64 {
        match self.kind {
            ProtocolKind::Krr => 1.0 / self.k() as f64,
            ProtocolKind::Oue => 0.5,
            ProtocolKind::Olh => 1.0 / self.g() as f64,
        }
    }

    /// Analytic variance of the unbiased estimate for an item with true
    /// frequency `f` over `n` reports.
    pub fn estimator_variance(&self, f: f64, n: u64) -> f64 {
        let (ps, qs) = self.support_probs();
        let x = f * ps + (1.0 - f) * qs;
        x * (1.0 - x) / (n as f64 * (ps - qs).powi(2))
    }
}

/// Perturbed output of one protocol invocation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Krr(u32),
    Oue(Bits),
    Olh { seed: u64, value: u32 },
}

impl Payload {
    pub fn kind(&self) -> ProtocolKind {
        match self {
            Payload::Krr(_) => ProtocolKind::Krr,
            Payload::Oue(_) => ProtocolKind::Oue,
            Payload::Olh { .. } => ProtocolKind::Olh,
        }
    }
}

/// One user's perturbed submission.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClientReport {
    pub client_id: u64,
    pub report_id: u64,
    pub payload: Payload,
    pub emit_time: Tick,
}

/// Fixed per-packet framing overhead in bytes.
pub const HEADER_BYTES: u32 = 16;

impl ClientReport {
    pub fn new(client_id: u64, report_id: u64, payload: Payload, emit_time: Tick) -> Self {
        ClientReport {
            client_id,
            report_id,
            payload,
            emit_time,
        }
    }

    /// On-the-wire size for a domain of `k` items.
    pub fn size_bytes(&self, k: u32) -> u32 {
        let payload = match &self.payload {
            Payload::Krr(_) => (32 - (k - 1).leading_zeros()).max(1).div_ceil(8),
            Payload::Oue(_) => k.div_ceil(8),
            Payload::Olh { .. } => 8 + 4,
        };
        HEADER_BYTES + payload
    }
}
