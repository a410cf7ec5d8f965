use bitvec::prelude::*;
use rand::Rng;

use super::{Bits, Payload, ProtocolKind, ProtocolSpec};
use crate::rng::mix64;
use crate::{Error, Result};

const ITEM_SALT: u64 = 0xD6E8_FEB8_6659_FD93;

/// Seeded hash used by OLH. The result is reduced modulo `g` by the caller.
///
/// This is a fixed constant of the artifact: changing it changes every
/// golden number that involves OLH.
#[inline]
pub fn olh_hash(seed: u64, item: u32) -> u64 {
    mix64(seed ^ mix64((item as u64).wrapping_add(1).wrapping_mul(ITEM_SALT)))
}

#[inline]
fn olh_bucket(seed: u64, item: u32, g: u32) -> u32 {
    (olh_hash(seed, item) % g as u64) as u32
}

/// Randomized response over `0..size`: keep `value` with probability `keep`,
/// otherwise report one of the other `size - 1` values uniformly.
fn randomized_response<R: Rng + ?Sized>(value: u32, size: u32, keep: f64, rng: &mut R) -> u32 {
    if rng.random::<f64>() < keep {
        value
    } else {
        let other = rng.random_range(0..size - 1);
        if other >= value {
            other + 1
        } else {
            other
        }
    }
}

impl ProtocolSpec {
    /// Perturbs `item` under this mechanism.
    pub fn perturb<R: Rng + ?Sized>(&self, item: u32, rng: &mut R) -> Result<Payload> {
        self.validate()?;
        self.domain.check(item)?;
        Ok(match self.kind {
            ProtocolKind::Krr => Payload::Krr(randomized_response(item, self.k(), self.p(), rng)),
            ProtocolKind::Oue => {
                let q = self.q();
                let mut bits: Bits = bitvec![u64, Lsb0; 0; self.k() as usize];
                for i in 0..self.k() as usize {
                    let prob = if i == item as usize { 0.5 } else { q };
                    if rng.random::<f64>() < prob {
                        bits.set(i, true);
                    }
                }
                Payload::Oue(bits)
            }
            ProtocolKind::Olh => {
                let g = self.g();
                let seed = rng.random::<u64>();
                let hashed = olh_bucket(seed, item, g);
                Payload::Olh {
                    seed,
                    value: randomized_response(hashed, g, self.p(), rng),
                }
            }
        })
    }

    /// A draw uniform over the whole output space, independent of any input.
    pub fn random_output<R: Rng + ?Sized>(&self, rng: &mut R) -> Payload {
        match self.kind {
            ProtocolKind::Krr => Payload::Krr(rng.random_range(0..self.k())),
            ProtocolKind::Oue => {
                let mut bits: Bits = bitvec![u64, Lsb0; 0; self.k() as usize];
                for i in 0..self.k() as usize {
                    bits.set(i, rng.random::<bool>());
                }
                Payload::Oue(bits)
            }
            ProtocolKind::Olh => Payload::Olh {
                seed: rng.random::<u64>(),
                value: rng.random_range(0..self.g()),
            },
        }
    }

    /// Checks that `payload` is a well-formed output of this mechanism.
    pub fn check_payload(&self, payload: &Payload) -> Result<()> {
        match (self.kind, payload) {
            (ProtocolKind::Krr, Payload::Krr(v)) if *v < self.k() => Ok(()),
            (ProtocolKind::Oue, Payload::Oue(bits)) if bits.len() == self.k() as usize => Ok(()),
            (ProtocolKind::Olh, Payload::Olh { value, .. }) if *value < self.g() => Ok(()),
            (kind, p) => Err(Error::Shape(format!(
                "{} payload {:?} under a {kind} spec with k = {}",
                p.kind(),
                ShortPayload(p),
                self.k()
            ))),
        }
    }

    /// Whether `payload` counts toward `item` when aggregating.
    pub fn supports(&self, payload: &Payload, item: u32) -> Result<bool> {
        self.domain.check(item)?;
        self.check_payload(payload)?;
        Ok(self.supports_unchecked(payload, item))
    }

    #[inline]
    pub(crate) fn supports_unchecked(&self, payload: &Payload, item: u32) -> bool {
        match payload {
            Payload::Krr(v) => *v == item,
            Payload::Oue(bits) => bits[item as usize],
            Payload::Olh { seed, value } => olh_bucket(*seed, item, self.g()) == *value,
        }
    }

    /// Closed-form probability that input `item` produces `payload`.
    ///
    /// For OLH the probability is conditional on the payload's hash seed,
    /// which is drawn independently of the input.
    pub fn outcome_probability(&self, item: u32, payload: &Payload) -> Result<f64> {
        self.domain.check(item)?;
        self.check_payload(payload)?;
        Ok(match payload {
            Payload::Krr(v) => {
                if *v == item {
                    self.p()
                } else {
                    self.q()
                }
            }
            Payload::Oue(bits) => {
                let q = self.q();
                bits.iter()
                    .by_vals()
                    .enumerate()
                    .map(|(i, bit)| {
                        let on = if i == item as usize { 0.5 } else { q };
                        if bit {
                            on
                        } else {
                            1.0 - on
                        }
                    })
                    .product()
            }
            Payload::Olh { seed, value } => {
                if olh_bucket(*seed, item, self.g()) == *value {
                    self.p()
                } else {
                    self.q()
                }
            }
        })
    }
}

struct ShortPayload<'a>(&'a Payload);

impl std::fmt::Debug for ShortPayload<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            Payload::Krr(v) => write!(f, "item {v}"),
            Payload::Oue(bits) => write!(f, "{} bits", bits.len()),
            Payload::Olh { value, .. } => write!(f, "hashed value {value}"),
        }
    }
}
