use bitvec::prelude::*;

use super::{Bits, Payload, ProtocolKind, ProtocolSpec};
use crate::rng::SeedTree;
use crate::{Error, Result};

/// Relative slack allowed on top of `e^epsilon` for floating-point rounding.
pub const LDP_RELATIVE_SLACK: f64 = 1e-9;

const MAX_KRR_K: u32 = 1 << 14;
const MAX_OUE_K: u32 = 16;
const MAX_OLH_G: u32 = 16;
const MAX_OLH_K: u32 = 1 << 12;
/// Number of public hash seeds enumerated for OLH.
const OLH_SEEDS: u64 = 64;

/// Largest likelihood ratio `Pr[A(v)=y] / Pr[A(v')=y]` over all inputs and
/// outputs, from closed-form outcome probabilities.
pub fn verify_ldp(spec: &ProtocolSpec) -> Result<f64> {
    spec.validate()?;
    let k = spec.k();
    match spec.kind {
        ProtocolKind::Krr => {
            if k > MAX_KRR_K {
                return Err(Error::UnsupportedSize(format!("KRR with k = {k} > {MAX_KRR_K}")));
            }
            max_ratio(spec, (0..k).map(Payload::Krr))
        }
        ProtocolKind::Oue => {
            if k > MAX_OUE_K {
                return Err(Error::UnsupportedSize(format!("OUE with k = {k} > {MAX_OUE_K}")));
            }
            let outputs = (0u32..1 << k).map(move |mask| {
                let mut bits: Bits = bitvec![u64, Lsb0; 0; k as usize];
                for i in 0..k as usize {
                    bits.set(i, mask >> i & 1 == 1);
                }
                Payload::Oue(bits)
            });
            max_ratio(spec, outputs)
        }
        ProtocolKind::Olh => {
            let g = spec.g();
            if g > MAX_OLH_G || k > MAX_OLH_K {
                return Err(Error::UnsupportedSize(format!(
                    "OLH with g = {g}, k = {k} (limits {MAX_OLH_G}, {MAX_OLH_K})"
                )));
            }
            let seeds = SeedTree::new(0x01A5);
            let outputs = (0..OLH_SEEDS).flat_map(move |s| {
                let seed = seeds.derive_seed("olh-verify", &[s]);
                (0..g).map(move |value| Payload::Olh { seed, value })
            });
            max_ratio(spec, outputs)
        }
    }
}

fn max_ratio(spec: &ProtocolSpec, outputs: impl Iterator<Item = Payload>) -> Result<f64> {
    let mut worst: f64 = 1.0;
    for y in outputs {
        let mut hi = f64::MIN;
        let mut lo = f64::MAX;
        for v in 0..spec.k() {
            let pr = spec.outcome_probability(v, &y)?;
            hi = hi.max(pr);
            lo = lo.min(pr);
        }
        let ratio = if lo > 0.0 { hi / lo } else if hi > 0.0 { f64::INFINITY } else { 1.0 };
        worst = worst.max(ratio);
    }
    Ok(worst)
}

/// Whether a measured ratio satisfies the epsilon-LDP bound.
pub fn passes_ldp(spec: &ProtocolSpec, max_ratio: f64) -> bool {
    max_ratio <= spec.epsilon().exp() * (1.0 + LDP_RELATIVE_SLACK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn krr_ratio_is_e_to_the_epsilon() {
        let spec = ProtocolSpec::krr(4, 1.0).unwrap();
        let r = verify_ldp(&spec).unwrap();
        assert!((r - std::f64::consts::E).abs() < 1e-12);
        assert!(passes_ldp(&spec, r));
    }

    #[test]
    fn oue_k2_bounded_by_three() {
        let spec = ProtocolSpec::oue(2, 3f64.ln()).unwrap();
        let r = verify_ldp(&spec).unwrap();
        assert!(r <= 3.0 * (1.0 + LDP_RELATIVE_SLACK));
    }

    #[test]
    fn tiny_epsilon_is_nearly_uniform() {
        let spec = ProtocolSpec::krr(2, 1e-4).unwrap();
        assert!((verify_ldp(&spec).unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn olh_ratio_bounded() {
        for eps in [0.5, 1.0, 2.0] {
            let spec = ProtocolSpec::olh(8, eps).unwrap();
            let r = verify_ldp(&spec).unwrap();
            assert!(passes_ldp(&spec, r), "eps {eps}: {r}");
        }
    }

    #[test]
    fn oversized_enumeration_rejected() {
        let spec = ProtocolSpec::oue(17, 1.0).unwrap();
        assert!(matches!(verify_ldp(&spec), Err(Error::UnsupportedSize(_))));
        let spec = ProtocolSpec::olh(8, 3.0).unwrap(); // g = 21
        assert!(matches!(verify_ldp(&spec), Err(Error::UnsupportedSize(_))));
    }

    #[test]
    fn a_leaky_mechanism_fails() {
        // claims epsilon = 0.5 but carries the probabilities for epsilon = 1
        let honest = ProtocolSpec::krr(4, 1.0).unwrap();
        let r = verify_ldp(&honest).unwrap();
        let claimed = ProtocolSpec::krr(4, 0.5).unwrap();
        assert!(!passes_ldp(&claimed, r));
    }
}
