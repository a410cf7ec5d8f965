use std::borrow::Borrow;

use super::{Payload, ProtocolKind, ProtocolSpec};
use crate::{Error, Result};

/// Estimated fraction of users holding each item.
///
/// Entries are unbiased and therefore may be negative or exceed one.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyEstimate {
    pub freq: Vec<f64>,
    pub n_used: u64,
}

impl FrequencyEstimate {
    /// Post-processing: clip negative entries to zero and rescale to sum to
    /// one. Falls back to the uniform vector when everything clips away.
    pub fn clip_and_renormalize(&self) -> FrequencyEstimate {
        let clipped: Vec<f64> = self.freq.iter().map(|f| f.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        let freq = if total > 0.0 {
            clipped.iter().map(|f| f / total).collect()
        } else {
            vec![1.0 / self.freq.len() as f64; self.freq.len()]
        };
        FrequencyEstimate {
            freq,
            n_used: self.n_used,
        }
    }
}

/// Support counts: `counts[v]` is the number of payloads that support `v`.
pub fn aggregate<I>(spec: &ProtocolSpec, payloads: I) -> Result<Vec<u64>>
where
    I: IntoIterator,
    I::Item: Borrow<Payload>,
{
    spec.validate()?;
    let k = spec.k() as usize;
    let mut counts = vec![0u64; k];
    for payload in payloads {
        let payload = payload.borrow();
        spec.check_payload(payload)?;
        match (spec.kind, payload) {
            (ProtocolKind::Krr, Payload::Krr(v)) => counts[*v as usize] += 1,
            (ProtocolKind::Oue, Payload::Oue(bits)) => {
                for i in bits.iter_ones() {
                    counts[i] += 1;
                }
            }
            _ => {
                for (v, c) in counts.iter_mut().enumerate() {
                    if spec.supports_unchecked(payload, v as u32) {
                        *c += 1;
                    }
                }
            }
        }
    }
    Ok(counts)
}

/// Unbiased frequency estimate from integer support counts over `n` reports.
pub fn estimate(spec: &ProtocolSpec, counts: &[u64], n: u64) -> Result<FrequencyEstimate> {
    let real: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    estimate_real(spec, &real, n)
}

/// Same as [`estimate`] but accepts real-valued (e.g. debiased) counts.
pub fn estimate_real(spec: &ProtocolSpec, counts: &[f64], n: u64) -> Result<FrequencyEstimate> {
    if n == 0 {
        return Err(Error::EmptyInput("cannot estimate from zero reports".into()));
    }
    if counts.len() != spec.k() as usize {
        return Err(Error::Shape(format!(
            "{} counts for a domain of {}",
            counts.len(),
            spec.k()
        )));
    }
    let (ps, qs) = spec.support_probs();
    if ps <= qs {
        return Err(Error::param(format!(
            "degenerate mechanism: p* = {ps} does not exceed q* = {qs}"
        )));
    }
    let n_f = n as f64;
    let freq = counts
        .iter()
        .map(|&c| (c / n_f - qs) / (ps - qs))
        .collect();
    Ok(FrequencyEstimate { freq, n_used: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldp::Bits;
    use crate::rng::SeedTree;
    use bitvec::prelude::*;

    #[test]
    fn empty_input_counts_zero() {
        let spec = ProtocolSpec::olh(16, 1.0).unwrap();
        assert_eq!(aggregate(&spec, Vec::<Payload>::new()).unwrap(), vec![0; 16]);
    }

    #[test]
    fn direct_counts() {
        let spec = ProtocolSpec::krr(2, 1.0).unwrap();
        let reports = [Payload::Krr(0), Payload::Krr(0), Payload::Krr(1)];
        assert_eq!(aggregate(&spec, &reports).unwrap(), vec![2, 1]);

        let spec = ProtocolSpec::oue(4, 1.0).unwrap();
        let all: Bits = bitvec![u64, Lsb0; 1; 4];
        assert_eq!(aggregate(&spec, [Payload::Oue(all)]).unwrap(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn mixed_kinds_rejected() {
        let spec = ProtocolSpec::krr(4, 1.0).unwrap();
        let mixed = [Payload::Krr(1), Payload::Olh { seed: 0, value: 0 }];
        assert!(matches!(aggregate(&spec, &mixed), Err(Error::Shape(_))));
    }

    #[test]
    fn fixed_points_of_the_estimator() {
        for kind in ProtocolKind::ALL {
            let spec = ProtocolSpec::new(kind, 8, 1.0).unwrap();
            let (ps, qs) = spec.support_probs();
            let n = 1_000u64;
            // pure-noise input estimates to exactly zero
            let noise = vec![n as f64 * qs; 8];
            let est = estimate_real(&spec, &noise, n).unwrap();
            assert!(est.freq.iter().all(|&f| f.abs() < 1e-12), "{kind}: {:?}", est.freq);
            let full = vec![n as f64 * ps; 8];
            let est = estimate_real(&spec, &full, n).unwrap();
            assert!(est.freq.iter().all(|&f| (f - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn empty_and_shape_errors() {
        let spec = ProtocolSpec::krr(4, 1.0).unwrap();
        assert!(matches!(estimate(&spec, &[0; 4], 0), Err(Error::EmptyInput(_))));
        assert!(matches!(estimate(&spec, &[0; 3], 10), Err(Error::Shape(_))));
    }

    #[test]
    fn degenerate_epsilon_rejected() {
        // e^eps rounds to exactly 1, so p == q
        let spec = ProtocolSpec::krr(4, 1e-18).unwrap();
        assert!(matches!(estimate(&spec, &[1; 4], 4), Err(Error::Parameter(_))));
    }

    #[test]
    fn krr_point_mass_recovered() {
        let spec = ProtocolSpec::krr(3, 3f64.ln()).unwrap();
        let mut rng = SeedTree::new(2024).stream("perturb", &[]);
        let n = 1_000_000u64;
        let reports: Vec<Payload> = (0..n).map(|_| spec.perturb(0, &mut rng).unwrap()).collect();
        let est = estimate(&spec, &aggregate(&spec, &reports).unwrap(), n).unwrap();
        for (v, truth) in [1.0, 0.0, 0.0].iter().enumerate() {
            assert!((est.freq[v] - truth).abs() <= 0.005, "{:?}", est.freq);
        }
    }

    #[test]
    fn clip_and_renormalize_projects() {
        let est = FrequencyEstimate {
            freq: vec![-0.2, 0.6, 0.6],
            n_used: 10,
        };
        let c = est.clip_and_renormalize();
        assert_eq!(c.freq, vec![0.0, 0.5, 0.5]);
        let all_neg = FrequencyEstimate {
            freq: vec![-1.0, -1.0],
            n_used: 1,
        };
        assert_eq!(all_neg.clip_and_renormalize().freq, vec![0.5, 0.5]);
    }
}
