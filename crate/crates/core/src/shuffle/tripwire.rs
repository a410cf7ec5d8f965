use std::collections::HashSet;
use std::sync::Arc;

use rand::Rng;

use super::ShufflerNode;
use crate::ldp::{ClientReport, ProtocolSpec};
use crate::stats::binomial_lower_tail;
use crate::{Error, Result};

/// Client id used by the verifier for its dummies.
pub const VERIFIER_CLIENT: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripwireConfig {
    /// Dummies injected per epoch.
    pub n_dummies: u32,
    pub epochs: u32,
    /// Loss rate of the shuffler-to-server path.
    pub link_plr: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripwireVerdict {
    Pass,
    DropDetected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripwireOutcome {
    pub verdict: TripwireVerdict,
    pub sent: u64,
    pub arrived: u64,
    /// Lower-tail probability of seeing this few arrivals under link loss
    /// alone.
    pub p_value: f64,
}

/// Injects dummies alongside `real` traffic for several epochs and tests
/// whether fewer came back than link loss explains.
///
/// Dummies are honest perturbations of uniformly drawn items, so they look
/// like any other report to the shuffler.
pub fn tripwire_verify<R: Rng + ?Sized>(
    shuffler: &mut ShufflerNode,
    real: &[Arc<ClientReport>],
    spec: &ProtocolSpec,
    cfg: &TripwireConfig,
    rng: &mut R,
) -> Result<TripwireOutcome> {
    if cfg.n_dummies == 0 {
        return Err(Error::param("trip wires need at least one dummy"));
    }
    if cfg.epochs == 0 {
        return Err(Error::param("trip wires need at least one epoch"));
    }
    if !(0.0..1.0).contains(&cfg.link_plr) || !(0.0 < cfg.alpha && cfg.alpha < 1.0) {
        return Err(Error::param("link PLR must lie in [0, 1) and alpha in (0, 1)"));
    }
    let mut registry = HashSet::new();
    let mut arrived = 0u64;
    for epoch in 0..cfg.epochs as u64 {
        let mut batch: Vec<Arc<ClientReport>> = real.to_vec();
        for i in 0..cfg.n_dummies as u64 {
            let id = u64::MAX - (epoch * cfg.n_dummies as u64 + i);
            let item = rng.random_range(0..spec.k());
            let payload = spec.perturb(item, rng)?;
            registry.insert(id);
            batch.push(Arc::new(ClientReport::new(VERIFIER_CLIENT, id, payload, 0)));
        }
        // interleave dummies with real traffic
        for i in (1..batch.len()).rev() {
            batch.swap(i, rng.random_range(0..=i));
        }
        for r in shuffler.process(batch, rng)? {
            let lost = rng.random::<f64>() < cfg.link_plr;
            if !lost && registry.contains(&r.report_id) {
                arrived += 1;
            }
        }
    }
    let sent = registry.len() as u64;
    let p_value = binomial_lower_tail(sent, 1.0 - cfg.link_plr, arrived)?;
    let verdict = if p_value < cfg.alpha {
        TripwireVerdict::DropDetected
    } else {
        TripwireVerdict::Pass
    };
    Ok(TripwireOutcome {
        verdict,
        sent,
        arrived,
        p_value,
    })
}
