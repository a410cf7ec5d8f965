use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;

use super::{AdversaryConfig, Strategy};
use crate::ldp::{ClientReport, ProtocolSpec};
use crate::{Error, Result, RngStream};

/// Replaces the reports of `round(beta * n)` seeded-sampled clients with
/// attack reports. Returns the modified stream and the corrupted client ids.
///
/// RPA clients send a uniform draw from the output space; RIA clients pick a
/// target uniformly and send an honest perturbation of it.
pub fn corrupt_users(
    config: &AdversaryConfig,
    reports: &[ClientReport],
    spec: &ProtocolSpec,
    rng: &mut RngStream,
) -> Result<(Vec<ClientReport>, BTreeSet<u64>)> {
    config.validate(spec)?;
    let clients: Vec<u64> = reports
        .iter()
        .map(|r| r.client_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = clients.len();
    let m = (config.malicious_fraction_beta * n as f64).round() as usize;
    if n > 0 && m >= n {
        return Err(Error::config(format!("{m} corrupted users out of {n} leaves nobody honest")));
    }
    let mut picked: Vec<usize> = sample(rng, n, m).into_vec();
    picked.sort_unstable();
    let corrupted: BTreeSet<u64> = picked.into_iter().map(|i| clients[i]).collect();

    let targets: Vec<u32> = config.targets.items.iter().copied().collect();
    let mut out = reports.to_vec();
    for r in out.iter_mut().filter(|r| corrupted.contains(&r.client_id)) {
        r.payload = match config.strategy {
            Strategy::Rpa => spec.random_output(rng),
            Strategy::Ria => {
                let t = targets[rng.random_range(0..targets.len())];
                spec.perturb(t, rng)?
            }
        };
    }
    Ok((out, corrupted))
}
