use statrs::distribution::{Binomial, DiscreteCDF};

use crate::{Error, Result};

/// One-sided lower-tail p-value `P[X <= observed]` for `X ~ Bin(trials, p)`.
pub(crate) fn binomial_lower_tail(trials: u64, p: f64, observed: u64) -> Result<f64> {
    if observed >= trials {
        return Ok(1.0);
    }
    let dist = Binomial::new(p, trials).map_err(|e| Error::param(format!("binomial({trials}, {p}): {e}")))?;
    Ok(dist.cdf(observed))
}
