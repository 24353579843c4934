use crate::error::{Error, Result};
use crate::TokenId;

/// Denominators below this are treated as catastrophic cancellation.
pub const MIN_FAST_DENOMINATOR: f64 = 1e-12;

/// Recovers unbiased probabilities for a set of `k` tokens that were all
/// biased by `beta` and returned as the top-k of the biased distribution:
///
/// `p_i = p'_i / (e^beta (1 - sum p'_j) + sum p'_j)`
///
/// The subtraction `1 - sum p'_j` loses all precision once `beta` grows much
/// beyond the logit spread; that case is reported rather than returned.
pub fn unbias_fast(biased: &[(TokenId, f64)], beta: f64) -> Result<Vec<(TokenId, f64)>> {
    if !(beta >= 0.0) {
        return Err(Error::Domain(format!("beta {beta} must be non-negative")));
    }
    if let Some((t, p)) = biased.iter().find(|(_, p)| !(p.is_finite() && *p > 0.0 && *p <= 1.0)) {
        return Err(Error::Domain(format!("biased probability {p} for token {t} is not in (0, 1]")));
    }
    let sum: f64 = biased.iter().map(|(_, p)| p).sum();
    let scale = beta.exp();
    let denominator = scale * (1.0 - sum) + sum;
    if !denominator.is_finite() || denominator <= MIN_FAST_DENOMINATOR {
        return Err(Error::NumericalInstability(format!(
            "fast unbiasing denominator {denominator:e} (beta {beta}, biased mass {sum})"
        )));
    }
    Ok(biased.iter().map(|&(t, p)| (t, p / denominator)).collect())
}

/// Log-space form of [`unbias_stable`]:
/// `log p_i = log p'_i - beta - log p'_ref + log p_ref`.
pub fn unbias_stable_log(logp_prime_i: f64, logp_prime_ref: f64, logp_ref: f64, beta: f64) -> f64 {
    logp_prime_i - beta - logp_prime_ref + logp_ref
}

/// Recovers one unbiased probability from a response in which token `i`
/// was biased by `beta` and the reference (top) token `v` was not:
///
/// `p_i = exp(log p'_i - beta - log p'_v + log p_v)`
pub fn unbias_stable(p_prime_i: f64, p_prime_v: f64, p_v: f64, beta: f64) -> Result<f64> {
    for (name, p) in [("p'_i", p_prime_i), ("p'_v", p_prime_v), ("p_v", p_v)] {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::Domain(format!("{name} = {p} must be strictly positive")));
        }
    }
    Ok(unbias_stable_log(p_prime_i.ln(), p_prime_v.ln(), p_v.ln(), beta).exp())
}
