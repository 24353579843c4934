use faer::Mat;
use serde::{Deserialize, Serialize};

use super::ModelImage;
use crate::algebra::{
    condition_estimate, logsumexp, select_pivot_rows, solve_image_coordinates, ProbVector, MAX_CONDITION,
};
use crate::error::{Error, Result};
use crate::extraction::Extractor;
use crate::TokenId;

/// Largest log-probability disagreement between the reconstruction and
/// observed values before the output is declared outside the image.
pub const OUT_OF_IMAGE_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "tokens")]
pub enum PivotMode {
    /// Column-pivoted QR on the image basis picks well-conditioned rows.
    Qr,
    /// The first `d` tokens other than the reference; re-pivots with QR if
    /// that system is singular.
    Leading,
    Explicit(Vec<TokenId>),
}

#[derive(Clone, Debug)]
pub struct FastExtractOptions {
    pub pivots: PivotMode,
    pub tolerance: f64,
}

impl Default for FastExtractOptions {
    fn default() -> Self {
        Self {
            pivots: PivotMode::Qr,
            tolerance: OUT_OF_IMAGE_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FastExtractOutput {
    pub probs: ProbVector,
    /// Argmax of the unbiased probe, used as the alr reference.
    pub reference: TokenId,
    pub pivots: Vec<TokenId>,
    /// API calls spent, including the probe.
    pub calls: u64,
    /// Largest observed-vs-reconstructed log-probability difference.
    pub discrepancy: f64,
}

fn alr_rows(basis: &Mat<f64>, reference: usize) -> Mat<f64> {
    Mat::from_fn(basis.nrows(), basis.ncols(), |i, j| basis[(i, j)] - basis[(reference, j)])
}

fn leading_rows(v: usize, d: usize, reference: usize) -> Vec<usize> {
    (0..v).filter(|&i| i != reference).take(d).collect()
}

/// Reconstructs the full output for `context` from `d` token probabilities,
/// using the image's basis. Costs one probe plus `ceil(d / (k - 1))` calls.
pub fn fast_extract(
    image: &ModelImage,
    extractor: &Extractor<'_>,
    context: &str,
    opts: &FastExtractOptions,
) -> Result<FastExtractOutput> {
    let caps = extractor.session().capabilities().clone();
    let v = image.vocab_size();
    if caps.v != v {
        return Err(Error::ShapeMismatch(format!("image has v = {v}, API has v = {}", caps.v)));
    }
    let d = image.d_estimate();
    if d == 0 {
        return Err(Error::DegenerateInput("image has rank 0".into()));
    }
    let calls_before = extractor.session().calls();

    let probe = extractor.probe(context)?;
    let (reference, ref_logp) = probe.pairs[0];
    let r = reference as usize;
    let a = alr_rows(image.basis(), r);

    let mut rows = match &opts.pivots {
        PivotMode::Qr => select_pivot_rows(a.as_ref(), d, &[r])?,
        PivotMode::Leading => leading_rows(v, d, r),
        PivotMode::Explicit(tokens) => {
            let rows: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
            if rows.len() != d || rows.iter().any(|&i| i >= v || i == r) {
                return Err(Error::Config(format!(
                    "explicit pivots must be {d} distinct tokens below {v}, excluding the reference {r}"
                )));
            }
            rows
        }
    };
    let head = |rows: &[usize]| Mat::from_fn(d, d, |i, j| a[(rows[i], j)]);
    // Resolve singular pivot sets before spending calls on them.
    let condition = condition_estimate(head(&rows).as_ref())?;
    if !(condition <= MAX_CONDITION) {
        if opts.pivots != PivotMode::Leading {
            return Err(Error::SingularSystem {
                condition,
                limit: MAX_CONDITION,
            });
        }
        tracing::warn!(context, condition, "leading pivots singular, re-pivoting with QR");
        rows = select_pivot_rows(a.as_ref(), d, &[r])?;
    }

    let tokens: Vec<TokenId> = rows.iter().map(|&i| i as TokenId).collect();
    let logps = extractor.stable_logprobs(context, (reference, ref_logp), &tokens)?;
    let rhs: Vec<f64> = tokens
        .iter()
        .map(|t| {
            logps
                .iter()
                .find(|(u, _)| u == t)
                .map(|(_, lp)| lp - ref_logp)
                .ok_or_else(|| Error::MissingTokens(vec![*t]))
        })
        .collect::<Result<_>>()?;
    let coords = solve_image_coordinates(head(&rows).as_ref(), &rhs)?;

    let alr_full: Vec<f64> = (0..v)
        .map(|i| (0..d).map(|j| a[(i, j)] * coords[j]).sum())
        .collect();
    let lse = logsumexp(&alr_full);
    let log_probs: Vec<f64> = alr_full.iter().map(|x| x - lse).collect();

    // Redundant observations: the probe's top-k and the extracted pivots.
    let mut discrepancy = 0f64;
    for &(t, lp) in &probe.pairs {
        discrepancy = discrepancy.max((log_probs[t as usize] - lp).abs());
    }
    for (t, lp) in &logps {
        discrepancy = discrepancy.max((log_probs[*t as usize] - lp).abs());
    }
    if !(discrepancy <= opts.tolerance) {
        return Err(Error::OutOfImage { discrepancy });
    }

    let probs = ProbVector::from_reconstructed(log_probs.into_iter().map(f64::exp).collect(), 1e-6)?;
    Ok(FastExtractOutput {
        probs,
        reference,
        pivots: tokens,
        calls: extractor.session().calls() - calls_before,
        discrepancy,
    })
}
