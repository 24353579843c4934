use faer::Mat;
use rayon::prelude::*;

use super::ModelImage;
use crate::algebra::{clr, numerical_rank, ClrVector, DEFAULT_RANK_TOLERANCE};
use crate::error::{Error, Result};
use crate::extraction::{Extractor, Strategy};

/// Default prompt for column `i`: a distinct single-token context.
pub fn unique_prompt(i: usize) -> String {
    format!("tok{i}")
}

#[derive(Clone, Debug)]
pub struct CollectOptions {
    pub strategy: Strategy,
    /// Stop once this many consecutive outputs failed to raise the rank.
    pub margin: usize,
    /// Columns extracted between rank checks (at most).
    pub batch: usize,
    /// Outputs collected after the plateau is found.
    pub extra_columns: usize,
    pub tolerance: f64,
    /// Explicit prompts; `None` uses [`unique_prompt`] for `0..v`.
    pub prompts: Option<Vec<String>>,
    pub max_columns: Option<usize>,
    pub source_id: String,
    /// Fixed timestamp for reproducible files; `None` stamps the current time.
    pub created_at: Option<String>,
}

impl Default for CollectOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::Stable,
            margin: 100,
            batch: 64,
            extra_columns: 0,
            tolerance: DEFAULT_RANK_TOLERANCE,
            prompts: None,
            max_columns: None,
            source_id: "unknown".into(),
            created_at: None,
        }
    }
}

/// Extracts the clr output for each prompt, in parallel on the extractor's pool.
pub fn collect_outputs(extractor: &Extractor<'_>, strategy: Strategy, prompts: &[String]) -> Result<Vec<ClrVector>> {
    extractor.install(|| {
        prompts
            .par_iter()
            .map(|p| clr(&extractor.extract(strategy, p)?))
            .collect()
    })
}

fn columns_to_mat(cols: &[ClrVector], v: usize) -> Mat<f64> {
    Mat::from_fn(v, cols.len(), |i, j| cols[j].as_slice()[i])
}

fn prefix_rank(cols: &[ClrVector], v: usize, tol: f64) -> Result<usize> {
    Ok(numerical_rank(columns_to_mat(cols, v).as_ref(), tol)?.0)
}

/// Smallest `t` in `(lo, hi]` with `t - rank(L_t) >= margin`. The deficit
/// `t - rank` never decreases as columns are added, so bisection applies.
fn first_plateau(cols: &[ClrVector], v: usize, lo: usize, hi: usize, margin: usize, tol: f64) -> Result<usize> {
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if mid - prefix_rank(&cols[..mid], v, tol)? >= margin {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Collects outputs until `margin` consecutive ones leave the rank unchanged,
/// then returns the image truncated at that point (plus `extra_columns`).
pub fn collect_image(extractor: &Extractor<'_>, opts: &CollectOptions) -> Result<ModelImage> {
    if opts.margin == 0 || opts.batch == 0 {
        return Err(Error::Config("margin and batch must be positive".into()));
    }
    let v = extractor.session().capabilities().v;
    let available = opts.prompts.as_ref().map_or(v, Vec::len);
    let limit = opts.max_columns.map_or(available, |m| m.min(available));
    let prompt = |i: usize| match &opts.prompts {
        Some(p) => p[i].clone(),
        None => unique_prompt(i),
    };

    let mut prompts: Vec<String> = Vec::new();
    let mut cols: Vec<ClrVector> = Vec::new();
    let grow = |prompts: &mut Vec<String>, cols: &mut Vec<ClrVector>, to: usize| -> Result<()> {
        let new: Vec<String> = (prompts.len()..to).map(prompt).collect();
        cols.extend(collect_outputs(extractor, opts.strategy, &new)?);
        prompts.extend(new);
        Ok(())
    };

    let mut checked = 0;
    let mut target = opts.batch.min(limit);
    let plateau = loop {
        grow(&mut prompts, &mut cols, target)?;
        let rank = prefix_rank(&cols, v, opts.tolerance)?;
        tracing::info!(columns = target, rank, calls = extractor.session().calls(), "rank check");
        if target - rank >= opts.margin {
            break first_plateau(&cols, v, checked, target, opts.margin, opts.tolerance)?;
        }
        if target >= limit {
            return Err(Error::VocabExhausted { used: target });
        }
        checked = target;
        target = (target + opts.batch).min(rank + opts.margin).max(target + 1).min(limit);
    };
    cols.truncate(plateau);
    prompts.truncate(plateau);

    if opts.extra_columns > 0 {
        let want = plateau + opts.extra_columns;
        if want > limit {
            return Err(Error::VocabExhausted { used: limit });
        }
        grow(&mut prompts, &mut cols, want)?;
    }

    let created_at = opts
        .created_at
        .clone()
        .unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    ModelImage::new(
        columns_to_mat(&cols, v),
        prompts,
        opts.tolerance,
        opts.source_id.clone(),
        created_at,
    )
}
