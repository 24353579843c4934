use faer::Mat;
use serde::{Deserialize, Serialize};

use super::ModelImage;
use crate::algebra::{numerical_rank, residual_against_basis, ClrVector};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionThresholds {
    /// Best residual must be below this fraction of the output's norm.
    pub relative_residual: f64,
    /// Second-best residual over best residual must exceed this.
    pub margin: f64,
}

impl Default for AttributionThresholds {
    fn default() -> Self {
        Self {
            relative_residual: 1e-6,
            margin: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionEntry {
    pub source_id: String,
    pub residual: f64,
    pub relative_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    /// Sorted by ascending residual.
    pub entries: Vec<AttributionEntry>,
    /// Set only when the best candidate passes both thresholds.
    pub best_match: Option<String>,
    /// Second-best residual divided by the best; infinite with one candidate
    /// or an exact match.
    #[serde(with = "crate::image::audit::lossy_inf")]
    pub margin: f64,
}

/// Scores each candidate image by how far `output` lies from its span.
pub fn attribute(
    candidates: &[&ModelImage],
    output: &ClrVector,
    thresholds: &AttributionThresholds,
) -> Result<AttributionReport> {
    if candidates.is_empty() {
        return Err(Error::DegenerateInput("no candidate images".into()));
    }
    let norm = output.norm();
    if norm == 0.0 {
        return Err(Error::DegenerateInput("the uniform output lies in every image".into()));
    }
    let mut entries = candidates
        .iter()
        .map(|img| {
            if img.vocab_size() != output.len() {
                return Err(Error::ShapeMismatch(format!(
                    "image {} has v = {}, output has v = {}",
                    img.source_id(),
                    img.vocab_size(),
                    output.len()
                )));
            }
            let residual = residual_against_basis(img.basis().as_ref(), output.as_slice());
            Ok(AttributionEntry {
                source_id: img.source_id().to_string(),
                residual,
                relative_residual: residual / norm,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.residual.total_cmp(&b.residual));

    let best = &entries[0];
    let margin = match entries.get(1) {
        Some(second) if best.residual > 0.0 => second.residual / best.residual,
        Some(second) if second.residual == 0.0 => 1.0,
        _ => f64::INFINITY,
    };
    let best_match = (best.relative_residual < thresholds.relative_residual && margin > thresholds.margin)
        .then(|| best.source_id.clone());
    Ok(AttributionReport {
        entries,
        best_match,
        margin,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "rank")]
pub enum ImageChange {
    None,
    LowRank(usize),
    Full,
}

/// Rank increase, out of a possible `d`, below which a change counts as full.
pub fn gap_guard(d: usize) -> usize {
    (d / 16).max(4)
}

/// Compares two images through the rank of their joined bases.
///
/// The result is symmetric in its arguments.
pub fn compare_images(a: &ModelImage, b: &ModelImage) -> Result<ImageChange> {
    if a.vocab_size() != b.vocab_size() {
        return Err(Error::ShapeMismatch(format!(
            "images over different vocabularies ({} vs {})",
            a.vocab_size(),
            b.vocab_size()
        )));
    }
    if a.d_estimate() != b.d_estimate() {
        return Ok(ImageChange::Full);
    }
    let d = a.d_estimate();
    let (ua, ub) = (a.basis(), b.basis());
    let joined = Mat::from_fn(a.vocab_size(), 2 * d, |i, j| if j < d { ua[(i, j)] } else { ub[(i, j - d)] });
    let tol = a.tolerance().max(b.tolerance());
    let (union, _) = numerical_rank(joined.as_ref(), tol)?;
    let extra = union.saturating_sub(d);
    Ok(if extra == 0 {
        ImageChange::None
    } else if union + gap_guard(d) < 2 * d {
        ImageChange::LowRank(extra)
    } else {
        ImageChange::Full
    })
}

/// Whether any shared probe prompt's output moved by more than `tolerance`
/// (max absolute clr difference). `probes` restricts the comparison.
pub fn detect_logit_change(a: &ModelImage, b: &ModelImage, probes: Option<&[String]>, tolerance: f64) -> Result<bool> {
    let shared: Vec<&String> = a
        .prompts()
        .iter()
        .filter(|p| probes.is_none_or(|ps| ps.contains(p)))
        .filter(|p| b.prompts().contains(p))
        .collect();
    if shared.is_empty() {
        return Err(Error::DegenerateInput("images share no probe prompts".into()));
    }
    Ok(shared.iter().any(|p| {
        let (x, y) = (a.column_for_prompt(p).unwrap(), b.column_for_prompt(p).unwrap());
        x.as_slice().iter().zip(y.as_slice()).any(|(u, w)| (u - w).abs() > tolerance)
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    NoUpdate,
    HiddenPromptOrPartialFinetune,
    LoraUpdate,
    FullFinetune,
}

pub fn classify_update(logit_change: bool, image_change: ImageChange) -> Classification {
    match (logit_change, image_change) {
        (false, ImageChange::None) => Classification::NoUpdate,
        (true, ImageChange::None) => Classification::HiddenPromptOrPartialFinetune,
        (_, ImageChange::LowRank(_)) => Classification::LoraUpdate,
        (_, ImageChange::Full) => Classification::FullFinetune,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub logit_change: bool,
    pub image_change: ImageChange,
    pub classification: Classification,
    pub d: usize,
    pub rank_delta: usize,
}

impl UpdateReport {
    pub fn new(logit_change: bool, image_change: ImageChange, d: usize) -> Self {
        let rank_delta = match image_change {
            ImageChange::None => 0,
            ImageChange::LowRank(r) => r,
            ImageChange::Full => d,
        };
        Self {
            logit_change,
            image_change,
            classification: classify_update(logit_change, image_change),
            d,
            rank_delta,
        }
    }
}

/// JSON has no infinity; write it as `null` and read `null` back as infinity.
pub(crate) mod lossy_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
