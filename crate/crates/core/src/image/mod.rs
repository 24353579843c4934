//! The model image: the span of a model's clr-transformed outputs.
//!
//! An image is collected by extracting outputs for unique prompts until the
//! rank of the output matrix stops growing. Its rank is the embedding size;
//! its span lets a new output be reconstructed from `O(d)` token
//! probabilities, identifies which model produced an output, and tells
//! apart kinds of model update.

mod audit;
mod collect;
mod container;
mod fast;

use std::sync::OnceLock;

use faer::Mat;
use serde::{Deserialize, Serialize};

pub use audit::{
    attribute, classify_update, compare_images, detect_logit_change, gap_guard, AttributionEntry,
    AttributionReport, AttributionThresholds, Classification, ImageChange, UpdateReport,
};
pub use collect::{collect_image, collect_outputs, unique_prompt, CollectOptions};
pub use container::{read_image, write_image, ContainerHeader, MAGIC};
pub use fast::{fast_extract, FastExtractOptions, FastExtractOutput, PivotMode, OUT_OF_IMAGE_TOLERANCE};

use crate::algebra::{column_basis_with_rank, numerical_rank, ClrVector, SingularSpectrum, CLR_SUM_TOLERANCE};
use crate::error::{Error, Result};

/// Drop of at least this factor after the rank index counts as a plateau.
pub const PLATEAU_DROP: f64 = 1e-3;

/// A `v x m` matrix of clr-space outputs with provenance.
#[derive(Debug)]
pub struct ModelImage {
    matrix: Mat<f64>,
    prompts: Vec<String>,
    d_estimate: usize,
    tolerance: f64,
    source_id: String,
    created_at: String,
    spectrum: SingularSpectrum,
    basis: OnceLock<Mat<f64>>,
}

impl Clone for ModelImage {
    fn clone(&self) -> Self {
        Self {
            matrix: self.matrix.clone(),
            prompts: self.prompts.clone(),
            d_estimate: self.d_estimate,
            tolerance: self.tolerance,
            source_id: self.source_id.clone(),
            created_at: self.created_at.clone(),
            spectrum: self.spectrum.clone(),
            basis: OnceLock::new(),
        }
    }
}

impl ModelImage {
    /// Builds an image from clr columns; the rank estimate and spectrum are
    /// computed here at `tolerance`.
    pub fn new(
        matrix: Mat<f64>,
        prompts: Vec<String>,
        tolerance: f64,
        source_id: impl Into<String>,
        created_at: impl Into<String>,
    ) -> Result<Self> {
        if prompts.len() != matrix.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "{} prompts for {} columns",
                prompts.len(),
                matrix.ncols()
            )));
        }
        for j in 0..matrix.ncols() {
            let sum: f64 = (0..matrix.nrows()).map(|i| matrix[(i, j)]).sum();
            if sum.abs() > CLR_SUM_TOLERANCE {
                return Err(Error::Domain(format!("column {j} sums to {sum}, not 0")));
            }
        }
        let (d_estimate, spectrum) = numerical_rank(matrix.as_ref(), tolerance)?;
        Ok(Self {
            matrix,
            prompts,
            d_estimate,
            tolerance,
            source_id: source_id.into(),
            created_at: created_at.into(),
            spectrum,
            basis: OnceLock::new(),
        })
    }

    pub fn matrix(&self) -> &Mat<f64> {
        &self.matrix
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn columns(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn d_estimate(&self) -> usize {
        self.d_estimate
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn created_at(&self) -> &str {
        &self.created_at
    }

    pub fn spectrum(&self) -> &SingularSpectrum {
        &self.spectrum
    }

    pub fn column(&self, j: usize) -> ClrVector {
        ClrVector::new((0..self.matrix.nrows()).map(|i| self.matrix[(i, j)]).collect())
            .expect("columns validated at construction")
    }

    pub fn column_for_prompt(&self, prompt: &str) -> Option<ClrVector> {
        self.prompts.iter().position(|p| p == prompt).map(|j| self.column(j))
    }

    /// Orthonormal `v x d_estimate` basis of the image.
    pub fn basis(&self) -> &Mat<f64> {
        self.basis.get_or_init(|| {
            column_basis_with_rank(self.matrix.as_ref(), self.tolerance, Some(self.d_estimate))
                .expect("image matrix is non-empty and finite")
        })
    }

    /// Embedding-size estimate of this image's matrix.
    pub fn embedding_size(&self) -> EmbeddingEstimate {
        EmbeddingEstimate::from_spectrum(self.spectrum.clone(), self.tolerance)
    }

    /// Per-column leverage scores in the rank-`d` column space. Columns that
    /// add a direction nobody else spans score 1; a corrupted output shows
    /// up this way.
    pub fn column_leverage(&self) -> Result<Vec<f64>> {
        let svd = self
            .matrix
            .thin_svd()
            .map_err(|e| Error::NumericalInstability(format!("SVD failed: {e:?}")))?;
        let s = svd.S().column_vector();
        let mut order: Vec<usize> = (0..s.nrows()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let v = svd.V();
        Ok((0..self.matrix.ncols())
            .map(|j| order[..self.d_estimate].iter().map(|&i| v[(j, i)].powi(2)).sum())
            .collect())
    }
}

/// Result of rank-based embedding-size discovery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEstimate {
    /// Numerical rank at the requested tolerance.
    pub d: usize,
    /// Index preceding the largest log-gap in the spectrum (cross-check).
    pub log_gap_index: usize,
    /// False when the spectrum shows no drop of at least three orders of
    /// magnitude after index `d`: more outputs are needed.
    pub plateau: bool,
    pub tolerance: f64,
    pub spectrum: SingularSpectrum,
}

impl EmbeddingEstimate {
    fn from_spectrum(spectrum: SingularSpectrum, tolerance: f64) -> Self {
        let d = spectrum.rank(tolerance);
        let plateau = match spectrum.values.get(d) {
            Some(next) if d > 0 => *next <= spectrum.values[d - 1] * PLATEAU_DROP,
            _ => false,
        };
        if !plateau {
            tracing::warn!(d, columns = spectrum.cols, "no singular-value plateau: collect more outputs");
        }
        Self {
            d,
            log_gap_index: spectrum.largest_log_gap_index(),
            plateau,
            tolerance,
            spectrum,
        }
    }
}

/// Embedding size of a raw clr output matrix (`v x m`).
pub fn estimate_embedding_size(matrix: faer::MatRef<'_, f64>, tolerance: f64) -> Result<EmbeddingEstimate> {
    let (_, spectrum) = numerical_rank(matrix, tolerance)?;
    Ok(EmbeddingEstimate::from_spectrum(spectrum, tolerance))
}
