//! Ground-truth simulated LLM.
//!
//! A mock has the generic output layer of a transformer: a context is mapped
//! to a `d`-dimensional embedding `h`, multiplied by a `v x d` softmax matrix
//! `W`, and passed through softmax. The transformer body is replaced by a
//! seeded hash embedder, which is all the extraction algorithms can observe
//! anyway. Every parameter is regenerated from the spec and seed; nothing is
//! serialized as weights.

mod api;
pub mod rng;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use api::{api_query, MockApi};

use crate::algebra::{softmax, LogitVector, ProbVector};
use crate::error::{Error, Result};
use rng::{derive_seed, fnv1a, SplitMix64};

const TAG_WEIGHTS: u64 = 1;
const TAG_REPLICA: u64 = 2;
const TAG_EMBED: u64 = 3;
pub(crate) const TAG_DRAW: u64 = 4;
const TAG_FAMILY: u64 = 5;
const TAG_EMBED_NOISE: u64 = 6;

/// Scale of the LoRA factors relative to the base softmax matrix.
pub const LORA_SCALE: f64 = 0.1;

fn default_v() -> usize {
    1000
}
fn default_d() -> usize {
    64
}
fn default_n_replicas() -> usize {
    1
}
fn default_replica_noise() -> f64 {
    1e-3
}
fn default_k_max() -> usize {
    5
}
fn default_beta_max() -> f64 {
    100.0
}
fn default_logit_scale() -> f64 {
    8.0
}

/// Hidden parameters of a simulated target. This is also the JSON config
/// schema accepted by the CLI; omitted fields take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockModelSpec {
    #[serde(default = "default_v")]
    pub v: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_replicas")]
    pub n_replicas: usize,
    /// Standard deviation of each replica's logit perturbation.
    #[serde(default = "default_replica_noise")]
    pub replica_noise: f64,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_beta_max")]
    pub beta_max: f64,
    /// Norm of every context embedding; controls the logit spread.
    #[serde(default = "default_logit_scale")]
    pub logit_scale: f64,
}

impl Default for MockModelSpec {
    fn default() -> Self {
        Self {
            v: default_v(),
            d: default_d(),
            seed: 0,
            n_replicas: default_n_replicas(),
            replica_noise: default_replica_noise(),
            k_max: default_k_max(),
            beta_max: default_beta_max(),
            logit_scale: default_logit_scale(),
        }
    }
}

impl MockModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 || self.d >= self.v {
            return Err(Error::Config(format!(
                "need 2 <= d < v, got d={} v={}",
                self.d, self.v
            )));
        }
        if self.v > u32::MAX as usize {
            return Err(Error::Config("vocabulary too large".into()));
        }
        if self.n_replicas == 0 {
            return Err(Error::Config("n_replicas must be at least 1".into()));
        }
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        if !(self.beta_max > 0.0) || !self.beta_max.is_finite() {
            return Err(Error::Config("beta_max must be positive".into()));
        }
        if !(self.replica_noise >= 0.0) || !(self.logit_scale > 0.0) {
            return Err(Error::Config(
                "replica_noise must be >= 0 and logit_scale > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// How contexts are mapped to embeddings.
#[derive(Clone, Debug, PartialEq)]
pub enum Embedding {
    /// Seeded hash embedder; `suffix` is a hidden prompt appended to every
    /// context and `noise` perturbs the embedding itself (a finetune that
    /// leaves the softmax matrix alone).
    Hashed {
        seed: u64,
        scale: f64,
        suffix: Option<String>,
        noise: Option<(u64, f64)>,
    },
    /// Explicit embeddings for a fixed set of contexts (test fixtures).
    Table(BTreeMap<String, Vec<f64>>),
}

/// An immutable simulated model.
#[derive(Clone, Debug)]
pub struct MockModel {
    spec: MockModelSpec,
    model_id: String,
    /// Row-major `v x d`.
    weights: Vec<f64>,
    /// Row-major `v x d` perturbations for replicas `1..n`; replica 0 is the
    /// unperturbed model.
    replica_deltas: Vec<Vec<f64>>,
    embedding: Embedding,
}

fn gaussian_matrix(seed: u64, len: usize, scale: f64) -> Vec<f64> {
    SplitMix64::new(seed).gaussians(len, scale)
}

impl MockModel {
    pub fn new(spec: MockModelSpec) -> Result<Self> {
        spec.validate()?;
        let (v, d) = (spec.v, spec.d);
        let weights = gaussian_matrix(derive_seed(spec.seed, TAG_WEIGHTS), v * d, 1.0 / (d as f64).sqrt());
        let embedding = Embedding::Hashed {
            seed: derive_seed(spec.seed, TAG_EMBED),
            scale: spec.logit_scale,
            suffix: None,
            noise: None,
        };
        let model_id = format!("mock-v{v}-d{d}-s{}", spec.seed);
        Self::assemble(spec, model_id, weights, embedding)
    }

    /// Builds a model from explicit weights (row-major `v x d`).
    pub fn with_weights(spec: MockModelSpec, weights: Vec<f64>, embedding: Embedding) -> Result<Self> {
        spec.validate()?;
        if weights.len() != spec.v * spec.d {
            return Err(Error::ShapeMismatch(format!(
                "weights have {} entries, expected {}",
                weights.len(),
                spec.v * spec.d
            )));
        }
        let model_id = format!("mock-fixture-v{}-d{}", spec.v, spec.d);
        Self::assemble(spec, model_id, weights, embedding)
    }

    fn assemble(spec: MockModelSpec, model_id: String, weights: Vec<f64>, embedding: Embedding) -> Result<Self> {
        let (v, d) = (spec.v, spec.d);
        // A weight perturbation of std `noise / scale` moves each logit by
        // roughly `noise` for an embedding of norm `scale`.
        let delta_scale = spec.replica_noise / spec.logit_scale;
        let replica_deltas = if spec.replica_noise > 0.0 {
            (1..spec.n_replicas)
                .map(|r| gaussian_matrix(derive_seed(spec.seed, TAG_REPLICA ^ ((r as u64) << 8)), v * d, delta_scale))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            spec,
            model_id,
            weights,
            replica_deltas,
            embedding,
        })
    }

    pub fn spec(&self) -> &MockModelSpec {
        &self.spec
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn embedding(&self, context: &str) -> Result<Vec<f64>> {
        let d = self.spec.d;
        match &self.embedding {
            Embedding::Hashed {
                seed,
                scale,
                suffix,
                noise,
            } => {
                let full;
                let text = match suffix {
                    Some(s) => {
                        full = format!("{context}{s}");
                        full.as_str()
                    }
                    None => context,
                };
                let key = fnv1a(text.as_bytes());
                let mut h = SplitMix64::new(derive_seed(*seed, key)).gaussians(d, 1.0);
                let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
                h.iter_mut().for_each(|x| *x *= scale / norm);
                if let Some((noise_seed, sigma)) = noise {
                    let mut g = SplitMix64::new(derive_seed(*noise_seed, key));
                    h.iter_mut().for_each(|x| *x += sigma * scale * g.gaussian());
                }
                Ok(h)
            }
            Embedding::Table(table) => table
                .get(context)
                .cloned()
                .filter(|h| h.len() == d)
                .ok_or_else(|| Error::Domain(format!("no embedding for context {context:?}"))),
        }
    }

    /// `(W + dW_replica) h(context)`.
    pub fn full_logits(&self, context: &str, replica: usize) -> Result<LogitVector> {
        LogitVector::new(self.raw_logits(context, replica)?)
    }

    pub(crate) fn raw_logits(&self, context: &str, replica: usize) -> Result<Vec<f64>> {
        if replica >= self.spec.n_replicas {
            return Err(Error::UnknownReplica {
                replica,
                n_replicas: self.spec.n_replicas,
            });
        }
        let h = self.embedding(context)?;
        let d = self.spec.d;
        let delta = replica.checked_sub(1).and_then(|r| self.replica_deltas.get(r));
        let logits = (0..self.spec.v)
            .map(|i| {
                let row = &self.weights[i * d..(i + 1) * d];
                let mut acc: f64 = row.iter().zip(&h).map(|(w, x)| w * x).sum();
                if let Some(delta) = delta {
                    acc += delta[i * d..(i + 1) * d].iter().zip(&h).map(|(w, x)| w * x).sum::<f64>();
                }
                acc
            })
            .collect();
        Ok(logits)
    }

    /// Ground-truth next-token distribution.
    pub fn oracle_distribution(&self, context: &str, replica: usize) -> Result<ProbVector> {
        Ok(softmax(&self.full_logits(context, replica)?))
    }

    /// Capabilities this model advertises when served.
    pub fn capabilities(&self) -> crate::Capabilities {
        crate::Capabilities {
            v: self.spec.v,
            k_max: self.spec.k_max,
            beta_max: self.spec.beta_max,
            stochastic: self.spec.n_replicas > 1,
        }
    }
}

/// Kinds of model update, one per row of the update-interpretation table.
#[derive(Clone, Debug, PartialEq)]
pub enum UpdateKind {
    Clone,
    /// A hidden prompt suffix appended to every context.
    HiddenPrompt(String),
    /// Noise of the given relative size on the embedding only.
    PartialFinetune(f64),
    /// Additive rank-`r` change `A B` to the softmax matrix.
    Lora(usize),
    /// Gaussian noise of the given std on every softmax-matrix entry
    /// (relative to the base entry scale).
    FullFinetune(f64),
}

impl UpdateKind {
    fn label(&self) -> String {
        match self {
            UpdateKind::Clone => "clone".into(),
            UpdateKind::HiddenPrompt(_) => "hidden_prompt".into(),
            UpdateKind::PartialFinetune(s) => format!("partial_finetune({s})"),
            UpdateKind::Lora(r) => format!("lora({r})"),
            UpdateKind::FullFinetune(s) => format!("full_finetune({s})"),
        }
    }
}

/// Derives one model per `kind` from the model described by `spec`. Member
/// `i` uses randomness derived from `(spec.seed, i)`, so repeated kinds give
/// distinct siblings.
pub fn make_checkpoint_family(spec: &MockModelSpec, kinds: &[UpdateKind]) -> Result<Vec<MockModel>> {
    let base = MockModel::new(spec.clone())?;
    let (v, d) = (spec.v, spec.d);
    kinds
        .iter()
        .enumerate()
        .map(|(i, kind)| {
            let mut m = base.clone();
            let member_seed = derive_seed(spec.seed, TAG_FAMILY ^ ((i as u64 + 1) << 16));
            match kind {
                UpdateKind::Clone => {}
                UpdateKind::HiddenPrompt(s) => {
                    if let Embedding::Hashed { suffix, .. } = &mut m.embedding {
                        *suffix = Some(s.clone());
                    }
                }
                UpdateKind::PartialFinetune(sigma) => {
                    if let Embedding::Hashed { noise, .. } = &mut m.embedding {
                        *noise = Some((derive_seed(member_seed, TAG_EMBED_NOISE), *sigma / (d as f64).sqrt()));
                    }
                }
                UpdateKind::Lora(r) => {
                    if *r == 0 || *r > d {
                        return Err(Error::Config(format!("lora rank {r} must lie in 1..={d}")));
                    }
                    let mut g = SplitMix64::new(member_seed);
                    let a = g.gaussians(v * r, LORA_SCALE / (*r as f64).sqrt());
                    let b = g.gaussians(r * d, 1.0 / (d as f64).sqrt());
                    for i in 0..v {
                        for j in 0..d {
                            m.weights[i * d + j] += (0..*r).map(|t| a[i * r + t] * b[t * d + j]).sum::<f64>();
                        }
                    }
                }
                UpdateKind::FullFinetune(sigma) => {
                    let noise = gaussian_matrix(member_seed, v * d, *sigma / (d as f64).sqrt());
                    m.weights.iter_mut().zip(noise).for_each(|(w, n)| *w += n);
                }
            }
            m.model_id = format!("{}-{}-{}", base.model_id, i, kind.label());
            Ok(m)
        })
        .collect()
}
