//! Full-output extraction from top-k logit-bias APIs.

mod cost;
mod extractor;
mod session;
mod unbias;

pub use cost::{estimate_cost, CostEstimate, CostParams, DEFAULT_PRICE_PER_CALL};
pub use extractor::{
    fingerprint, fingerprint_unbiased, ExtractOptions, Extractor, LogprobFreeOutput, PartialOutput,
    StochasticOutput, Strategy, DEFAULT_CONCURRENCY, DEFAULT_EPSILON, FAST_DEFAULT_BETA,
    FINGERPRINT_TOLERANCE, MAX_DISPLACEMENT_RETRIES,
};
pub use session::{canonical_request, ApiSession, BiasSpec, Capabilities, TopKApi, TopKResponse};
pub use unbias::{unbias_fast, unbias_stable, unbias_stable_log, MIN_FAST_DENOMINATOR};
