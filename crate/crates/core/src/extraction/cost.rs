use serde::{Deserialize, Serialize};

/// USD per API call implied by the reference cost table: every printed
/// image price equals `d * calls_per_output * 5e-6` up to rounding.
pub const DEFAULT_PRICE_PER_CALL: f64 = 5e-6;

/// Parameters of the cost model. Defaults describe a large production API
/// (`v = 100000, d = 4096, k = 5, beta_max = 100, epsilon = 1e-6, n = 4`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub v: f64,
    pub k: f64,
    pub d: f64,
    pub n: f64,
    pub beta_max: f64,
    pub epsilon: f64,
    pub price_per_call: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            v: 100_000.0,
            k: 5.0,
            d: 4096.0,
            n: 4.0,
            beta_max: 100.0,
            epsilon: 1e-6,
            price_per_call: DEFAULT_PRICE_PER_CALL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub strategy: String,
    pub complexity: String,
    pub calls_per_output: f64,
    /// Price of collecting `d` outputs; `None` for the image-assisted row,
    /// which presupposes the image.
    pub image_price_usd: Option<f64>,
}

/// API calls per output for each extraction strategy, and the price of
/// collecting a `d`-column image with it. The logprob-free row uses a
/// base-10 logarithm.
pub fn estimate_cost(p: &CostParams) -> Vec<CostEstimate> {
    let row = |strategy: &str, complexity: &str, calls: f64, priced: bool| CostEstimate {
        strategy: strategy.into(),
        complexity: complexity.into(),
        calls_per_output: calls,
        image_price_usd: priced.then(|| p.d * calls * p.price_per_call),
    };
    vec![
        row(
            "logprob-free",
            "v log(beta_max/epsilon)",
            p.v * (p.beta_max / p.epsilon).log10(),
            true,
        ),
        row("fast", "v/k", p.v / p.k, true),
        row("stable", "v/(k-1)", p.v / (p.k - 1.0), true),
        row("stochastic", "n v/(k-2)", p.n * p.v / (p.k - 2.0), true),
        row("image", "O(d)", (p.d / (p.k - 1.0)).ceil() + 1.0, false),
    ]
}
