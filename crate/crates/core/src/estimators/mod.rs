//! Policy-value estimators and the weightings and outcome models they use.
//!
//! With target-policy probabilities `π_t(X_i)`:
//!
//! ```text
//! weighted:       τ̂ = (1/n) Σ_i W_i Y_i
//! direct:         τ̂ = (1/n) Σ_i Σ_t π_t(X_i) ρ̂_t(X_i)
//! doubly robust:  τ̂ = direct + (1/n) Σ_i W_i (Y_i − ρ̂_{T_i}(X_i))
//! ```

mod logit;
mod regression;
mod weighting;

use faer::Mat;

use crate::balance::WeightVector;
use crate::error::{Error, Result};
use crate::points::Points;
use crate::posterior::{ContextMoments, DEFAULT_GRID_SIZE};
use crate::scenario::ScenarioParams;

pub use logit::MultinomialLogit;
pub use regression::{fit_dirx, fit_dirz, DirectX, DirectZ, DirzOptions, RidgeChoice};
pub use weighting::{ips_weights, oracle_latent_weights, EtaSource, OVERLAP_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSummary {
    pub norm2: f64,
    pub min: f64,
    pub max: f64,
    pub sum: f64,
}

impl From<&WeightVector> for WeightSummary {
    fn from(w: &WeightVector) -> Self {
        Self {
            norm2: w.norm2(),
            min: w.min(),
            max: w.max(),
            sum: w.sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub tau_hat: f64,
    pub method: String,
    pub weights: Option<WeightSummary>,
    pub gamma: Option<f64>,
    pub draws: Option<usize>,
    pub bandwidth: Option<f64>,
}

impl EstimateReport {
    fn new(tau_hat: f64, method: impl Into<String>) -> Result<Self> {
        if !tau_hat.is_finite() {
            return Err(Error::Numerical(format!("estimate is {tau_hat}")));
        }
        Ok(Self {
            tau_hat,
            method: method.into(),
            weights: None,
            gamma: None,
            draws: None,
            bandwidth: None,
        })
    }

    fn with_weights(mut self, w: &WeightVector) -> Self {
        self.weights = Some(w.into());
        self.gamma = w.gamma;
        self
    }
}

/// Per-treatment outcome regression `ρ̂_t(x)`.
pub trait OutcomeModel {
    /// `n × m` matrix with entry `(i, t) = ρ̂_t(x_i)`.
    fn predict(&self, x: &Points) -> Result<Mat<f64>>;

    fn name(&self) -> &str;
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

/// `(1/n) Σ W_i Y_i`.
pub fn weighted_estimate(w: &WeightVector, y: &[f64]) -> Result<EstimateReport> {
    check_len("outcomes", w.len(), y.len())?;
    if y.is_empty() {
        return Err(Error::config("n", "no units"));
    }
    let tau = w.w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / y.len() as f64;
    Ok(EstimateReport::new(tau, w.method.clone())?.with_weights(w))
}

/// `Σ W_i Y_i / Σ W_i`.
pub fn self_normalized_estimate(w: &WeightVector, y: &[f64]) -> Result<EstimateReport> {
    check_len("outcomes", w.len(), y.len())?;
    let total = w.sum();
    if total == 0.0 {
        return Err(Error::Numerical("weights sum to zero".into()));
    }
    let tau = w.w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / total;
    Ok(EstimateReport::new(tau, format!("{}-sn", w.method))?.with_weights(w))
}

fn policy_average(rho: &Mat<f64>, policy: &Mat<f64>) -> Result<Vec<f64>> {
    check_len("policy rows", rho.nrows(), policy.nrows())?;
    check_len("policy treatments", rho.ncols(), policy.ncols())?;
    Ok((0..rho.nrows())
        .map(|i| (0..rho.ncols()).map(|t| policy[(i, t)] * rho[(i, t)]).sum())
        .collect())
}

/// `(1/n) Σ_i Σ_t π_t(X_i) ρ̂_t(X_i)`.
pub fn direct_estimate(
    model: &dyn OutcomeModel,
    policy: &Mat<f64>,
    x: &Points,
) -> Result<EstimateReport> {
    let terms = policy_average(&model.predict(x)?, policy)?;
    if terms.is_empty() {
        return Err(Error::config("n", "no units"));
    }
    EstimateReport::new(terms.iter().sum::<f64>() / terms.len() as f64, model.name())
}

/// Direct estimate plus weighted residuals.
pub fn doubly_robust_estimate(
    w: &WeightVector,
    model: &dyn OutcomeModel,
    policy: &Mat<f64>,
    x: &Points,
    t: &[usize],
    y: &[f64],
) -> Result<EstimateReport> {
    let n = x.len();
    check_len("weights", n, w.len())?;
    check_len("treatments", n, t.len())?;
    check_len("outcomes", n, y.len())?;
    if n == 0 {
        return Err(Error::config("n", "no units"));
    }
    let rho = model.predict(x)?;
    let direct = policy_average(&rho, policy)?;
    let tau = (0..n)
        .map(|i| direct[i] + w.w[i] * (y[i] - rho[(i, t[i])]))
        .sum::<f64>()
        / n as f64;
    Ok(EstimateReport::new(tau, format!("dr-{}-{}", w.method, model.name()))?.with_weights(w))
}

/// The true `ρ_t(x) = E[μ_t(Z) | X = x]` from the quadrature oracle.
#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub params: ScenarioParams,
}

impl OutcomeModel for OracleOutcome {
    fn predict(&self, x: &Points) -> Result<Mat<f64>> {
        let m = self.params.n_treatments();
        let mut out = Mat::zeros(x.len(), m);
        for (i, row) in x.rows().enumerate() {
            let moments = ContextMoments::compute(row, &self.params, DEFAULT_GRID_SIZE)?;
            for t in 0..m {
                out[(i, t)] = moments.rho(t);
            }
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        "oracle-rho"
    }
}

/// `ρ̂_t ≡ c_t`.
#[derive(Debug, Clone)]
pub struct ConstantOutcome {
    pub values: Vec<f64>,
}

impl OutcomeModel for ConstantOutcome {
    fn predict(&self, x: &Points) -> Result<Mat<f64>> {
        Ok(Mat::from_fn(x.len(), self.values.len(), |_, t| {
            self.values[t]
        }))
    }

    fn name(&self) -> &str {
        "constant"
    }
}

/// Precomputed predictions for a fixed set of points.
#[derive(Debug, Clone)]
pub struct TabulatedOutcome {
    pub values: Mat<f64>,
}

impl OutcomeModel for TabulatedOutcome {
    fn predict(&self, x: &Points) -> Result<Mat<f64>> {
        check_len("tabulated predictions", self.values.nrows(), x.len())?;
        Ok(self.values.clone())
    }

    fn name(&self) -> &str {
        "tabulated"
    }
}
