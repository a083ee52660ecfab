use faer::Mat;

use super::logit::MultinomialLogit;
use crate::balance::WeightVector;
use crate::error::{Error, Result};
use crate::points::Points;
use crate::posterior::{eta_all, ContextMoments, DEFAULT_GRID_SIZE};
use crate::scenario::ScenarioParams;

/// Estimated propensities below this value are reported as overlap problems.
pub const OVERLAP_FLOOR: f64 = 1e-6;

/// Where `η_t(x) = P(T = t | X = x)` comes from.
#[derive(Debug, Clone, Copy)]
pub enum EtaSource<'a> {
    /// Quadrature under the true latent model.
    Oracle(&'a ScenarioParams),
    /// Multinomial logit of `T` on `X` with the given L2 penalty.
    FittedLogit { penalty: f64 },
}

fn check_inputs(x: &Points, t: &[usize], policy: &Mat<f64>) -> Result<()> {
    for (context, actual) in [("treatments", t.len()), ("policy rows", policy.nrows())] {
        if actual != x.len() {
            return Err(Error::Dimension {
                context,
                expected: x.len(),
                actual,
            });
        }
    }
    if let Some(i) = t.iter().position(|&k| k >= policy.ncols()) {
        return Err(Error::config("treatment", format!("unit {i} out of range")));
    }
    Ok(())
}

/// `W_i = π_{T_i}(X_i) / η̂_{T_i}(X_i)`. Tiny propensities are kept as they
/// are and reported in the warnings.
pub fn ips_weights(
    x: &Points,
    t: &[usize],
    policy: &Mat<f64>,
    source: EtaSource<'_>,
) -> Result<WeightVector> {
    check_inputs(x, t, policy)?;
    let eta: Vec<f64> = match source {
        EtaSource::Oracle(params) => x
            .rows()
            .zip(t)
            .map(|(row, &k)| Ok(eta_all(row, params)?[k]))
            .collect::<Result<_>>()?,
        EtaSource::FittedLogit { penalty } => {
            let model = MultinomialLogit::fit(x, t, policy.ncols(), penalty)?;
            x.rows()
                .zip(t)
                .map(|(row, &k)| model.probs(row)[k])
                .collect()
        }
    };
    let w: Vec<f64> = (0..x.len()).map(|i| policy[(i, t[i])] / eta[i]).collect();
    let mut out = WeightVector::new(w, "ips");
    let poor: Vec<usize> = (0..x.len()).filter(|&i| eta[i] < OVERLAP_FLOOR).collect();
    if let Some(first) = poor.first() {
        out.warnings.push(format!(
            "{} units have estimated propensity below {OVERLAP_FLOOR:e} (first: unit {first}, {:.3e})",
            poor.len(),
            eta[*first]
        ));
    }
    Ok(out)
}

/// Oracle weights that make the weighted estimator unbiased given the
/// observables:
/// `W_i = π_{T_i}(X_i) ρ_{T_i}(X_i) / (η_{T_i}(X_i) ν_{T_i}(X_i, T_i))`.
pub fn oracle_latent_weights(
    x: &Points,
    t: &[usize],
    policy: &Mat<f64>,
    params: &ScenarioParams,
) -> Result<WeightVector> {
    check_inputs(x, t, policy)?;
    let mut w = Vec::with_capacity(x.len());
    for (i, (row, &k)) in x.rows().zip(t).enumerate() {
        let moments = ContextMoments::compute(row, params, DEFAULT_GRID_SIZE)?;
        let nu = moments.nu[k][k];
        if nu.abs() < 1e-8 {
            return Err(Error::DivisionHazard {
                unit: i,
                value: nu.abs(),
            });
        }
        w.push(policy[(i, k)] * moments.rho(k) / (moments.eta[k] * nu));
    }
    Ok(WeightVector::new(w, "latent-oracle"))
}
