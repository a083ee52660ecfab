//! Quadrature oracle for the latent posterior `φ(z; x, t)`.
//!
//! With a Gaussian latent and Gaussian proxies the posterior of `Z` given
//! `X = x` alone is `N(m(x), 1/λ)`. Conditioning additionally on `T = t`
//! tilts it by the latent propensity `e_t(z)`:
//!
//! ```text
//! φ(z; x, t) ∝ N(z; m(x), 1/λ) · e_t(z)
//! ```
//!
//! The latent is scalar, so everything here is a one-dimensional trapezoid
//! rule on a uniform grid spanning `m(x) ± 8` base standard deviations.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scenario::{mu_analytic, softmax, ScenarioParams};

pub const DEFAULT_GRID_SIZE: usize = 257;
pub const MIN_GRID_SIZE: usize = 64;
/// Half-width of every grid, in base-posterior standard deviations.
pub const GRID_HALF_WIDTH: f64 = 8.0;
/// Cap applied to `e_t(z)^{-2}` in the overlap diagnostic.
pub const INVERSE_PROPENSITY_SQ_CAP: f64 = 1e12;

/// Conjugate Gaussian posterior of `Z` given the proxies only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasePosterior {
    pub mean: f64,
    pub precision: f64,
}

impl BasePosterior {
    pub fn new(x: &[f64], params: &ScenarioParams) -> Result<Self> {
        if params.sigma2_x <= 0.0 || !params.sigma2_x.is_finite() {
            return Err(Error::config("sigma2_x", "must be positive and finite"));
        }
        if x.len() != params.alpha.len() {
            return Err(Error::Dimension {
                context: "proxy vector",
                expected: params.alpha.len(),
                actual: x.len(),
            });
        }
        let norm2: f64 = params.alpha.iter().map(|a| a * a).sum();
        let precision = 1.0 + norm2 / params.sigma2_x;
        let score: f64 = params
            .alpha
            .iter()
            .zip(x)
            .map(|(a, xi)| a * (xi - params.alpha0))
            .sum::<f64>()
            / params.sigma2_x;
        Ok(Self {
            mean: score / precision,
            precision,
        })
    }

    pub fn sd(&self) -> f64 {
        self.precision.sqrt().recip()
    }
}

/// `P(T = t | Z = z)` for every treatment.
pub fn propensities_latent(z: f64, params: &ScenarioParams) -> Vec<f64> {
    let logits: Vec<f64> = params
        .beta
        .iter()
        .zip(&params.beta0)
        .map(|(b, b0)| b * z + b0)
        .collect();
    softmax(&logits)
}

/// `e_t(z) = P(T = t | Z = z)`.
pub fn propensity_latent(z: f64, t: usize, params: &ScenarioParams) -> f64 {
    propensities_latent(z, params)[t]
}

/// Uniform set of latent nodes, shareable between posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    nodes: Arc<[f64]>,
}

impl LatentGrid {
    pub fn uniform(lo: f64, hi: f64, size: usize) -> Result<Self> {
        if size == 0 || !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(Error::config("grid", "invalid grid bounds"));
        }
        if size == 1 {
            return Ok(Self {
                nodes: Arc::from(vec![0.5 * (lo + hi)]),
            });
        }
        let step = (hi - lo) / (size - 1) as f64;
        let nodes: Vec<f64> = (0..size).map(|k| lo + step * k as f64).collect();
        Ok(Self {
            nodes: Arc::from(nodes),
        })
    }

    /// A single grid spanning every base posterior's `mean ± 8 sd`, with the
    /// node spacing a local grid of `grid_size` nodes would have.
    pub fn covering(bases: &[BasePosterior], grid_size: usize) -> Result<Self> {
        Self::covering_capped(bases, grid_size, usize::MAX)
    }

    /// Like [`LatentGrid::covering`] but widens the spacing if more than
    /// `max_nodes` nodes would be needed.
    pub fn covering_capped(
        bases: &[BasePosterior],
        grid_size: usize,
        max_nodes: usize,
    ) -> Result<Self> {
        if grid_size < MIN_GRID_SIZE {
            return Err(Error::config(
                "grid_size",
                format!("must be at least {MIN_GRID_SIZE}, got {grid_size}"),
            ));
        }
        if bases.is_empty() {
            return Err(Error::config("grid", "no posteriors to cover"));
        }
        let sd = bases
            .iter()
            .map(BasePosterior::sd)
            .fold(f64::INFINITY, f64::min);
        let lo = bases
            .iter()
            .map(|b| b.mean - GRID_HALF_WIDTH * b.sd())
            .fold(f64::INFINITY, f64::min);
        let hi = bases
            .iter()
            .map(|b| b.mean + GRID_HALF_WIDTH * b.sd())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut spacing = 2.0 * GRID_HALF_WIDTH * sd / (grid_size - 1) as f64;
        if (hi - lo) / spacing + 1.0 > max_nodes as f64 {
            spacing = (hi - lo) / (max_nodes.max(2) - 1) as f64;
        }
        let intervals = ((hi - lo) / spacing - 1e-9).ceil().max(1.0) as usize;
        Self::uniform(lo, lo + spacing * intervals as f64, intervals + 1)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn shared(&self) -> Arc<[f64]> {
        Arc::clone(&self.nodes)
    }
}

/// Discrete approximation of `φ(·; x, t)`: nodes with nonnegative masses
/// summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    nodes: Arc<[f64]>,
    masses: Vec<f64>,
    treatment: usize,
    base: BasePosterior,
}

impl LatentPosterior {
    /// Builds a posterior from explicit nodes and masses (normalized here).
    pub fn from_masses(nodes: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        Self::with_nodes(
            Arc::from(nodes),
            masses,
            0,
            BasePosterior {
                mean: 0.0,
                precision: 1.0,
            },
        )
    }

    fn with_nodes(
        nodes: Arc<[f64]>,
        mut masses: Vec<f64>,
        treatment: usize,
        base: BasePosterior,
    ) -> Result<Self> {
        if nodes.len() != masses.len() || nodes.is_empty() {
            return Err(Error::Dimension {
                context: "posterior masses",
                expected: nodes.len(),
                actual: masses.len(),
            });
        }
        if masses.iter().any(|m| *m < 0.0 || !m.is_finite()) {
            return Err(Error::Numerical(
                "negative or non-finite posterior mass".into(),
            ));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(Error::Numerical("posterior has no mass on its grid".into()));
        }
        masses.iter_mut().for_each(|m| *m /= total);
        Ok(Self {
            nodes,
            masses,
            treatment,
            base,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn treatment(&self) -> usize {
        self.treatment
    }

    pub fn base(&self) -> BasePosterior {
        self.base
    }

    /// True when both posteriors live on the very same node set.
    pub fn shares_nodes(&self, other: &LatentPosterior) -> bool {
        Arc::ptr_eq(&self.nodes, &other.nodes) || self.nodes[..] == other.nodes[..]
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.masses)
            .map(|(z, w)| w * f(*z))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|z| z)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expect(|z| (z - m) * (z - m))
    }

    /// Cumulative masses, ending at one.
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.masses
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect()
    }
}

fn trapezoid_factor(k: usize, len: usize) -> f64 {
    if len > 1 && (k == 0 || k == len - 1) {
        0.5
    } else {
        1.0
    }
}

fn tilted_masses(
    nodes: &[f64],
    base: BasePosterior,
    t: Option<usize>,
    params: &ScenarioParams,
) -> Vec<f64> {
    nodes
        .iter()
        .enumerate()
        .map(|(k, &z)| {
            let d = z - base.mean;
            let density = (-0.5 * base.precision * d * d).exp();
            let tilt = t.map_or(1.0, |t| propensity_latent(z, t, params));
            density * tilt * trapezoid_factor(k, nodes.len())
        })
        .collect()
}

fn check_treatment(t: usize, params: &ScenarioParams) -> Result<()> {
    if t >= params.n_treatments() {
        return Err(Error::config(
            "treatment",
            format!(
                "treatment {} out of range 1..={}",
                t + 1,
                params.n_treatments()
            ),
        ));
    }
    Ok(())
}

fn local_grid(base: BasePosterior, grid_size: usize) -> Result<LatentGrid> {
    if grid_size < MIN_GRID_SIZE {
        return Err(Error::config(
            "grid_size",
            format!("must be at least {MIN_GRID_SIZE}, got {grid_size}"),
        ));
    }
    let half = GRID_HALF_WIDTH * base.sd();
    LatentGrid::uniform(base.mean - half, base.mean + half, grid_size)
}

/// Posterior of `Z` given `(x, t)` on its own grid of `grid_size` nodes.
pub fn posterior_grid(
    x: &[f64],
    t: usize,
    params: &ScenarioParams,
    grid_size: usize,
) -> Result<LatentPosterior> {
    check_treatment(t, params)?;
    let base = BasePosterior::new(x, params)?;
    let grid = local_grid(base, grid_size)?;
    let masses = tilted_masses(grid.nodes(), base, Some(t), params);
    LatentPosterior::with_nodes(grid.shared(), masses, t, base)
}

/// Posterior of `Z` given `(x, t)` on a caller-supplied shared grid.
pub fn posterior_on_grid(
    x: &[f64],
    t: usize,
    params: &ScenarioParams,
    grid: &LatentGrid,
) -> Result<LatentPosterior> {
    check_treatment(t, params)?;
    let base = BasePosterior::new(x, params)?;
    let masses = tilted_masses(grid.nodes(), base, Some(t), params);
    LatentPosterior::with_nodes(grid.shared(), masses, t, base)
}

/// Inverse-CDF draws from the discrete grid measure. Every draw is a node.
pub fn posterior_sample<R: Rng + ?Sized>(
    post: &LatentPosterior,
    count: usize,
    rng: &mut R,
) -> Vec<f64> {
    posterior_sample_indices(post, count, rng)
        .into_iter()
        .map(|k| post.nodes[k])
        .collect()
}

/// Node indices of inverse-CDF draws; consumes the stream exactly like
/// [`posterior_sample`].
pub fn posterior_sample_indices<R: Rng + ?Sized>(
    post: &LatentPosterior,
    count: usize,
    rng: &mut R,
) -> Vec<usize> {
    let cdf = post.cdf();
    (0..count)
        .map(|_| inverse_cdf_index(&cdf, rng.random()))
        .collect()
}

/// Like [`posterior_sample`] but spreads each draw uniformly over the half
/// cell on either side of its node.
pub fn posterior_sample_jittered<R: Rng + ?Sized>(
    post: &LatentPosterior,
    count: usize,
    rng: &mut R,
) -> Vec<f64> {
    let cdf = post.cdf();
    let nodes = post.nodes();
    (0..count)
        .map(|_| {
            let k = inverse_cdf_index(&cdf, rng.random());
            let left = if k > 0 { nodes[k] - nodes[k - 1] } else { 0.0 };
            let right = if k + 1 < nodes.len() {
                nodes[k + 1] - nodes[k]
            } else {
                0.0
            };
            let u: f64 = rng.random();
            nodes[k] - 0.5 * left + u * 0.5 * (left + right)
        })
        .collect()
}

fn inverse_cdf_index(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// `η_t(x) = P(T = t | X = x)` for every treatment.
pub fn eta_all(x: &[f64], params: &ScenarioParams) -> Result<Vec<f64>> {
    eta_all_with(x, params, DEFAULT_GRID_SIZE)
}

pub fn eta_all_with(x: &[f64], params: &ScenarioParams, grid_size: usize) -> Result<Vec<f64>> {
    let base = BasePosterior::new(x, params)?;
    let grid = local_grid(base, grid_size)?;
    let weights = tilted_masses(grid.nodes(), base, None, params);
    let total: f64 = weights.iter().sum();
    let mut eta = vec![0.0; params.n_treatments()];
    for (z, w) in grid.nodes().iter().zip(&weights) {
        for (e, p) in eta.iter_mut().zip(propensities_latent(*z, params)) {
            *e += w * p;
        }
    }
    eta.iter_mut().for_each(|e| *e /= total);
    Ok(eta)
}

pub fn eta(x: &[f64], t: usize, params: &ScenarioParams) -> Result<f64> {
    check_treatment(t, params)?;
    Ok(eta_all(x, params)?[t])
}

/// `ν_t(x, t') = E[μ_t(Z) | X = x, T = t']`.
pub fn nu(x: &[f64], t: usize, t_cond: usize, params: &ScenarioParams) -> Result<f64> {
    check_treatment(t, params)?;
    let post = posterior_grid(x, t_cond, params, DEFAULT_GRID_SIZE)?;
    Ok(post.expect(|z| mu_analytic(t, z, params)))
}

/// `ρ_t(x) = Σ_{t'} η_{t'}(x) ν_t(x, t') = E[μ_t(Z) | X = x]`.
pub fn rho(x: &[f64], t: usize, params: &ScenarioParams) -> Result<f64> {
    Ok(ContextMoments::compute(x, params, DEFAULT_GRID_SIZE)?.rho(t))
}

/// All first-order moments of one context, computed from shared grids.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMoments {
    pub eta: Vec<f64>,
    /// `nu[t][t_cond]`
    pub nu: Vec<Vec<f64>>,
}

impl ContextMoments {
    pub fn compute(x: &[f64], params: &ScenarioParams, grid_size: usize) -> Result<Self> {
        let m = params.n_treatments();
        let eta = eta_all_with(x, params, grid_size)?;
        let posts = (0..m)
            .map(|t| posterior_grid(x, t, params, grid_size))
            .collect::<Result<Vec<_>>>()?;
        let nu = (0..m)
            .map(|t| {
                posts
                    .iter()
                    .map(|p| p.expect(|z| mu_analytic(t, z, params)))
                    .collect()
            })
            .collect();
        Ok(Self { eta, nu })
    }

    pub fn rho(&self, t: usize) -> f64 {
        self.eta.iter().zip(&self.nu[t]).map(|(e, v)| e * v).sum()
    }
}

/// Which propensity enters the second moment `E[e^{-2}(Z) | x, t']` of the
/// `ν`-bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlapWeight {
    /// `e_{t'}` for the conditioning treatment `t'`. This is the form the
    /// bound's derivation establishes; it holds for any sign-definite `μ_t`.
    Conditioning,
    /// `e_t` for the outcome treatment `t`, as the bound is usually quoted.
    /// It can fail when `t ≠ t'`.
    Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Set when `e^{-2}` hit [`INVERSE_PROPENSITY_SQ_CAP`] somewhere on the grid.
    pub clipped: bool,
}

/// Evaluates both sides of
/// `|ν_t(x,t'')| ≤ η_{t'}(x)/η_{t''}(x) · sqrt(8 b E[e^{-2}(Z) | x, t'] |ν_t(x,t')|)`.
pub fn check_nu_bound(
    x: &[f64],
    t: usize,
    t_mid: usize,
    t_target: usize,
    params: &ScenarioParams,
    b: f64,
) -> Result<NuBound> {
    check_nu_bound_with(
        x,
        t,
        t_mid,
        t_target,
        params,
        b,
        OverlapWeight::Conditioning,
    )
}

pub fn check_nu_bound_with(
    x: &[f64],
    t: usize,
    t_mid: usize,
    t_target: usize,
    params: &ScenarioParams,
    b: f64,
    weight: OverlapWeight,
) -> Result<NuBound> {
    for tt in [t, t_mid, t_target] {
        check_treatment(tt, params)?;
    }
    let eta = eta_all(x, params)?;
    let mid = posterior_grid(x, t_mid, params, DEFAULT_GRID_SIZE)?;
    let target = posterior_grid(x, t_target, params, DEFAULT_GRID_SIZE)?;
    let nu_mid = mid.expect(|z| mu_analytic(t, z, params));
    let nu_target = target.expect(|z| mu_analytic(t, z, params));
    let which = match weight {
        OverlapWeight::Conditioning => t_mid,
        OverlapWeight::Outcome => t,
    };
    let clipped = std::cell::Cell::new(false);
    let second_moment = mid.expect(|z| {
        let e = propensity_latent(z, which, params);
        let inv = (e * e).recip();
        if inv > INVERSE_PROPENSITY_SQ_CAP {
            clipped.set(true);
            INVERSE_PROPENSITY_SQ_CAP
        } else {
            inv
        }
    });
    let lhs = nu_target.abs();
    let rhs = eta[t_mid] / eta[t_target] * (8.0 * b * second_moment * nu_mid.abs()).sqrt();
    Ok(NuBound {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
        clipped: clipped.get(),
    })
}
