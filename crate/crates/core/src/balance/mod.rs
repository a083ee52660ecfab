//! The adversarial balancing quadratic program.
//!
//! For weights `W`, the worst case of the balance functional over the unit
//! ball of a Gaussian RKHS (one function per treatment) plus a ridge term is
//! the quadratic
//!
//! ```text
//! q(W) = Wᵀ G W − aᵀ W + c
//! G    = Q ∘ δ(T_i, T_j) + γ I
//! a_j  = 2 Σ_i Q_ij π_{T_j}(X_i)
//! c    = Σ_t Σ_ij Q_ij π_t(X_i) π_t(X_j)
//! ```
//!
//! where `Q_ij = E[K(Z_i, Z_j')]` over the latent posteriors. `G` is block
//! diagonal once units are grouped by treatment, which the solvers exploit.

mod oracle;
mod solve;

use faer::Mat;

use crate::error::{Error, Result};
use crate::kernel::{gram_observed, GaussianKernel, GramEstimate};
use crate::linalg;
use crate::points::Points;

pub use oracle::brute_force_sup_j;
pub use solve::{
    project_simplex, solve_simplex, solve_simplex_with, solve_unconstrained, SimplexOptions,
};

/// How `(G, a, c)` are scaled. Both conventions share the same minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleConvention {
    /// Unscaled sums over units.
    Unnormalized,
    /// Everything divided by `n²`, so `q` is the sup of the normalized
    /// balance functional.
    Normalized,
}

impl ScaleConvention {
    pub fn factor(self, n: usize) -> f64 {
        match self {
            ScaleConvention::Unnormalized => 1.0,
            ScaleConvention::Normalized => 1.0 / (n as f64 * n as f64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub g: Mat<f64>,
    pub a: Vec<f64>,
    pub c: f64,
    pub gamma: f64,
    pub scale: ScaleConvention,
    /// Index sets on which `G` is block diagonal.
    pub blocks: Vec<Vec<usize>>,
}

impl QpProblem {
    /// A problem with a dense `G` (a single block).
    pub fn new(g: Mat<f64>, a: Vec<f64>, c: f64) -> Result<Self> {
        if g.nrows() != g.ncols() || g.nrows() != a.len() {
            return Err(Error::Dimension {
                context: "quadratic program",
                expected: g.nrows(),
                actual: a.len(),
            });
        }
        let n = a.len();
        Ok(Self {
            g,
            a,
            c,
            gamma: 0.0,
            scale: ScaleConvention::Unnormalized,
            blocks: vec![(0..n).collect()],
        })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// `q(W) = WᵀGW − aᵀW + c`.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let gw = self.g_mul(w);
        linalg::dot(w, &gw) - linalg::dot(&self.a, w) + self.c
    }

    /// `∇q(W) = 2GW − a`.
    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        self.g_mul(w)
            .iter()
            .zip(&self.a)
            .map(|(gw, a)| 2.0 * gw - a)
            .collect()
    }

    /// `G W`, using the block structure.
    pub fn g_mul(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; w.len()];
        for block in &self.blocks {
            for &i in block {
                out[i] = block.iter().map(|&j| self.g[(i, j)] * w[j]).sum();
            }
        }
        out
    }

    pub(crate) fn block_matrix(&self, block: &[usize]) -> Mat<f64> {
        Mat::from_fn(block.len(), block.len(), |a, b| {
            self.g[(block[a], block[b])]
        })
    }

    /// Re-expresses the problem in another scale convention.
    pub fn rescaled(mut self, scale: ScaleConvention) -> Self {
        let n = self.len();
        let s = scale.factor(n) / self.scale.factor(n);
        for j in 0..n {
            for i in 0..n {
                self.g[(i, j)] *= s;
            }
        }
        self.a.iter_mut().for_each(|a| *a *= s);
        self.c *= s;
        self.scale = scale;
        self
    }
}

fn group_by_treatment(t: &[usize], m: usize) -> Vec<Vec<usize>> {
    let mut blocks = vec![Vec::new(); m];
    for (i, &ti) in t.iter().enumerate() {
        blocks[ti].push(i);
    }
    blocks.retain(|b| !b.is_empty());
    blocks
}

/// Assembles `(G, a, c)` on the unscaled convention with `Γ = γI`.
/// `policy` is the `n × m` matrix of target-policy probabilities.
pub fn build_qp(q: &GramEstimate, t: &[usize], policy: &Mat<f64>, gamma: f64) -> Result<QpProblem> {
    build_qp_from_matrix(&q.matrix, t, policy, gamma)
}

pub fn build_qp_from_matrix(
    q: &Mat<f64>,
    t: &[usize],
    policy: &Mat<f64>,
    gamma: f64,
) -> Result<QpProblem> {
    let n = t.len();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension {
            context: "Gram matrix",
            expected: n,
            actual: q.nrows(),
        });
    }
    if policy.nrows() != n {
        return Err(Error::Dimension {
            context: "policy probabilities",
            expected: n,
            actual: policy.nrows(),
        });
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::config(
            "gamma",
            format!("must be nonnegative, got {gamma}"),
        ));
    }
    let m = policy.ncols();
    if let Some(bad) = t.iter().position(|&ti| ti >= m) {
        return Err(Error::config(
            "treatment",
            format!(
                "unit {bad} has treatment {} but the policy has {m}",
                t[bad] + 1
            ),
        ));
    }
    for i in 0..n {
        let s: f64 = (0..m).map(|k| policy[(i, k)]).sum();
        if (s - 1.0).abs() > 1e-8 {
            return Err(Error::config(
                "policy",
                format!("probabilities of unit {i} sum to {s}"),
            ));
        }
    }

    let q_pi = linalg::mul(q, policy);
    let a: Vec<f64> = (0..n).map(|j| 2.0 * q_pi[(j, t[j])]).collect();
    let c: f64 = (0..m)
        .map(|k| (0..n).map(|i| policy[(i, k)] * q_pi[(i, k)]).sum::<f64>())
        .sum();
    let g = Mat::from_fn(n, n, |i, j| {
        let base = if t[i] == t[j] { q[(i, j)] } else { 0.0 };
        if i == j {
            base + gamma
        } else {
            base
        }
    });
    Ok(QpProblem {
        g,
        a,
        c,
        gamma,
        scale: ScaleConvention::Unnormalized,
        blocks: group_by_treatment(t, m),
    })
}

/// `sup_μ J(W, μ) = q(W)`.
pub fn adversarial_objective(qp: &QpProblem, w: &[f64]) -> f64 {
    qp.objective(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Unconstrained,
    /// `W ≥ 0`, `Σ W = n`.
    Simplex,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveDiagnostics {
    /// `‖2GW − a − ν1‖∞` over free coordinates (`ν = 0` when unconstrained).
    pub kkt_residual: f64,
    /// `max_i W_i λ_i` with `λ` the bound multipliers.
    pub complementarity: f64,
    /// Largest violation of `λ ≥ 0`.
    pub dual_infeasibility: f64,
    /// `‖W − P(W − ∇q)‖∞`.
    pub projected_gradient: f64,
    pub iterations: usize,
}

/// Balancing weights with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub method: String,
    pub constraint: Constraint,
    pub gamma: Option<f64>,
    pub objective: Option<f64>,
    pub diagnostics: SolveDiagnostics,
    /// Problems noticed while building the weights, such as poor overlap.
    pub warnings: Vec<String>,
}

impl WeightVector {
    pub fn new(w: Vec<f64>, method: impl Into<String>) -> Self {
        Self {
            w,
            method: method.into(),
            constraint: Constraint::Unconstrained,
            gamma: None,
            objective: None,
            diagnostics: SolveDiagnostics::default(),
            warnings: Vec::new(),
        }
    }

    pub fn with_method(mut self, method: impl Into<String>) -> Self {
        self.method = method.into();
        self
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn norm2(&self) -> f64 {
        linalg::norm2(&self.w)
    }

    pub fn min(&self) -> f64 {
        self.w.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.w.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.w.iter().sum()
    }
}

/// Solves the balancing problem for a given Gram matrix.
pub fn balance_weights(
    q: &GramEstimate,
    t: &[usize],
    policy: &Mat<f64>,
    gamma: f64,
    constraint: Constraint,
) -> Result<WeightVector> {
    let qp = build_qp(q, t, policy, gamma)?;
    match constraint {
        Constraint::Unconstrained => solve_unconstrained(&qp),
        Constraint::Simplex => solve_simplex(&qp),
    }
}

/// Balancing on the observed proxies: `Q_ij = K(X_i, X_j)`.
pub fn optx_weights(
    x: &Points,
    t: &[usize],
    policy: &Mat<f64>,
    kernel: &GaussianKernel,
    gamma: f64,
    constraint: Constraint,
) -> Result<WeightVector> {
    let q = gram_observed(x, kernel);
    Ok(balance_weights(&q, t, policy, gamma, constraint)?.with_method("optx"))
}

#[cfg(test)]
mod tests;
