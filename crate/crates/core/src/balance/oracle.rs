use faer::Mat;

use crate::error::{Error, Result};
use crate::kernel::{mass_matrix, GaussianKernel};
use crate::linalg;
use crate::points::Points;
use crate::posterior::LatentPosterior;

/// Worst-case balance computed directly from its definition, as a check on
/// the closed form `q(W)`.
///
/// Each adversary `μ_t` is restricted to the span of kernel sections at the
/// shared posterior grid, `μ_t = Σ_g α_tg K(·, z_g)`, so that
/// `ν̂_t(i) = Σ_g φ_i(z_g) μ_t(z_g)` is exact on the grid. The squared
/// imbalance `(Σ_{i,t} f_it ν̂_t(i))²` with `f_it = W_i δ(T_i, t) − π_t(X_i)`
/// is a rank-one quadratic form in the whitened coefficients; its largest
/// eigenvalue over the unit ball `Σ_t ‖μ_t‖² ≤ 1` is the supremum. The ridge
/// term `γ ‖W‖²` is added at the end.
///
/// Intended for small problems: it builds an `mG × mG` eigenproblem.
pub fn brute_force_sup_j(
    posteriors: &[LatentPosterior],
    kernel: &GaussianKernel,
    t: &[usize],
    policy: &Mat<f64>,
    gamma: f64,
    w: &[f64],
) -> Result<f64> {
    let n = posteriors.len();
    if t.len() != n || w.len() != n || policy.nrows() != n {
        return Err(Error::Dimension {
            context: "brute-force objective",
            expected: n,
            actual: w.len(),
        });
    }
    let m = policy.ncols();
    let p = mass_matrix(posteriors)?;
    let nodes = Points::scalars(posteriors[0].nodes().to_vec());
    let g = nodes.len();
    let (values, vectors) = linalg::sym_eigen(&kernel.gram(&nodes))?;
    let root = Mat::from_fn(g, g, |a, b| {
        (0..g)
            .map(|k| vectors[(a, k)] * values[k].max(0.0).sqrt() * vectors[(b, k)])
            .sum::<f64>()
    });

    // Stacked c = [K^{1/2} Pᵀ f_t]_t.
    let mut stacked = vec![0.0; m * g];
    for k in 0..m {
        let f: Vec<f64> = (0..n)
            .map(|i| if t[i] == k { w[i] } else { 0.0 } - policy[(i, k)])
            .collect();
        let pf: Vec<f64> = (0..g)
            .map(|a| (0..n).map(|i| p[(i, a)] * f[i]).sum())
            .collect();
        for a in 0..g {
            stacked[k * g + a] = (0..g).map(|b| root[(a, b)] * pf[b]).sum();
        }
    }
    let outer = Mat::from_fn(m * g, m * g, |a, b| stacked[a] * stacked[b]);
    let top = linalg::sym_eigenvalues(&outer)?
        .last()
        .copied()
        .unwrap_or(0.0);
    Ok(top + gamma * linalg::dot(w, w))
}
