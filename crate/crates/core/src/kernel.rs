//! Gaussian kernels, Gram matrices over latent posteriors, and kernel ridge
//! regression.

use std::collections::HashMap;

use faer::Mat;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, spd_solve};
use crate::points::Points;
use crate::posterior::LatentPosterior;

/// Largest number of points used when computing a median heuristic. Larger
/// inputs are thinned with a fixed stride, so the result stays deterministic.
pub const MEDIAN_SUBSAMPLE: usize = 4096;

/// `K(a, b) = exp(-‖a - b‖² / (2h²))`. On vectors this is the product of
/// one-dimensional Gaussian kernels sharing the bandwidth `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    pub bandwidth: f64,
}

impl GaussianKernel {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::config(
                "bandwidth",
                format!("must be positive and finite, got {bandwidth}"),
            ));
        }
        Ok(Self { bandwidth })
    }

    pub fn eval(&self, z: f64, z2: f64) -> f64 {
        let d = z - z2;
        (-0.5 * d * d / (self.bandwidth * self.bandwidth)).exp()
    }

    pub fn eval_vec(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-0.5 * d2 / (self.bandwidth * self.bandwidth)).exp()
    }

    /// Cross Gram matrix `K(a_i, b_j)`.
    pub fn matrix(&self, a: &Points, b: &Points) -> Mat<f64> {
        let mut out = Mat::zeros(a.len(), b.len());
        for (i, ra) in a.rows().enumerate() {
            for (j, rb) in b.rows().enumerate() {
                out[(i, j)] = self.eval_vec(ra, rb);
            }
        }
        out
    }

    /// Symmetric Gram matrix of a single point set.
    pub fn gram(&self, a: &Points) -> Mat<f64> {
        let n = a.len();
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = 1.0;
            for j in (i + 1)..n {
                let v = self.eval_vec(a.row(i), a.row(j));
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }
}

fn thin(len: usize) -> impl Iterator<Item = usize> {
    let stride = len.div_ceil(MEDIAN_SUBSAMPLE).max(1);
    (0..len).step_by(stride)
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}

fn positive_bandwidth(h: Option<f64>, what: &str) -> Result<f64> {
    match h {
        Some(h) if h > 0.0 && h.is_finite() => Ok(h),
        _ => Err(Error::Numerical(format!(
            "median heuristic for {what} is degenerate (all points coincide)"
        ))),
    }
}

/// Median pairwise distance between distinct points (the median heuristic).
pub fn median_heuristic(points: &Points) -> Result<f64> {
    let idx: Vec<usize> = thin(points.len()).collect();
    let mut d = Vec::with_capacity(idx.len() * idx.len().saturating_sub(1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let s: f64 = points
                .row(i)
                .iter()
                .zip(points.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            d.push(s.sqrt());
        }
    }
    positive_bandwidth(median(&mut d), "points")
}

/// Median heuristic for scalars.
pub fn median_heuristic_scalar(values: &[f64]) -> Result<f64> {
    median_heuristic(&Points::scalars(values.to_vec()))
}

/// Median of per-coordinate median absolute differences. Suited to inputs
/// whose coordinates differ in scale; it yields a much narrower kernel than
/// [`median_heuristic`] in ten dimensions.
pub fn coordinate_median_heuristic(points: &Points) -> Result<f64> {
    let idx: Vec<usize> = thin(points.len()).collect();
    let mut per_coord = Vec::with_capacity(points.dim());
    for k in 0..points.dim() {
        let mut d = Vec::new();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                d.push((points.row(i)[k] - points.row(j)[k]).abs());
            }
        }
        if let Some(m) = median(&mut d) {
            per_coord.push(m);
        }
    }
    positive_bandwidth(median(&mut per_coord), "coordinates")
}

/// Median of `|Z - Z'|` for `Z, Z'` drawn independently from the discrete
/// measure `(values, weights)`.
pub fn weighted_median_distance(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::Dimension {
            context: "weighted median",
            expected: values.len(),
            actual: weights.len(),
        });
    }
    let mut pairs = Vec::with_capacity(values.len() * values.len());
    for (a, wa) in values.iter().zip(weights) {
        for (b, wb) in values.iter().zip(weights) {
            let w = wa * wb;
            if w > 0.0 {
                pairs.push(((a - b).abs(), w));
            }
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    let mut out = None;
    for (d, w) in pairs {
        acc += w;
        if acc >= 0.5 * total {
            out = Some(d);
            break;
        }
    }
    positive_bandwidth(out, "weighted values")
}

/// Median heuristic over the pooled (averaged) measure of many posteriors
/// sharing a grid.
pub fn posterior_median_heuristic(posteriors: &[LatentPosterior]) -> Result<f64> {
    let nodes = shared_nodes(posteriors)?;
    let mut pooled = vec![0.0; nodes.len()];
    for p in posteriors {
        for (acc, m) in pooled.iter_mut().zip(p.masses()) {
            *acc += m;
        }
    }
    weighted_median_distance(nodes, &pooled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramSource {
    /// Monte-Carlo estimate from `draws` posterior samples per unit.
    Sampled { draws: usize },
    /// Deterministic quadrature on a shared grid of `nodes` points.
    Quadrature { nodes: usize },
    /// Kernel evaluated directly on observed covariates.
    Observed,
}

/// An estimate of `Q_ij = E[K(Z_i, Z_j')]`.
#[derive(Debug, Clone)]
pub struct GramEstimate {
    pub matrix: Mat<f64>,
    pub source: GramSource,
}

impl GramEstimate {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        linalg::min_eigenvalue(&self.matrix)
    }
}

/// Monte-Carlo Gram from `draws`, one row of `B` latent draws per unit:
/// `Q_ij = (1/B²) Σ_b Σ_c K(Z_i^b, Z_j^c)`. The diagonal reuses the same
/// draws for both copies.
///
/// When the draws take few distinct values (as inverse-CDF draws from a grid
/// do) the sum is computed through value counts, which is exact and far
/// cheaper than the `n²B²` double loop.
pub fn estimate_gram_sampled(draws: &Points, kernel: &GaussianKernel) -> Result<GramEstimate> {
    let (n, b) = (draws.len(), draws.dim());
    if b == 0 {
        return Err(Error::config("draws", "need at least one draw per unit"));
    }
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut uniques = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for row in draws.rows() {
        let mut counts: Vec<(usize, f64)> = Vec::new();
        for v in row {
            let key = if *v == 0.0 { 0 } else { v.to_bits() };
            let u = *index.entry(key).or_insert_with(|| {
                uniques.push(*v);
                uniques.len() - 1
            });
            match counts.iter_mut().find(|(k, _)| *k == u) {
                Some(c) => c.1 += 1.0,
                None => counts.push((u, 1.0)),
            }
        }
        counts.iter_mut().for_each(|c| c.1 /= b as f64);
        rows.push(counts);
    }

    let matrix = if uniques.len() <= 8 * 1024 {
        let k_unique = kernel.gram(&Points::scalars(uniques));
        // M = H K, then Q = M Hᵀ with H sparse.
        let m_rows: Vec<Vec<f64>> = rows
            .par_iter()
            .map(|r| {
                let mut acc = vec![0.0; k_unique.ncols()];
                for &(u, w) in r {
                    for (a, col) in acc.iter_mut().enumerate() {
                        *col += w * k_unique[(u, a)];
                    }
                }
                acc
            })
            .collect();
        let q_rows: Vec<Vec<f64>> = m_rows
            .par_iter()
            .map(|m| {
                rows.iter()
                    .map(|r| r.iter().map(|&(u, w)| w * m[u]).sum())
                    .collect()
            })
            .collect();
        let mut q = Mat::from_fn(n, n, |i, j| q_rows[i][j]);
        linalg::symmetrize(&mut q);
        q
    } else {
        let q_rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let mut s = 0.0;
                        for zi in draws.row(i) {
                            for zj in draws.row(j) {
                                s += kernel.eval(*zi, *zj);
                            }
                        }
                        s / (b * b) as f64
                    })
                    .collect()
            })
            .collect();
        Mat::from_fn(n, n, |i, j| q_rows[i][j])
    };
    Ok(GramEstimate {
        matrix,
        source: GramSource::Sampled { draws: b },
    })
}

fn shared_nodes(posteriors: &[LatentPosterior]) -> Result<&[f64]> {
    let first = posteriors
        .first()
        .ok_or_else(|| Error::config("posteriors", "no posteriors supplied"))?;
    if let Some(bad) = posteriors.iter().position(|p| !p.shares_nodes(first)) {
        return Err(Error::config(
            "posteriors",
            format!("posterior {bad} is not on the shared grid"),
        ));
    }
    Ok(first.nodes())
}

/// Row-stacked posterior masses, `n × G`.
pub fn mass_matrix(posteriors: &[LatentPosterior]) -> Result<Mat<f64>> {
    let g = shared_nodes(posteriors)?.len();
    Ok(Mat::from_fn(posteriors.len(), g, |i, k| {
        posteriors[i].masses()[k]
    }))
}

/// Quadrature Gram `Q = P K_grid Pᵀ` over posteriors sharing one grid. This
/// is the exact expectation with independent shadow copies, up to grid
/// resolution.
pub fn estimate_gram_quadrature(
    posteriors: &[LatentPosterior],
    kernel: &GaussianKernel,
) -> Result<GramEstimate> {
    let nodes = shared_nodes(posteriors)?;
    let k_grid = kernel.gram(&Points::scalars(nodes.to_vec()));
    let p = mass_matrix(posteriors)?;
    let pk = linalg::mul(&p, &k_grid);
    let mut q = linalg::mul_transpose(&pk, &p);
    linalg::symmetrize(&mut q);
    Ok(GramEstimate {
        matrix: q,
        source: GramSource::Quadrature { nodes: nodes.len() },
    })
}

/// Gram over observed covariates, `Q_ij = K(X_i, X_j)`.
pub fn gram_observed(x: &Points, kernel: &GaussianKernel) -> GramEstimate {
    GramEstimate {
        matrix: kernel.gram(x),
        source: GramSource::Observed,
    }
}

/// Default ridge strength for `n_train` training points.
pub fn default_ridge(n_train: usize) -> f64 {
    1e-3 * n_train as f64
}

/// Ridge multipliers (of the training size) searched by cross-validation.
pub const CV_RIDGE_FACTORS: [f64; 4] = [1e-5, 1e-4, 1e-3, 1e-2];
pub const CV_FOLDS: usize = 5;

/// `f(x) = Σ_i c_i K(x, x_i) + b` with `b` the training-target mean.
#[derive(Debug, Clone)]
pub struct KernelRidge {
    pub kernel: GaussianKernel,
    pub ridge: f64,
    pub intercept: f64,
    centers: Points,
    coef: Vec<f64>,
}

impl KernelRidge {
    /// Solves `(K + λI) c = y - mean(y)`.
    pub fn fit(
        inputs: &Points,
        targets: &[f64],
        kernel: GaussianKernel,
        ridge: f64,
    ) -> Result<Self> {
        check_fit(inputs.len(), targets.len(), ridge)?;
        let intercept = mean(targets);
        let mut k = kernel.gram(inputs);
        for i in 0..k.nrows() {
            k[(i, i)] += ridge;
        }
        let centered: Vec<f64> = targets.iter().map(|y| y - intercept).collect();
        let coef = spd_solve(&k, &centered, "kernel ridge system")?;
        Ok(Self {
            kernel,
            ridge,
            intercept,
            centers: inputs.clone(),
            coef,
        })
    }

    /// Same model as [`KernelRidge::fit`] on scalar inputs, but solved on the
    /// distinct input values only. Repeated inputs (pooled grid draws) make
    /// this far smaller than the dense system while giving identical
    /// predictions.
    pub fn fit_grouped(
        inputs: &[f64],
        targets: &[f64],
        kernel: GaussianKernel,
        ridge: f64,
    ) -> Result<Self> {
        check_fit(inputs.len(), targets.len(), ridge)?;
        let intercept = mean(targets);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.sort_by(|&a, &b| inputs[a].total_cmp(&inputs[b]));
        let mut values: Vec<f64> = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        let mut sums: Vec<f64> = Vec::new();
        for i in order {
            let y = targets[i] - intercept;
            if values.last() == Some(&inputs[i]) {
                *counts.last_mut().unwrap() += 1.0;
                *sums.last_mut().unwrap() += y;
            } else {
                values.push(inputs[i]);
                counts.push(1.0);
                sums.push(y);
            }
        }
        // Summing the dense normal equations within each group gives
        // (N K + λI) C = S for the group totals C; symmetrize with N^{1/2}.
        let centers = Points::scalars(values);
        let root: Vec<f64> = counts.iter().map(|c| c.sqrt()).collect();
        let mut a = kernel.gram(&centers);
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                a[(i, j)] *= root[i] * root[j];
            }
            a[(i, i)] += ridge;
        }
        let rhs: Vec<f64> = sums.iter().zip(&root).map(|(s, r)| s / r).collect();
        let e = spd_solve(&a, &rhs, "grouped kernel ridge system")?;
        let coef = e.iter().zip(&root).map(|(e, r)| e * r).collect();
        Ok(Self {
            kernel,
            ridge,
            intercept,
            centers,
            coef,
        })
    }

    /// Picks the ridge from `factor · n_train` by `CV_FOLDS`-fold
    /// cross-validation (fold of unit `i` is `i mod CV_FOLDS`), then refits
    /// on all data.
    pub fn fit_cv(
        inputs: &Points,
        targets: &[f64],
        kernel: GaussianKernel,
        factors: &[f64],
    ) -> Result<Self> {
        check_fit(inputs.len(), targets.len(), 1.0)?;
        let n = inputs.len();
        if factors.is_empty() {
            return Err(Error::config("ridge", "empty cross-validation grid"));
        }
        if n < 2 * CV_FOLDS {
            return Self::fit(inputs, targets, kernel, factors[0] * n as f64);
        }
        let mut best = (f64::INFINITY, factors[0]);
        for &factor in factors {
            let mut sse = 0.0;
            for fold in 0..CV_FOLDS {
                let (train, test): (Vec<usize>, Vec<usize>) =
                    (0..n).partition(|i| i % CV_FOLDS != fold);
                let y_train: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
                let model = Self::fit(
                    &inputs.select(&train),
                    &y_train,
                    kernel,
                    factor * train.len() as f64,
                )?;
                for &i in &test {
                    let r = model.predict(inputs.row(i)) - targets[i];
                    sse += r * r;
                }
            }
            if sse < best.0 {
                best = (sse, factor);
            }
        }
        Self::fit(inputs, targets, kernel, best.1 * n as f64)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .centers
                .rows()
                .zip(&self.coef)
                .map(|(c, w)| w * self.kernel.eval_vec(x, c))
                .sum::<f64>()
    }

    pub fn predict_many(&self, x: &Points) -> Vec<f64> {
        x.rows().map(|r| self.predict(r)).collect()
    }

    pub fn centers(&self) -> &Points {
        &self.centers
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }
}

fn check_fit(n_inputs: usize, n_targets: usize, ridge: f64) -> Result<()> {
    if n_inputs != n_targets {
        return Err(Error::Dimension {
            context: "kernel ridge targets",
            expected: n_inputs,
            actual: n_targets,
        });
    }
    if n_inputs == 0 {
        return Err(Error::config("ridge", "no training points"));
    }
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(Error::config(
            "ridge",
            format!("must be positive, got {ridge}"),
        ));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
