use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use super::{Constraint, QpProblem, SolveDiagnostics, WeightVector};
use crate::error::{Error, Result};
use crate::linalg::{self, norm_inf};

fn column(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

/// Solves `G_B x = rhs` for one block with two rounds of iterative
/// refinement.
fn block_solve(gb: &Mat<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let context = "balancing system";
    let llt = gb
        .llt(Side::Lower)
        .map_err(|_| Error::Singular { context })?;
    let b = column(rhs);
    let mut x = llt.solve(&b);
    for _ in 0..2 {
        let r = &b - gb * &x;
        x += llt.solve(&r);
    }
    let out: Vec<f64> = (0..rhs.len()).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular { context });
    }
    Ok(out)
}

/// `W = G⁻¹ a / 2`, solved block by block.
pub fn solve_unconstrained(qp: &QpProblem) -> Result<WeightVector> {
    let mut w = vec![0.0; qp.len()];
    for block in &qp.blocks {
        let gb = qp.block_matrix(block);
        let rhs: Vec<f64> = block.iter().map(|&i| 0.5 * qp.a[i]).collect();
        for (&i, v) in block.iter().zip(block_solve(&gb, &rhs)?) {
            w[i] = v;
        }
    }
    let residual = norm_inf(&qp.gradient(&w));
    if residual.is_nan() || residual > 1e-8 * (1.0 + norm_inf(&qp.a)) {
        return Err(Error::Singular {
            context: "balancing system (KKT residual too large)",
        });
    }
    let objective = qp.objective(&w);
    Ok(WeightVector {
        w,
        method: "balance".into(),
        constraint: Constraint::Unconstrained,
        gamma: Some(qp.gamma),
        objective: Some(objective),
        diagnostics: SolveDiagnostics {
            kkt_residual: residual,
            ..SolveDiagnostics::default()
        },
        warnings: Vec::new(),
    })
}

/// Euclidean projection onto `{w ≥ 0, Σ w = total}`.
pub fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, uk) in u.iter().enumerate() {
        cumulative += uk;
        let candidate = (cumulative - total) / (k + 1) as f64;
        if uk - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    /// Stop once `‖W − P(W − ∇q)‖∞` falls to this value.
    pub tolerance: f64,
    /// Attempt an exact solve on the current support this often.
    pub polish_every: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            tolerance: 1e-7,
            polish_every: 25,
        }
    }
}

struct Blocks {
    parts: Vec<(Vec<usize>, Mat<f64>)>,
}

impl Blocks {
    fn new(qp: &QpProblem) -> Self {
        Self {
            parts: qp
                .blocks
                .iter()
                .map(|b| (b.clone(), qp.block_matrix(b)))
                .collect(),
        }
    }

    fn gradient(&self, qp: &QpProblem, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; w.len()];
        for (idx, gb) in &self.parts {
            let local = column(&idx.iter().map(|&i| w[i]).collect::<Vec<_>>());
            let prod = gb * &local;
            for (k, &i) in idx.iter().enumerate() {
                out[i] = 2.0 * prod[(k, 0)] - qp.a[i];
            }
        }
        out
    }

    /// Exact minimizer on the face `{W_i = 0, i ∉ free}`, `Σ W = total`:
    /// `W_F = G_FF⁻¹ (a_F + ν1) / 2` with `ν` fixed by the sum.
    fn polish(&self, qp: &QpProblem, free: &[bool], total: f64) -> Option<Vec<f64>> {
        let mut u = vec![0.0; free.len()];
        let mut v = vec![0.0; free.len()];
        for (idx, gb) in &self.parts {
            let local: Vec<usize> = (0..idx.len()).filter(|&k| free[idx[k]]).collect();
            if local.is_empty() {
                continue;
            }
            let sub = Mat::from_fn(local.len(), local.len(), |a, b| gb[(local[a], local[b])]);
            let half_a: Vec<f64> = local.iter().map(|&k| 0.5 * qp.a[idx[k]]).collect();
            let ua = block_solve(&sub, &half_a).ok()?;
            let va = block_solve(&sub, &vec![0.5; local.len()]).ok()?;
            for (k, &l) in local.iter().enumerate() {
                u[idx[l]] = ua[k];
                v[idx[l]] = va[k];
            }
        }
        let sum_v: f64 = v.iter().sum();
        if sum_v.is_nan() || sum_v <= 0.0 {
            return None;
        }
        let nu = (total - u.iter().sum::<f64>()) / sum_v;
        let w: Vec<f64> = u.iter().zip(&v).map(|(u, v)| u + nu * v).collect();
        if w.iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return None;
        }
        Some(w)
    }
}

fn projected_gradient(w: &[f64], g: &[f64], total: f64) -> f64 {
    let step: Vec<f64> = w.iter().zip(g).map(|(w, g)| w - g).collect();
    let p = project_simplex(&step, total);
    w.iter()
        .zip(&p)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn diagnostics(w: &[f64], g: &[f64], pg: f64, iterations: usize) -> SolveDiagnostics {
    let free: Vec<f64> = w
        .iter()
        .zip(g)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, g)| *g)
        .collect();
    let nu = if free.is_empty() {
        g.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    };
    let mut out = SolveDiagnostics {
        projected_gradient: pg,
        iterations,
        ..SolveDiagnostics::default()
    };
    for (wi, gi) in w.iter().zip(g) {
        let lambda = gi - nu;
        if *wi > 0.0 {
            out.kkt_residual = out.kkt_residual.max(lambda.abs());
        } else {
            out.dual_infeasibility = out.dual_infeasibility.max(-lambda);
        }
        out.complementarity = out.complementarity.max((wi * lambda).abs());
    }
    out
}

/// Minimizes `q(W)` over `W ≥ 0, Σ W = n`.
pub fn solve_simplex(qp: &QpProblem) -> Result<WeightVector> {
    solve_simplex_with(qp, SimplexOptions::default())
}

/// Projected gradient with Barzilai–Borwein steps and Armijo backtracking,
/// interleaved with exact solves on the current support.
pub fn solve_simplex_with(qp: &QpProblem, opts: SimplexOptions) -> Result<WeightVector> {
    let n = qp.len();
    let total = n as f64;
    let blocks = Blocks::new(qp);
    let start = match solve_unconstrained(qp) {
        Ok(w) => project_simplex(&w.w, total),
        Err(_) => vec![1.0; n],
    };
    let mut w = start;
    let mut g = blocks.gradient(qp, &w);
    let mut f = qp.objective(&w);

    let lipschitz = (0..n)
        .map(|i| {
            qp.blocks
                .iter()
                .find(|b| b.contains(&i))
                .map_or(0.0, |b| b.iter().map(|&j| qp.g[(i, j)].abs()).sum::<f64>())
        })
        .fold(0.0, f64::max);
    let mut alpha = if lipschitz > 0.0 {
        0.5 / lipschitz
    } else {
        1.0
    };
    let mut last_support: Option<Vec<bool>> = None;

    for iteration in 0..opts.max_iterations {
        let pg = projected_gradient(&w, &g, total);
        if pg <= opts.tolerance {
            return Ok(finish(qp, w, &g, pg, iteration));
        }
        if iteration % opts.polish_every == 0 {
            let support: Vec<bool> = w.iter().map(|x| *x > 0.0).collect();
            if last_support.as_ref() != Some(&support) {
                if let Some(candidate) = blocks.polish(qp, &support, total) {
                    let fc = qp.objective(&candidate);
                    if fc <= f + 1e-12 * (1.0 + f.abs()) {
                        let gc = blocks.gradient(qp, &candidate);
                        let pgc = projected_gradient(&candidate, &gc, total);
                        w = candidate;
                        g = gc;
                        f = fc;
                        if pgc <= opts.tolerance {
                            return Ok(finish(qp, w, &g, pgc, iteration));
                        }
                    }
                }
                last_support = Some(support);
            }
        }

        let slope_limit = 1e-4;
        let mut step = alpha;
        let (w_new, f_new) = loop {
            let trial: Vec<f64> = w.iter().zip(&g).map(|(w, g)| w - step * g).collect();
            let cand = project_simplex(&trial, total);
            let descent: f64 = cand
                .iter()
                .zip(&w)
                .zip(&g)
                .map(|((c, w), g)| g * (c - w))
                .sum();
            let fc = qp.objective(&cand);
            if fc <= f + slope_limit * descent || step < 1e-20 {
                break (cand, fc);
            }
            step *= 0.5;
        };
        let g_new = blocks.gradient(qp, &w_new);
        let s: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = linalg::dot(&s, &y);
        alpha = if sy > 0.0 {
            (linalg::dot(&s, &s) / sy).clamp(1e-12, 1e12)
        } else {
            (2.0 * step).min(1e12)
        };
        w = w_new;
        g = g_new;
        f = f_new;
    }
    let pg = projected_gradient(&w, &g, total);
    if pg <= opts.tolerance {
        return Ok(finish(qp, w, &g, pg, opts.max_iterations));
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        residual: pg,
        objective: f,
        best: w,
    })
}

fn finish(qp: &QpProblem, w: Vec<f64>, g: &[f64], pg: f64, iterations: usize) -> WeightVector {
    let objective = qp.objective(&w);
    let diagnostics = diagnostics(&w, g, pg, iterations);
    WeightVector {
        w,
        method: "balance".into(),
        constraint: Constraint::Simplex,
        gamma: Some(qp.gamma),
        objective: Some(objective),
        diagnostics,
        warnings: Vec::new(),
    }
}
