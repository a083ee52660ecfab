use faer::Mat;

use crate::error::{Error, Result};
use crate::linalg::{self, spd_solve};
use crate::points::Points;
use crate::scenario::softmax;

/// Multinomial logistic regression of the treatment on the proxies, fitted by
/// Newton's method on the L2-penalized likelihood. Treatment 0 is the
/// reference class; intercepts are not penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialLogit {
    /// `m` rows of `[intercept, slopes…]`.
    pub coef: Vec<Vec<f64>>,
    pub iterations: usize,
}

const MAX_NEWTON: usize = 100;

impl MultinomialLogit {
    pub fn fit(x: &Points, t: &[usize], m: usize, penalty: f64) -> Result<Self> {
        if x.len() != t.len() {
            return Err(Error::Dimension {
                context: "logit treatments",
                expected: x.len(),
                actual: t.len(),
            });
        }
        if m < 2 || t.iter().any(|&k| k >= m) {
            return Err(Error::config(
                "treatment",
                "labels out of range for logit fit",
            ));
        }
        if penalty.is_nan() || penalty < 0.0 {
            return Err(Error::config("logit_penalty", "must be nonnegative"));
        }
        let p = x.dim() + 1;
        let dim = (m - 1) * p;
        let mut theta = vec![0.0; dim];
        let mut model = Self::from_theta(&theta, m, p);
        let mut loss = model.loss(x, t, penalty);
        let mut iterations = 0;
        while iterations < MAX_NEWTON {
            iterations += 1;
            let (grad, hess) = model.derivatives(x, t, penalty);
            if linalg::norm_inf(&grad) <= 1e-10 * (1.0 + x.len() as f64) {
                break;
            }
            let step = spd_solve(&hess, &grad, "logit Hessian")
                .or_else(|_| linalg::lu_solve(&hess, &grad))?;
            let mut scale = 1.0;
            loop {
                let trial: Vec<f64> = theta
                    .iter()
                    .zip(&step)
                    .map(|(a, d)| a - scale * d)
                    .collect();
                let cand = Self::from_theta(&trial, m, p);
                let l = cand.loss(x, t, penalty);
                if l <= loss || scale < 1e-10 {
                    theta = trial;
                    model = cand;
                    loss = l;
                    break;
                }
                scale *= 0.5;
            }
            if scale < 1e-10 {
                break;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numerical("logit likelihood diverged".into()));
        }
        model.iterations = iterations;
        Ok(model)
    }

    fn from_theta(theta: &[f64], m: usize, p: usize) -> Self {
        let mut coef = vec![vec![0.0; p]];
        coef.extend(theta.chunks(p).map(|c| c.to_vec()));
        debug_assert_eq!(coef.len(), m);
        Self {
            coef,
            iterations: 0,
        }
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .coef
            .iter()
            .map(|c| c[0] + c[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        softmax(&logits)
    }

    pub fn prob_matrix(&self, x: &Points) -> Mat<f64> {
        let mut out = Mat::zeros(x.len(), self.coef.len());
        for (i, row) in x.rows().enumerate() {
            for (k, v) in self.probs(row).into_iter().enumerate() {
                out[(i, k)] = v;
            }
        }
        out
    }

    fn loss(&self, x: &Points, t: &[usize], penalty: f64) -> f64 {
        let nll: f64 = x
            .rows()
            .zip(t)
            .map(|(row, &k)| -self.probs(row)[k].ln())
            .sum();
        let ridge: f64 = self.coef[1..]
            .iter()
            .map(|c| c[1..].iter().map(|v| v * v).sum::<f64>())
            .sum();
        nll + 0.5 * penalty * ridge
    }

    fn derivatives(&self, x: &Points, t: &[usize], penalty: f64) -> (Vec<f64>, Mat<f64>) {
        let m = self.coef.len();
        let p = x.dim() + 1;
        let dim = (m - 1) * p;
        let mut grad = vec![0.0; dim];
        let mut hess = Mat::zeros(dim, dim);
        let mut xt = vec![1.0; p];
        for (row, &k) in x.rows().zip(t) {
            xt[1..].copy_from_slice(row);
            let pr = self.probs(row);
            for a in 1..m {
                let resid = pr[a] - if k == a { 1.0 } else { 0.0 };
                for u in 0..p {
                    grad[(a - 1) * p + u] += resid * xt[u];
                }
                for b in 1..m {
                    let w = pr[a] * (if a == b { 1.0 } else { 0.0 } - pr[b]);
                    for u in 0..p {
                        for v in 0..p {
                            hess[((a - 1) * p + u, (b - 1) * p + v)] += w * xt[u] * xt[v];
                        }
                    }
                }
            }
        }
        for a in 1..m {
            for u in 1..p {
                let idx = (a - 1) * p + u;
                grad[idx] += penalty * self.coef[a][u];
                hess[(idx, idx)] += penalty;
            }
        }
        (grad, hess)
    }
}
