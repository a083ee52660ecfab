//! Synthetic generalized-linear scenario with a scalar latent confounder.
//!
//! ```text
//! Z ~ N(0, 1)
//! X = α Z + α0 + N(0, σ²_X I_q)
//! T ~ softmax(β Z + β0)
//! S(t) = ζ(t) Z + ζ0(t) + N(0, σ²_Y)
//! Y = g(S(T))
//! ```

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::points::Points;

/// Outcome link `g` applied to the latent outcome index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Link {
    /// `g(w) = 3·1{w ≥ 0} − 6`
    Step,
    Exp,
    Cubic,
    Linear,
}

impl Link {
    pub fn apply(self, w: f64) -> f64 {
        match self {
            Link::Step => {
                if w >= 0.0 {
                    -3.0
                } else {
                    -6.0
                }
            }
            Link::Exp => w.exp(),
            Link::Cubic => w * w * w,
            Link::Linear => w,
        }
    }

    /// Supremum of `|g|` over the outcome range, when bounded.
    pub fn sup_norm(self) -> Option<f64> {
        match self {
            Link::Step => Some(6.0),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::Step => "step",
            Link::Exp => "exp",
            Link::Cubic => "cubic",
            Link::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "step" => Ok(Link::Step),
            "exp" => Ok(Link::Exp),
            "cubic" => Ok(Link::Cubic),
            "linear" => Ok(Link::Linear),
            other => Err(Error::config(
                "link",
                format!("unknown link `{other}` (expected step, exp, cubic or linear)"),
            )),
        }
    }
}

impl std::fmt::Display for Link {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// All generative constants of the scenario.
///
/// Treatments are indexed `0..m` in code; files and the CLI use `1..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    /// Proxy loadings, one per proxy coordinate.
    pub alpha: Vec<f64>,
    pub alpha0: f64,
    /// Proxy noise variance per coordinate.
    pub sigma2_x: f64,
    /// Per-treatment latent coefficient of the assignment logits.
    pub beta: Vec<f64>,
    pub beta0: Vec<f64>,
    /// Per-treatment latent coefficient of the outcome index.
    pub zeta: Vec<f64>,
    pub zeta0: Vec<f64>,
    /// Outcome-index noise variance.
    pub sigma2_y: f64,
    pub link: Link,
    /// Target policy coefficients, `m` rows of length `q`.
    pub psi: Vec<Vec<f64>>,
}

pub const DEFAULT_ALPHA: [f64; 10] = [1.0, -2.0, -1.0, 2.0, 4.0, 0.0, -2.0, -1.0, -3.0, 1.0];
pub const DEFAULT_PSI0: [f64; 10] = [-0.1, 0.2, 0.2, -0.1, -0.1, -0.1, 0.1, 0.1, 0.1, -0.1];

impl Default for ScenarioParams {
    fn default() -> Self {
        let psi0 = DEFAULT_PSI0.to_vec();
        let psi1 = psi0.iter().map(|v| -v).collect();
        Self {
            alpha: DEFAULT_ALPHA.to_vec(),
            alpha0: 0.0,
            sigma2_x: 4.0,
            beta: vec![0.5, -0.5],
            beta0: vec![0.0, 0.0],
            zeta: vec![1.0, -0.5],
            zeta0: vec![0.0, 0.0],
            sigma2_y: 0.01,
            link: Link::Step,
            psi: vec![psi0, psi1],
        }
    }
}

impl ScenarioParams {
    pub fn with_link(mut self, link: Link) -> Self {
        self.link = link;
        self
    }

    pub fn n_treatments(&self) -> usize {
        self.beta.len()
    }

    pub fn proxy_dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.alpha.len();
        let m = self.beta.len();
        if q == 0 {
            return Err(Error::config("alpha", "proxy dimension must be at least 1"));
        }
        if m == 0 {
            return Err(Error::config("beta", "at least one treatment is required"));
        }
        if !(self.sigma2_x > 0.0 && self.sigma2_x.is_finite()) {
            return Err(Error::config("sigma2_x", "must be positive and finite"));
        }
        if !(self.sigma2_y > 0.0 && self.sigma2_y.is_finite()) {
            return Err(Error::config("sigma2_y", "must be positive and finite"));
        }
        for (key, len) in [
            ("beta0", self.beta0.len()),
            ("zeta", self.zeta.len()),
            ("zeta0", self.zeta0.len()),
            ("psi", self.psi.len()),
        ] {
            if len != m {
                return Err(Error::config(
                    key,
                    format!("expected {m} entries (one per treatment), got {len}"),
                ));
            }
        }
        if let Some(row) = self.psi.iter().find(|r| r.len() != q) {
            return Err(Error::config(
                "psi",
                format!("each row needs {q} coefficients, got {}", row.len()),
            ));
        }
        let all = self
            .alpha
            .iter()
            .chain(&self.beta)
            .chain(&self.beta0)
            .chain(&self.zeta)
            .chain(&self.zeta0)
            .chain(self.psi.iter().flatten())
            .chain([&self.alpha0]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::config("scenario", "all coefficients must be finite"));
        }
        Ok(())
    }

    pub fn policy(&self) -> SoftmaxPolicy {
        SoftmaxPolicy::new(self.psi.clone())
    }
}

/// `π_t(x) ∝ exp(ψ_tᵀ x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    pub psi: Vec<Vec<f64>>,
}

impl SoftmaxPolicy {
    pub fn new(psi: Vec<Vec<f64>>) -> Self {
        Self { psi }
    }

    /// The policy that assigns every treatment with equal probability.
    pub fn uniform(m: usize, q: usize) -> Self {
        Self::new(vec![vec![0.0; q]; m])
    }

    pub fn n_treatments(&self) -> usize {
        self.psi.len()
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .psi
            .iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        softmax(&logits)
    }

    /// `n × m` matrix of action probabilities.
    pub fn prob_matrix(&self, x: &Points) -> faer::Mat<f64> {
        let m = self.n_treatments();
        let mut out = faer::Mat::zeros(x.len(), m);
        for (i, row) in x.rows().enumerate() {
            for (t, p) in self.probs(row).into_iter().enumerate() {
                out[(i, t)] = p;
            }
        }
        out
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Logged bandit data. `t` is zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    pub x: Points,
    pub t: Vec<usize>,
    pub y: Vec<f64>,
    /// True latent values, kept for debugging only. Estimators never read it.
    pub z_true: Option<Vec<f64>>,
}

impl LoggedDataset {
    pub fn new(x: Points, t: Vec<usize>, y: Vec<f64>) -> Result<Self> {
        if t.len() != x.len() {
            return Err(Error::Dimension {
                context: "dataset treatments",
                expected: x.len(),
                actual: t.len(),
            });
        }
        if y.len() != x.len() {
            return Err(Error::Dimension {
                context: "dataset outcomes",
                expected: x.len(),
                actual: y.len(),
            });
        }
        Ok(Self {
            x,
            t,
            y,
            z_true: None,
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn without_latent(mut self) -> Self {
        self.z_true = None;
        self
    }

    /// Writes `x1..xq,t,y[,z]` with one-based treatment labels.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let q = self.x.dim();
        let mut header: Vec<String> = (1..=q).map(|k| format!("x{k}")).collect();
        header.push("t".into());
        header.push("y".into());
        if self.z_true.is_some() {
            header.push("z".into());
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            rec.push((self.t[i] + 1).to_string());
            rec.push(self.y[i].to_string());
            if let Some(z) = &self.z_true {
                rec.push(z[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws `n` iid units from the scenario.
pub fn draw_dataset<R: Rng + ?Sized>(
    params: &ScenarioParams,
    n: usize,
    rng: &mut R,
) -> Result<LoggedDataset> {
    params.validate()?;
    if n == 0 {
        return Err(Error::config("n", "sample size must be at least 1"));
    }
    let q = params.proxy_dim();
    let sd_x = params.sigma2_x.sqrt();
    let sd_y = params.sigma2_y.sqrt();
    let mut x = Vec::with_capacity(n * q);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut z_true = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        for &a in &params.alpha {
            let e: f64 = rng.sample(StandardNormal);
            x.push(a * z + params.alpha0 + sd_x * e);
        }
        let probs = crate::posterior::propensities_latent(z, params);
        let u: f64 = rng.random();
        let treatment = sample_categorical(&probs, u);
        let e: f64 = rng.sample(StandardNormal);
        let s = params.zeta[treatment] * z + params.zeta0[treatment] + sd_y * e;
        t.push(treatment);
        y.push(params.link.apply(s));
        z_true.push(z);
    }
    Ok(LoggedDataset {
        x: Points::new(q, x),
        t,
        y,
        z_true: Some(z_true),
    })
}

pub(crate) fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// `μ_t(z) = E[g(ζ(t) z + ζ0(t) + σ_Y ε)]` in closed form.
pub fn mu_analytic(t: usize, z: f64, params: &ScenarioParams) -> f64 {
    let s = params.zeta[t] * z + params.zeta0[t];
    let var = params.sigma2_y;
    match params.link {
        Link::Step => 3.0 * normal_cdf(s / var.sqrt()) - 6.0,
        Link::Exp => (s + 0.5 * var).exp(),
        Link::Cubic => s * s * s + 3.0 * s * var,
        Link::Linear => s,
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyValue {
    pub tau: f64,
    pub se: f64,
    pub samples: usize,
}

pub const MIN_ORACLE_SAMPLES: usize = 10_000;

/// Ground-truth policy value `E[Σ_t π_t(X) μ_t(Z)]` by Monte Carlo over
/// `(Z, X)`, with the outcome noise integrated out analytically.
pub fn true_policy_value<R: Rng + ?Sized>(
    params: &ScenarioParams,
    policy: &SoftmaxPolicy,
    samples: usize,
    rng: &mut R,
) -> Result<PolicyValue> {
    params.validate()?;
    if samples < MIN_ORACLE_SAMPLES {
        return Err(Error::config(
            "oracle_samples",
            format!("need at least {MIN_ORACLE_SAMPLES} samples, got {samples}"),
        ));
    }
    if policy.n_treatments() != params.n_treatments() {
        return Err(Error::Dimension {
            context: "policy treatments",
            expected: params.n_treatments(),
            actual: policy.n_treatments(),
        });
    }
    let sd_x = params.sigma2_x.sqrt();
    let mut x = vec![0.0; params.proxy_dim()];
    // Welford accumulation keeps the variance stable at 10^6+ samples.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..samples {
        let z: f64 = rng.sample(StandardNormal);
        for (xi, &a) in x.iter_mut().zip(&params.alpha) {
            let e: f64 = rng.sample(StandardNormal);
            *xi = a * z + params.alpha0 + sd_x * e;
        }
        let value: f64 = policy
            .probs(&x)
            .iter()
            .enumerate()
            .map(|(t, p)| p * mu_analytic(t, z, params))
            .sum();
        let delta = value - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (value - mean);
    }
    let var = m2 / (samples - 1) as f64;
    Ok(PolicyValue {
        tau: mean,
        se: (var / samples as f64).sqrt(),
        samples,
    })
}
