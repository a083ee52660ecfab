use faer::Mat;

use super::OutcomeModel;
use crate::error::{Error, Result};
use crate::kernel::{
    median_heuristic, median_heuristic_scalar, GaussianKernel, KernelRidge, CV_RIDGE_FACTORS,
};
use crate::points::Points;
use crate::posterior::{
    posterior_on_grid, posterior_sample_indices, BasePosterior, LatentGrid, DEFAULT_GRID_SIZE,
};
use crate::rng::{mix, stream, streams};
use crate::scenario::{LoggedDataset, ScenarioParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RidgeChoice {
    Fixed(f64),
    /// `factor · n_train`.
    Scaled(f64),
    /// Five-fold cross-validation over `CV_RIDGE_FACTORS · n_train`.
    CrossValidated,
}

impl Default for RidgeChoice {
    fn default() -> Self {
        RidgeChoice::Scaled(1e-3)
    }
}

impl RidgeChoice {
    fn value(self, n_train: usize) -> Result<f64> {
        match self {
            RidgeChoice::Fixed(v) => Ok(v),
            RidgeChoice::Scaled(f) => Ok(f * n_train as f64),
            RidgeChoice::CrossValidated => Err(Error::config(
                "ridge",
                "cross-validation is only available for regression on proxies",
            )),
        }
    }
}

fn units_by_treatment(t: &[usize], m: usize) -> Result<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); m];
    for (i, &k) in t.iter().enumerate() {
        groups
            .get_mut(k)
            .ok_or_else(|| Error::config("treatment", format!("unit {i} out of range")))?
            .push(i);
    }
    if let Some(k) = groups.iter().position(Vec::is_empty) {
        return Err(Error::Numerical(format!(
            "no unit received treatment {}; cannot fit its outcome model",
            k + 1
        )));
    }
    Ok(groups)
}

/// Outcome regression on the proxies, one kernel ridge per treatment.
/// It treats `X` as if it were sufficient for ignorability.
#[derive(Debug, Clone)]
pub struct DirectX {
    pub models: Vec<KernelRidge>,
}

/// Fits `ρ̂_t` on `{i : T_i = t}`. Without a kernel, the bandwidth is the
/// median heuristic over all proxies.
pub fn fit_dirx(
    data: &LoggedDataset,
    m: usize,
    kernel: Option<GaussianKernel>,
    ridge: RidgeChoice,
) -> Result<DirectX> {
    let kernel = match kernel {
        Some(k) => k,
        None => GaussianKernel::new(median_heuristic(&data.x)?)?,
    };
    let groups = units_by_treatment(&data.t, m)?;
    let models = groups
        .iter()
        .map(|idx| {
            let x = data.x.select(idx);
            let y: Vec<f64> = idx.iter().map(|&i| data.y[i]).collect();
            match ridge {
                RidgeChoice::CrossValidated => {
                    KernelRidge::fit_cv(&x, &y, kernel, &CV_RIDGE_FACTORS)
                }
                other => KernelRidge::fit(&x, &y, kernel, other.value(idx.len())?),
            }
        })
        .collect::<Result<_>>()?;
    Ok(DirectX { models })
}

impl OutcomeModel for DirectX {
    fn predict(&self, x: &Points) -> Result<Mat<f64>> {
        let cols: Vec<Vec<f64>> = self.models.iter().map(|m| m.predict_many(x)).collect();
        Ok(Mat::from_fn(x.len(), cols.len(), |i, t| cols[t][i]))
    }

    fn name(&self) -> &str {
        "dirx"
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirzOptions {
    /// Posterior draws per unit used for fitting.
    pub fit_draws: usize,
    /// Posterior draws per unit averaged at prediction time.
    pub infer_draws: usize,
    pub bandwidth: Option<f64>,
    pub ridge: RidgeChoice,
    pub grid_size: usize,
    /// Upper bound on the shared grid, which otherwise grows as the
    /// posteriors sharpen.
    pub max_grid_nodes: usize,
}

impl Default for DirzOptions {
    fn default() -> Self {
        Self {
            fit_draws: 25,
            infer_draws: 200,
            bandwidth: None,
            ridge: RidgeChoice::default(),
            grid_size: DEFAULT_GRID_SIZE,
            max_grid_nodes: 2048,
        }
    }
}

/// Outcome regression on posterior draws of the latent: `μ̂_t(z)` is a kernel
/// ridge of `Y_i` on draws `Z_i^b ~ φ(·; X_i, T_i)` over units with
/// `T_i = t`, and `ρ̂_t(x)` averages `μ̂_t` over fresh draws from
/// `φ(·; x, t)`.
#[derive(Debug, Clone)]
pub struct DirectZ {
    pub models: Vec<KernelRidge>,
    pub bandwidth: f64,
    params: ScenarioParams,
    opts: DirzOptions,
    seed: u64,
}

fn shared_grid(x: &Points, params: &ScenarioParams, opts: &DirzOptions) -> Result<LatentGrid> {
    let bases = x
        .rows()
        .map(|row| BasePosterior::new(row, params))
        .collect::<Result<Vec<_>>>()?;
    LatentGrid::covering_capped(&bases, opts.grid_size, opts.max_grid_nodes)
}

pub fn fit_dirz(
    data: &LoggedDataset,
    params: &ScenarioParams,
    opts: DirzOptions,
    seed: u64,
) -> Result<DirectZ> {
    if opts.fit_draws == 0 || opts.infer_draws == 0 {
        return Err(Error::config(
            "dirz_draws",
            "draw counts must be at least 1",
        ));
    }
    let m = params.n_treatments();
    let groups = units_by_treatment(&data.t, m)?;
    let grid = shared_grid(&data.x, params, &opts)?;
    let mut rng = stream(seed, streams::DIRZ);
    let mut draws: Vec<Vec<f64>> = Vec::with_capacity(data.len());
    for (row, &k) in data.x.rows().zip(&data.t) {
        let post = posterior_on_grid(row, k, params, &grid)?;
        draws.push(
            posterior_sample_indices(&post, opts.fit_draws, &mut rng)
                .into_iter()
                .map(|g| grid.nodes()[g])
                .collect(),
        );
    }
    let bandwidth = match opts.bandwidth {
        Some(h) => h,
        None => median_heuristic_scalar(&draws.concat())?,
    };
    let kernel = GaussianKernel::new(bandwidth)?;
    let models = groups
        .iter()
        .map(|idx| {
            let mut z = Vec::with_capacity(idx.len() * opts.fit_draws);
            let mut y = Vec::with_capacity(idx.len() * opts.fit_draws);
            for &i in idx {
                z.extend(&draws[i]);
                y.extend(std::iter::repeat_n(data.y[i], opts.fit_draws));
            }
            KernelRidge::fit_grouped(&z, &y, kernel, opts.ridge.value(z.len())?)
        })
        .collect::<Result<_>>()?;
    Ok(DirectZ {
        models,
        bandwidth,
        params: params.clone(),
        opts,
        seed,
    })
}

impl OutcomeModel for DirectZ {
    fn predict(&self, x: &Points) -> Result<Mat<f64>> {
        let m = self.models.len();
        let grid = shared_grid(x, &self.params, &self.opts)?;
        let table: Vec<Vec<f64>> = self
            .models
            .iter()
            .map(|model| grid.nodes().iter().map(|z| model.predict(&[*z])).collect())
            .collect();
        let mut rng = stream(mix(self.seed, 1), streams::DIRZ);
        let mut out = Mat::zeros(x.len(), m);
        for (i, row) in x.rows().enumerate() {
            for t in 0..m {
                let post = posterior_on_grid(row, t, &self.params, &grid)?;
                let idx = posterior_sample_indices(&post, self.opts.infer_draws, &mut rng);
                out[(i, t)] = idx.iter().map(|&g| table[t][g]).sum::<f64>() / idx.len() as f64;
            }
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        "dirz"
    }
}
