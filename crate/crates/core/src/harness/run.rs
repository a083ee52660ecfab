//! Seeded replications and their parallel execution.

use std::time::{Duration, Instant};

use faer::Mat;
use rayon::prelude::*;

use super::aggregate::{aggregate, AggregateRow, ReplicationRow};
use super::config::{Bandwidth, EtaMode, ExperimentConfig, GramMode, Method};
use crate::balance::{build_qp, solve_simplex, solve_unconstrained, Constraint};
use crate::error::{Error, Result};
use crate::estimators::{
    direct_estimate, fit_dirx, fit_dirz, ips_weights, oracle_latent_weights,
    self_normalized_estimate, weighted_estimate, DirzOptions, EtaSource,
};
use crate::kernel::{
    coordinate_median_heuristic, estimate_gram_quadrature, estimate_gram_sampled, gram_observed,
    median_heuristic, median_heuristic_scalar, posterior_median_heuristic, GaussianKernel,
    GramEstimate,
};
use crate::points::Points;
use crate::posterior::{posterior_on_grid, posterior_sample, BasePosterior, LatentGrid};
use crate::rng::{mix, stream, streams};
use crate::scenario::{draw_dataset, true_policy_value, LoggedDataset, PolicyValue};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "CONFBAL_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct MethodEstimate {
    pub method: Method,
    pub gamma: Option<f64>,
    pub tau_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub rep: usize,
    pub n: usize,
    pub seed: u64,
    pub tau_true: f64,
    pub estimates: Vec<MethodEstimate>,
    pub wall_time: Duration,
}

/// Seed of replication `rep`.
pub fn replication_seed(master_seed: u64, rep: usize) -> u64 {
    mix(master_seed, rep as u64)
}

/// Ground-truth policy value, drawn from the experiment's oracle stream.
pub fn policy_value(cfg: &ExperimentConfig) -> Result<PolicyValue> {
    let mut rng = stream(cfg.master_seed, streams::ORACLE);
    true_policy_value(
        &cfg.scenario,
        &cfg.scenario.policy(),
        cfg.oracle_samples,
        &mut rng,
    )
}

fn latent_gram(cfg: &ExperimentConfig, data: &LoggedDataset, seed: u64) -> Result<GramEstimate> {
    let params = &cfg.scenario;
    let bases = data
        .x
        .rows()
        .map(|x| BasePosterior::new(x, params))
        .collect::<Result<Vec<_>>>()?;
    let grid = LatentGrid::covering(&bases, cfg.grid_size)?;
    let posts = data
        .x
        .rows()
        .zip(&data.t)
        .map(|(x, &t)| posterior_on_grid(x, t, params, &grid))
        .collect::<Result<Vec<_>>>()?;
    match cfg.gram {
        GramMode::Sampled => {
            let mut rng = stream(seed, streams::POSTERIOR);
            let mut draws = Vec::with_capacity(posts.len() * cfg.draws);
            for p in &posts {
                draws.extend(posterior_sample(p, cfg.draws, &mut rng));
            }
            let h = match cfg.bandwidth {
                Bandwidth::Fixed(h) => h,
                _ => median_heuristic_scalar(&draws)?,
            };
            estimate_gram_sampled(&Points::new(cfg.draws, draws), &GaussianKernel::new(h)?)
        }
        GramMode::Quadrature => {
            let h = match cfg.bandwidth {
                Bandwidth::Fixed(h) => h,
                _ => posterior_median_heuristic(&posts)?,
            };
            estimate_gram_quadrature(&posts, &GaussianKernel::new(h)?)
        }
    }
}

fn proxy_kernel(cfg: &ExperimentConfig, x: &Points) -> Result<GaussianKernel> {
    GaussianKernel::new(match cfg.optx_bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Median => median_heuristic(x)?,
        Bandwidth::CoordinateMedian => coordinate_median_heuristic(x)?,
    })
}

fn balance_sweep(
    cfg: &ExperimentConfig,
    gram: &GramEstimate,
    data: &LoggedDataset,
    policy: &Mat<f64>,
    free: Option<Method>,
    constrained: Option<Method>,
    out: &mut Vec<MethodEstimate>,
) -> Result<()> {
    for &gamma in &cfg.gammas {
        let qp = build_qp(gram, &data.t, policy, gamma)?;
        for (method, constraint) in [
            (free, Constraint::Unconstrained),
            (constrained, Constraint::Simplex),
        ] {
            let Some(method) = method else { continue };
            let w = match constraint {
                Constraint::Unconstrained => solve_unconstrained(&qp)?,
                Constraint::Simplex => solve_simplex(&qp)?,
            };
            out.push(MethodEstimate {
                method,
                gamma: Some(gamma),
                tau_hat: weighted_estimate(&w, &data.y)?.tau_hat,
            });
        }
    }
    Ok(())
}

fn has(cfg: &ExperimentConfig, m: Method) -> Option<Method> {
    cfg.methods.contains(&m).then_some(m)
}

fn run_methods(
    cfg: &ExperimentConfig,
    data: &LoggedDataset,
    seed: u64,
) -> Result<Vec<MethodEstimate>> {
    let params = &cfg.scenario;
    let policy = params.policy().prob_matrix(&data.x);
    let mut out = Vec::new();

    let (optz, optz_s) = (has(cfg, Method::OptZ), has(cfg, Method::OptZSimplex));
    if optz.is_some() || optz_s.is_some() {
        let gram = latent_gram(cfg, data, seed)?;
        balance_sweep(cfg, &gram, data, &policy, optz, optz_s, &mut out)?;
    }
    let (optx, optx_s) = (has(cfg, Method::OptX), has(cfg, Method::OptXSimplex));
    if optx.is_some() || optx_s.is_some() {
        let gram = gram_observed(&data.x, &proxy_kernel(cfg, &data.x)?);
        balance_sweep(cfg, &gram, data, &policy, optx, optx_s, &mut out)?;
    }
    if cfg.methods.contains(&Method::Ips) || cfg.methods.contains(&Method::IpsSn) {
        let source = match cfg.eta_source {
            EtaMode::Oracle => EtaSource::Oracle(params),
            EtaMode::Logit => EtaSource::FittedLogit {
                penalty: cfg.logit_penalty,
            },
        };
        let w = ips_weights(&data.x, &data.t, &policy, source)?;
        if cfg.methods.contains(&Method::Ips) {
            out.push(single(Method::Ips, weighted_estimate(&w, &data.y)?.tau_hat));
        }
        if cfg.methods.contains(&Method::IpsSn) {
            out.push(single(
                Method::IpsSn,
                self_normalized_estimate(&w, &data.y)?.tau_hat,
            ));
        }
    }
    if cfg.methods.contains(&Method::DirX) {
        let model = fit_dirx(data, params.n_treatments(), None, cfg.dirx_ridge)?;
        out.push(single(
            Method::DirX,
            direct_estimate(&model, &policy, &data.x)?.tau_hat,
        ));
    }
    if cfg.methods.contains(&Method::DirZ) {
        let opts = DirzOptions {
            fit_draws: cfg.dirz_fit_draws,
            infer_draws: cfg.dirz_infer_draws,
            bandwidth: match cfg.bandwidth {
                Bandwidth::Fixed(h) => Some(h),
                _ => None,
            },
            grid_size: cfg.grid_size,
            ..DirzOptions::default()
        };
        let model = fit_dirz(data, params, opts, seed)?;
        out.push(single(
            Method::DirZ,
            direct_estimate(&model, &policy, &data.x)?.tau_hat,
        ));
    }
    if cfg.methods.contains(&Method::LatentOracle) {
        let w = oracle_latent_weights(&data.x, &data.t, &policy, params)?;
        out.push(single(
            Method::LatentOracle,
            weighted_estimate(&w, &data.y)?.tau_hat,
        ));
    }
    if cfg.methods.contains(&Method::Mean) {
        let mean = data.y.iter().sum::<f64>() / data.len() as f64;
        out.push(single(Method::Mean, mean));
    }
    // Report in configuration order, γ ascending within a method.
    out.sort_by(|a, b| {
        let pos = |m: Method| cfg.methods.iter().position(|x| *x == m);
        pos(a.method)
            .cmp(&pos(b.method))
            .then(a.gamma.unwrap_or(0.0).total_cmp(&b.gamma.unwrap_or(0.0)))
    });
    Ok(out)
}

fn single(method: Method, tau_hat: f64) -> MethodEstimate {
    MethodEstimate {
        method,
        gamma: None,
        tau_hat,
    }
}

/// Draws one dataset of size `n` from replication `rep`'s seed and runs every
/// configured method on it. Depends only on `(cfg, n, rep)`.
pub fn run_replication(
    cfg: &ExperimentConfig,
    n: usize,
    rep: usize,
    tau_true: f64,
) -> Result<ReplicationResult> {
    let seed = replication_seed(cfg.master_seed, rep);
    let start = Instant::now();
    let result = draw_dataset(&cfg.scenario, n, &mut stream(seed, streams::DATA))
        .map(LoggedDataset::without_latent)
        .and_then(|data| run_methods(cfg, &data, seed));
    match result {
        Ok(estimates) => Ok(ReplicationResult {
            rep,
            n,
            seed,
            tau_true,
            estimates,
            wall_time: start.elapsed(),
        }),
        Err(e) => Err(Error::Replication {
            rep,
            n,
            seed,
            source: Box::new(e),
        }),
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub truth: PolicyValue,
    pub replications: Vec<ReplicationResult>,
    pub rows: Vec<ReplicationRow>,
    pub aggregate: Vec<AggregateRow>,
}

/// Worker count: the configured value (or all cores), capped by
/// `CONFBAL_THREADS` when set.
pub fn worker_count(cfg: &ExperimentConfig) -> usize {
    let base = cfg
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&v| v > 0);
    cap.map_or(base, |c| base.min(c)).max(1)
}

/// Runs every `(n, rep)` pair and aggregates. Results do not depend on the
/// number of workers.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_experiment_with_workers(cfg, worker_count(cfg))
}

pub fn run_experiment_with_workers(
    cfg: &ExperimentConfig,
    workers: usize,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let truth = policy_value(cfg)?;
    let jobs: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |r| (n, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<ReplicationResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(n, rep)| run_replication(cfg, n, rep, truth.tau))
            .collect()
    });
    let replications = results.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = rows_from(cfg, &replications);
    let aggregate = aggregate(&rows);
    Ok(ExperimentOutput {
        truth,
        replications,
        rows,
        aggregate,
    })
}

/// Flattens replication results into CSV records.
pub fn rows_from(cfg: &ExperimentConfig, reps: &[ReplicationResult]) -> Vec<ReplicationRow> {
    reps.iter()
        .flat_map(|r| {
            r.estimates.iter().map(move |e| ReplicationRow {
                method: e.method.name().to_string(),
                gamma: e.gamma,
                n: r.n,
                link: cfg.scenario.link.to_string(),
                rep: r.rep,
                seed: r.seed,
                tau_hat: e.tau_hat,
                tau_true: r.tau_true,
            })
        })
        .collect()
}
