//! Fast property checks at small sample sizes, run by `confbal selftest`.

use faer::Mat;
use rand::Rng;

use crate::balance::{
    adversarial_objective, brute_force_sup_j, build_qp, solve_simplex, solve_unconstrained,
    ScaleConvention,
};
use crate::error::Result;
use crate::estimators::{doubly_robust_estimate, weighted_estimate, ConstantOutcome};
use crate::harness::{run_experiment_with_workers, ExperimentConfig};
use crate::kernel::{estimate_gram_quadrature, GaussianKernel};
use crate::points::Points;
use crate::posterior::{eta_all, posterior_on_grid, BasePosterior, LatentGrid, LatentPosterior};
use crate::rng::{stream, streams};
use crate::scenario::{draw_dataset, LoggedDataset, ScenarioParams};
use crate::WeightVector;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<(bool, String)>;

const CHECKS: [(&str, Check); 9] = [
    ("policy rows are distributions", policy_simplex),
    ("dataset draws are deterministic", dataset_determinism),
    ("posteriors and propensities normalize", normalization),
    (
        "closed-form objective matches brute force",
        closed_form_oracle,
    ),
    ("solver KKT and nonnegativity", solver_certificates),
    ("argmin is scale invariant", scale_invariance),
    ("weight norm is monotone in gamma", gamma_monotonicity),
    ("estimators are linear and DR reduces", estimator_identities),
    (
        "results do not depend on worker count",
        parallel_determinism,
    ),
];

/// Runs every check; failures and errors are reported, never propagated.
pub fn run_selftest() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let (passed, detail) = match check() {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckOutcome {
                name,
                passed,
                detail,
            }
        })
        .collect()
}

struct Instance {
    params: ScenarioParams,
    data: LoggedDataset,
    posts: Vec<LatentPosterior>,
    policy: Mat<f64>,
}

fn instance(n: usize, seed: u64) -> Result<Instance> {
    let params = ScenarioParams::default();
    let data = draw_dataset(&params, n, &mut stream(seed, streams::DATA))?.without_latent();
    let bases = data
        .x
        .rows()
        .map(|x| BasePosterior::new(x, &params))
        .collect::<Result<Vec<_>>>()?;
    let grid = LatentGrid::covering(&bases, 64)?;
    let posts = data
        .x
        .rows()
        .zip(&data.t)
        .map(|(x, &t)| posterior_on_grid(x, t, &params, &grid))
        .collect::<Result<Vec<_>>>()?;
    let policy = params.policy().prob_matrix(&data.x);
    Ok(Instance {
        params,
        data,
        posts,
        policy,
    })
}

fn policy_simplex() -> Result<(bool, String)> {
    let params = ScenarioParams::default();
    let mut rng = stream(1, 0);
    let x = Points::new(
        10,
        (0..10_000).map(|_| rng.random_range(-8.0..8.0)).collect(),
    );
    let p = params.policy().prob_matrix(&x);
    let mut worst = 0.0f64;
    let mut positive = true;
    for i in 0..x.len() {
        worst = worst.max(((0..p.ncols()).map(|k| p[(i, k)]).sum::<f64>() - 1.0).abs());
        positive &= (0..p.ncols()).all(|k| p[(i, k)] > 0.0);
    }
    Ok((
        worst <= 1e-12 && positive,
        format!("max |Σπ − 1| = {worst:.1e}"),
    ))
}

fn dataset_determinism() -> Result<(bool, String)> {
    let params = ScenarioParams::default();
    let a = draw_dataset(&params, 200, &mut stream(5, streams::DATA))?;
    let b = draw_dataset(&params, 200, &mut stream(5, streams::DATA))?;
    let same = a.x.as_slice() == b.x.as_slice() && a.t == b.t && a.y == b.y;
    Ok((same, "n = 200".into()))
}

fn normalization() -> Result<(bool, String)> {
    let inst = instance(30, 2)?;
    let mass = inst
        .posts
        .iter()
        .map(|p| (p.masses().iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let eta = inst
        .data
        .x
        .rows()
        .map(|x| eta_all(x, &inst.params).map(|e| (e.iter().sum::<f64>() - 1.0).abs()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok((
        mass <= 1e-10 && eta <= 1e-8,
        format!("mass error {mass:.1e}, eta error {eta:.1e}"),
    ))
}

fn closed_form_oracle() -> Result<(bool, String)> {
    let kernel = GaussianKernel::new(0.9)?;
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let n = 3 + seed as usize % 6;
        let inst = instance(n, 100 + seed)?;
        let q = estimate_gram_quadrature(&inst.posts, &kernel)?;
        let qp = build_qp(&q, &inst.data.t, &inst.policy, 0.2)?;
        let mut rng = stream(seed, 7);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..3.0)).collect();
        let brute = brute_force_sup_j(&inst.posts, &kernel, &inst.data.t, &inst.policy, 0.2, &w)?;
        worst = worst.max((adversarial_objective(&qp, &w) - brute).abs());
    }
    Ok((
        worst <= 1e-6,
        format!("max gap {worst:.1e} over 10 instances"),
    ))
}

fn solver_certificates() -> Result<(bool, String)> {
    let inst = instance(60, 3)?;
    let q = estimate_gram_quadrature(&inst.posts, &GaussianKernel::new(0.9)?)?;
    let qp = build_qp(&q, &inst.data.t, &inst.policy, 0.2)?;
    let free = solve_unconstrained(&qp)?;
    let simplex = solve_simplex(&qp)?;
    let kkt = free.diagnostics.kkt_residual;
    let qmin = free
        .objective
        .unwrap_or(f64::NAN)
        .min(simplex.objective.unwrap_or(f64::NAN));
    let ok = kkt <= 1e-8 && qmin >= -1e-8 && simplex.min() >= 0.0;
    Ok((ok, format!("kkt {kkt:.1e}, min q {qmin:.3e}")))
}

fn scale_invariance() -> Result<(bool, String)> {
    let inst = instance(40, 4)?;
    let q = estimate_gram_quadrature(&inst.posts, &GaussianKernel::new(0.9)?)?;
    let qp = build_qp(&q, &inst.data.t, &inst.policy, 0.2)?;
    let a = solve_unconstrained(&qp)?;
    let b = solve_unconstrained(&qp.rescaled(ScaleConvention::Normalized))?;
    let gap =
        a.w.iter()
            .zip(&b.w)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
    Ok((gap <= 1e-9, format!("max |ΔW| = {gap:.1e}")))
}

fn gamma_monotonicity() -> Result<(bool, String)> {
    let inst = instance(50, 5)?;
    let q = estimate_gram_quadrature(&inst.posts, &GaussianKernel::new(0.9)?)?;
    let norms = [0.001, 0.2, 1.0, 5.0]
        .iter()
        .map(|&g| Ok(solve_unconstrained(&build_qp(&q, &inst.data.t, &inst.policy, g)?)?.norm2()))
        .collect::<Result<Vec<_>>>()?;
    let ok = norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    Ok((ok, format!("norms {norms:.3?}")))
}

fn estimator_identities() -> Result<(bool, String)> {
    let inst = instance(50, 6)?;
    let mut rng = stream(6, 9);
    let n = inst.data.len();
    let draw = |rng: &mut crate::rng::Stream| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    };
    let (w1, w2, y1, y2) = (
        draw(&mut rng),
        draw(&mut rng),
        draw(&mut rng),
        draw(&mut rng),
    );
    let est = |w: &[f64], y: &[f64]| {
        weighted_estimate(&WeightVector::new(w.to_vec(), "probe"), y).map(|r| r.tau_hat)
    };
    let sum_y: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| 2.0 * a - b).collect();
    let sum_w: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + 3.0 * b).collect();
    let lin_y = (est(&w1, &sum_y)? - 2.0 * est(&w1, &y1)? + est(&w1, &y2)?).abs();
    let lin_w = (est(&sum_w, &y1)? - est(&w1, &y1)? - 3.0 * est(&w2, &y1)?).abs();

    let zero = ConstantOutcome {
        values: vec![0.0; inst.params.n_treatments()],
    };
    let w = WeightVector::new(w1.clone(), "probe");
    let dr0 =
        doubly_robust_estimate(&w, &zero, &inst.policy, &inst.data.x, &inst.data.t, &y1)?.tau_hat;
    let red_rho = (dr0 - est(&w1, &y1)?).abs();
    let c = ConstantOutcome {
        values: vec![1.5, -0.5],
    };
    let dr_w0 = doubly_robust_estimate(
        &WeightVector::new(vec![0.0; n], "zero"),
        &c,
        &inst.policy,
        &inst.data.x,
        &inst.data.t,
        &y1,
    )?
    .tau_hat;
    let direct = (0..n)
        .map(|i| 1.5 * inst.policy[(i, 0)] - 0.5 * inst.policy[(i, 1)])
        .sum::<f64>()
        / n as f64;
    let red_w = (dr_w0 - direct).abs();
    let worst = lin_y.max(lin_w).max(red_rho).max(red_w);
    Ok((worst <= 1e-12, format!("max deviation {worst:.1e}")))
}

fn parallel_determinism() -> Result<(bool, String)> {
    let cfg = ExperimentConfig::parse(
        "n = 40\nreps = 4\ngamma = 0.2\nmethods = optz, ips, dirx\ndraws = 10\n\
         grid_size = 64\noracle_samples = 10000\nseed = 3\n",
    )?;
    let one = run_experiment_with_workers(&cfg, 1)?;
    let four = run_experiment_with_workers(&cfg, 4)?;
    Ok((
        one.rows == four.rows && one.aggregate == four.aggregate,
        "1 vs 4 workers".into(),
    ))
}
