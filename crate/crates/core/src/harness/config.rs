//! Flat `key = value` experiment configuration.
//!
//! One assignment per line; `#` starts a comment; lists are comma separated.
//! Every key is optional and unknown keys are rejected. Treatment-indexed
//! policy rows are `psi1`, `psi2`, … (one-based).
//!
//! ```text
//! link = step
//! n = 500, 2000
//! reps = 64
//! gamma = 0.001, 0.2, 1.0, 5.0
//! methods = optz, optx, ips, dirx
//! seed = 2024
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimators::RidgeChoice;
use crate::scenario::ScenarioParams;

/// Estimators the harness can run. Names are the `method` column values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Balancing on the latent posterior.
    OptZ,
    /// Balancing on the latent posterior with simplex-constrained weights.
    OptZSimplex,
    /// Balancing on the observed proxies.
    OptX,
    OptXSimplex,
    /// Inverse propensity weights on the proxies.
    Ips,
    /// Self-normalized inverse propensity weights.
    IpsSn,
    /// Outcome regression on the proxies.
    DirX,
    /// Outcome regression on posterior draws of the latent.
    DirZ,
    /// Oracle unbiased weights from the true latent model.
    LatentOracle,
    /// Unit weights, i.e. the mean outcome.
    Mean,
}

pub const ALL_METHODS: [Method; 10] = [
    Method::OptZ,
    Method::OptZSimplex,
    Method::OptX,
    Method::OptXSimplex,
    Method::Ips,
    Method::IpsSn,
    Method::DirX,
    Method::DirZ,
    Method::LatentOracle,
    Method::Mean,
];

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::OptZ => "optz",
            Method::OptZSimplex => "optz-simplex",
            Method::OptX => "optx",
            Method::OptXSimplex => "optx-simplex",
            Method::Ips => "ips",
            Method::IpsSn => "ips-sn",
            Method::DirX => "dirx",
            Method::DirZ => "dirz",
            Method::LatentOracle => "latent-oracle",
            Method::Mean => "mean",
        }
    }

    /// Methods swept over the γ grid.
    pub fn uses_gamma(self) -> bool {
        matches!(
            self,
            Method::OptZ | Method::OptZSimplex | Method::OptX | Method::OptXSimplex
        )
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_METHODS
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("methods", format!("unknown method `{s}`")))
    }
}

/// How the latent Gram matrix is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramMode {
    /// `B` posterior draws per unit.
    Sampled,
    /// Exact quadrature on the shared grid.
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Median pairwise distance.
    Median,
    /// Median of per-coordinate median distances (proxies only).
    CoordinateMedian,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaMode {
    Oracle,
    Logit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioParams,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub gammas: Vec<f64>,
    pub methods: Vec<Method>,
    /// Posterior draws per unit for the sampled Gram.
    pub draws: usize,
    pub gram: GramMode,
    pub grid_size: usize,
    pub bandwidth: Bandwidth,
    pub optx_bandwidth: Bandwidth,
    pub eta_source: EtaMode,
    pub logit_penalty: f64,
    pub dirx_ridge: RidgeChoice,
    pub dirz_fit_draws: usize,
    pub dirz_infer_draws: usize,
    pub master_seed: u64,
    pub oracle_samples: usize,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioParams::default(),
            n_grid: vec![200, 500, 1000, 2000],
            reps: 64,
            gammas: vec![0.001, 0.2, 1.0, 5.0],
            methods: vec![
                Method::OptZ,
                Method::OptX,
                Method::Ips,
                Method::IpsSn,
                Method::DirX,
                Method::DirZ,
            ],
            draws: 50,
            gram: GramMode::Sampled,
            grid_size: 257,
            bandwidth: Bandwidth::Median,
            optx_bandwidth: Bandwidth::Median,
            eta_source: EtaMode::Oracle,
            logit_penalty: 1e-2,
            dirx_ridge: RidgeChoice::CrossValidated,
            dirz_fit_draws: 25,
            dirz_infer_draws: 200,
            master_seed: 2024,
            oracle_samples: 1_000_000,
            out_dir: PathBuf::from("results"),
            threads: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{}`", raw.trim())))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    let out = raw
        .split(',')
        .map(|s| parse_num(key, s))
        .collect::<Result<Vec<T>>>()?;
    if out.is_empty() {
        return Err(Error::config(key, "empty list"));
    }
    Ok(out)
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::config(
            key,
            format!("expected true or false, got `{other}`"),
        )),
    }
}

fn parse_bandwidth(key: &str, raw: &str, allow_coordinate: bool) -> Result<Bandwidth> {
    match raw.trim() {
        "median" => Ok(Bandwidth::Median),
        "coordinate_median" if allow_coordinate => Ok(Bandwidth::CoordinateMedian),
        other => {
            let h: f64 = parse_num(key, other)?;
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::config(key, "bandwidth must be positive"));
            }
            Ok(Bandwidth::Fixed(h))
        }
    }
}

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn fmt_bandwidth(b: Bandwidth) -> String {
    match b {
        Bandwidth::Median => "median".into(),
        Bandwidth::CoordinateMedian => "coordinate_median".into(),
        Bandwidth::Fixed(h) => h.to_string(),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        let mut simplex = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    "config",
                    format!("line {}: expected `key = value`", lineno + 1),
                )
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "given more than once"));
            }
            cfg.set(key, value, &mut simplex)?;
        }
        if simplex {
            for (base, constrained) in [
                (Method::OptZ, Method::OptZSimplex),
                (Method::OptX, Method::OptXSimplex),
            ] {
                if cfg.methods.contains(&base) && !cfg.methods.contains(&constrained) {
                    cfg.methods.push(constrained);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, simplex: &mut bool) -> Result<()> {
        let s = &mut self.scenario;
        match key {
            "link" => s.link = value.parse()?,
            "alpha" => s.alpha = parse_list(key, value)?,
            "alpha0" => s.alpha0 = parse_num(key, value)?,
            "sigma2_x" => s.sigma2_x = parse_num(key, value)?,
            "beta" => s.beta = parse_list(key, value)?,
            "beta0" => s.beta0 = parse_list(key, value)?,
            "zeta" => s.zeta = parse_list(key, value)?,
            "zeta0" => s.zeta0 = parse_list(key, value)?,
            "sigma2_y" => s.sigma2_y = parse_num(key, value)?,
            "n" => self.n_grid = parse_list(key, value)?,
            "reps" => self.reps = parse_num(key, value)?,
            "gamma" => self.gammas = parse_list(key, value)?,
            "methods" => self.methods = parse_list(key, value)?,
            "draws" => self.draws = parse_num(key, value)?,
            "gram" => {
                self.gram = match value {
                    "sampled" => GramMode::Sampled,
                    "quadrature" => GramMode::Quadrature,
                    other => {
                        return Err(Error::config(
                            key,
                            format!("expected sampled or quadrature, got `{other}`"),
                        ))
                    }
                }
            }
            "grid_size" => self.grid_size = parse_num(key, value)?,
            "bandwidth" => self.bandwidth = parse_bandwidth(key, value, false)?,
            "optx_bandwidth" => self.optx_bandwidth = parse_bandwidth(key, value, true)?,
            "simplex" => *simplex = parse_bool(key, value)?,
            "eta_source" => {
                self.eta_source = match value {
                    "oracle" => EtaMode::Oracle,
                    "logit" => EtaMode::Logit,
                    other => {
                        return Err(Error::config(
                            key,
                            format!("expected oracle or logit, got `{other}`"),
                        ))
                    }
                }
            }
            "logit_penalty" => self.logit_penalty = parse_num(key, value)?,
            "dirx_ridge" => {
                self.dirx_ridge = match value {
                    "cv" => RidgeChoice::CrossValidated,
                    other => RidgeChoice::Scaled(parse_num(key, other)?),
                }
            }
            "dirz_fit_draws" => self.dirz_fit_draws = parse_num(key, value)?,
            "dirz_infer_draws" => self.dirz_infer_draws = parse_num(key, value)?,
            "seed" => self.master_seed = parse_num(key, value)?,
            "oracle_samples" => self.oracle_samples = parse_num(key, value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "threads" => self.threads = Some(parse_num(key, value)?),
            _ => {
                if let Some(idx) = key.strip_prefix("psi") {
                    let t: usize = parse_num(key, idx)?;
                    if t == 0 || t > s.psi.len() + 1 {
                        return Err(Error::config(key, "policy rows are numbered from psi1"));
                    }
                    let row = parse_list(key, value)?;
                    if t == s.psi.len() + 1 {
                        s.psi.push(row);
                    } else {
                        s.psi[t - 1] = row;
                    }
                } else {
                    return Err(Error::config(key, "unknown key"));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.n_grid.iter().any(|&n| n < 2) {
            return Err(Error::config("n", "sample sizes must be at least 2"));
        }
        if self.reps == 0 {
            return Err(Error::config("reps", "need at least one replication"));
        }
        if self.gammas.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::config("gamma", "values must be nonnegative"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods", "no methods selected"));
        }
        if self.draws == 0 {
            return Err(Error::config("draws", "must be at least 1"));
        }
        if self.grid_size < crate::posterior::MIN_GRID_SIZE {
            return Err(Error::config(
                "grid_size",
                format!("must be at least {}", crate::posterior::MIN_GRID_SIZE),
            ));
        }
        if self.dirz_fit_draws == 0 || self.dirz_infer_draws == 0 {
            return Err(Error::config(
                "dirz_fit_draws",
                "draw counts must be at least 1",
            ));
        }
        if self.oracle_samples < crate::scenario::MIN_ORACLE_SAMPLES {
            return Err(Error::config(
                "oracle_samples",
                format!("must be at least {}", crate::scenario::MIN_ORACLE_SAMPLES),
            ));
        }
        if self.logit_penalty.is_nan() || self.logit_penalty < 0.0 {
            return Err(Error::config("logit_penalty", "must be nonnegative"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be at least 1"));
        }
        Ok(())
    }

    /// Canonical text form. Parsing it yields an identical configuration.
    pub fn to_text(&self) -> String {
        let s = &self.scenario;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("link", s.link.to_string());
        line("alpha", fmt_list(&s.alpha));
        line("alpha0", s.alpha0.to_string());
        line("sigma2_x", s.sigma2_x.to_string());
        line("beta", fmt_list(&s.beta));
        line("beta0", fmt_list(&s.beta0));
        line("zeta", fmt_list(&s.zeta));
        line("zeta0", fmt_list(&s.zeta0));
        line("sigma2_y", s.sigma2_y.to_string());
        for (t, row) in s.psi.iter().enumerate() {
            line(&format!("psi{}", t + 1), fmt_list(row));
        }
        line("n", fmt_list(&self.n_grid));
        line("reps", self.reps.to_string());
        line("gamma", fmt_list(&self.gammas));
        let names: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        line("methods", names.join(", "));
        line("draws", self.draws.to_string());
        line(
            "gram",
            match self.gram {
                GramMode::Sampled => "sampled",
                GramMode::Quadrature => "quadrature",
            }
            .into(),
        );
        line("grid_size", self.grid_size.to_string());
        line("bandwidth", fmt_bandwidth(self.bandwidth));
        line("optx_bandwidth", fmt_bandwidth(self.optx_bandwidth));
        line(
            "eta_source",
            match self.eta_source {
                EtaMode::Oracle => "oracle",
                EtaMode::Logit => "logit",
            }
            .into(),
        );
        line("logit_penalty", self.logit_penalty.to_string());
        line(
            "dirx_ridge",
            match self.dirx_ridge {
                RidgeChoice::CrossValidated => "cv".into(),
                RidgeChoice::Scaled(f) => f.to_string(),
                RidgeChoice::Fixed(v) => v.to_string(),
            },
        );
        line("dirz_fit_draws", self.dirz_fit_draws.to_string());
        line("dirz_infer_draws", self.dirz_infer_draws.to_string());
        line("seed", self.master_seed.to_string());
        line("oracle_samples", self.oracle_samples.to_string());
        line("out", self.out_dir.display().to_string());
        if let Some(t) = self.threads {
            line("threads", t.to_string());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Link;

    #[test]
    fn empty_config_is_the_default() {
        assert_eq!(
            ExperimentConfig::parse("# nothing\n\n").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn parses_values_and_comments() {
        let cfg = ExperimentConfig::parse(
            "link = linear  # identity\nn = 100, 300\ngamma=0.5\nmethods = optz, ips\nsimplex = true\nseed = 9\nbeta = 0, 0\n",
        )
        .unwrap();
        assert_eq!(cfg.scenario.link, Link::Linear);
        assert_eq!(cfg.n_grid, vec![100, 300]);
        assert_eq!(cfg.gammas, vec![0.5]);
        assert_eq!(
            cfg.methods,
            vec![Method::OptZ, Method::Ips, Method::OptZSimplex]
        );
        assert_eq!(cfg.master_seed, 9);
        assert_eq!(cfg.scenario.beta, vec![0.0, 0.0]);
    }

    #[test]
    fn errors_name_the_key() {
        for (text, key) in [
            ("sigma2_x = -1", "sigma2_x"),
            ("reps = many", "reps"),
            ("bogus = 1", "bogus"),
            ("methods = optz, magic", "methods"),
            ("n = 10\nn = 20", "n"),
            ("beta = 1, 2, 3", "beta0"),
            ("psi3 = 1", "psi"),
            ("psi5 = 1", "psi5"),
            ("gram = exact", "gram"),
        ] {
            match ExperimentConfig::parse(text) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(ExperimentConfig::parse("just words").is_err());
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = ExperimentConfig::parse(
            "simplex = true\noptx_bandwidth = coordinate_median\ndirx_ridge = 0.0001\nthreads = 3",
        )
        .unwrap();
        cfg.scenario.alpha0 = 0.1 + 0.2;
        let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }
}
