//! Monte-Carlo studies and single-dataset estimation behind the command-line front-end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::asymptotics::{confidence_intervals, sigma_w, sigma_w_adjusted, FourthMomentMatrix};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimationResult, EstimatorKind, MinimizeOptions, ParamSpace};
use crate::levy::{stream, stream_rng, LevySpec, NigParams};
use crate::path::SamplePath;
use crate::simulate::{euler_maruyama, exact_gaussian_sample_replicate, SimulationConfig};
use crate::zoo::ModelFamily;

/// Smallest sample size a study accepts.
pub const MIN_SAMPLE_SIZE: usize = 16;
/// Largest tolerated share of failed replicates per (estimator, n) cell.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

/// How study paths are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Simulator {
    /// Euler–Maruyama on the continuous system, started at zero.
    Euler,
    /// Exact draws of the sampled recursion started in stationarity; Brownian drivers only.
    Exact,
}

impl FromStr for Simulator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euler" | "euler_maruyama" => Ok(Simulator::Euler),
            "exact" => Ok(Simulator::Exact),
            other => Err(Error::Config(format!("unknown simulator `{other}` (expected euler or exact)"))),
        }
    }
}

/// Everything a study run needs.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub family: ModelFamily,
    pub theta0: Vec<f64>,
    pub driver: LevySpec,
    pub delta: f64,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub estimators: Vec<EstimatorKind>,
    pub seed: u64,
    pub output_path: Option<PathBuf>,
    pub simulator: Simulator,
    pub euler_step: f64,
    /// Simulated time discarded before the first observation.
    pub burn_in: f64,
    /// Half-width of the uniform perturbation of `θ₀` used as the optimizer start.
    pub start_radius: f64,
    pub optimizer: MinimizeOptions,
}

impl StudyConfig {
    /// Defaults for a family: reference parameter, Brownian driver, `Δ = 1`, sizes 500/2000/5000,
    /// 500 replicates, Whittle only.
    pub fn new(family: ModelFamily) -> Result<Self> {
        let theta0 = family.default_theta0();
        Ok(Self {
            driver: family.brownian_driver(&theta0)?,
            family,
            theta0,
            delta: 1.0,
            sample_sizes: vec![500, 2000, 5000],
            replicates: 500,
            estimators: vec![EstimatorKind::Whittle],
            seed: 1,
            output_path: None,
            simulator: Simulator::Euler,
            euler_step: SimulationConfig::DEFAULT_EULER_STEP,
            burn_in: 0.0,
            start_radius: 0.25,
            optimizer: study_optimizer(),
        })
    }

    pub fn space(&self) -> Result<ParamSpace<f64>> {
        self.family.param_space(self.delta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.sample_sizes.is_empty() {
            return Err(Error::Config("no sample sizes given".into()));
        }
        if let Some(n) = self.sample_sizes.iter().find(|&&n| n < MIN_SAMPLE_SIZE) {
            return Err(Error::Config(format!("sample size {n} is below the minimum {MIN_SAMPLE_SIZE}")));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators given".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("sampling distance must be positive, got {}", self.delta)));
        }
        if !(self.start_radius >= 0.0) || !(self.burn_in >= 0.0) {
            return Err(Error::Config("start radius and burn-in must be non-negative".into()));
        }
        let space = self.space()?;
        if !space.contains(&self.theta0) {
            return Err(Error::Config(format!(
                "theta0 {:?} is outside the {} parameter box",
                self.theta0, self.family
            )));
        }
        let model = space.model(&self.theta0)?;
        model.check(self.delta).into_result()?;
        if self.driver.dim() != model.driver_dim() {
            return Err(Error::Config(format!(
                "driver has dimension {}, {} needs {}",
                self.driver.dim(),
                self.family,
                model.driver_dim()
            )));
        }
        if self.simulator == Simulator::Exact && !self.driver.is_gaussian() {
            return Err(Error::Config("the exact simulator needs a Brownian driver".into()));
        }
        if self.estimators.contains(&EstimatorKind::AdjustedWhittle) && model.output_dim() != 1 {
            return Err(Error::Config(format!("adjusted Whittle needs a univariate family, {} is not", self.family)));
        }
        Ok(())
    }

    /// Parses the flat `key = value` format; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_key_values(text)?;
        let family: ModelFamily = entries
            .get("family")
            .ok_or_else(|| Error::Config("missing required key `family`".into()))?
            .parse()
            .map_err(|e: Error| Error::Config(e.to_string()))?;
        let mut cfg = Self::new(family)?;
        let mut driver = String::from("brownian");
        let mut nig = NigOverrides::default();
        for (key, value) in &entries {
            match key.as_str() {
                "family" => {}
                "theta0" => cfg.theta0 = parse_list(value, key)?,
                "driver" => driver = value.trim().to_ascii_lowercase(),
                "delta" => cfg.delta = parse_scalar(value, key)?,
                "sample_sizes" => cfg.sample_sizes = parse_list(value, key)?,
                "replicates" => cfg.replicates = parse_scalar(value, key)?,
                "estimators" => {
                    cfg.estimators = split_list(value)
                        .iter()
                        .map(|s| s.parse().map_err(|e: Error| Error::Config(e.to_string())))
                        .collect::<Result<_>>()?
                }
                "seed" => cfg.seed = parse_scalar(value, key)?,
                "output" | "output_path" => cfg.output_path = Some(PathBuf::from(value.trim())),
                "simulator" => cfg.simulator = value.parse()?,
                "euler_step" => cfg.euler_step = parse_scalar(value, key)?,
                "burn_in" => cfg.burn_in = parse_scalar(value, key)?,
                "start_radius" => cfg.start_radius = parse_scalar(value, key)?,
                "multistarts" => cfg.optimizer.multistarts = parse_scalar(value, key)?,
                "tol" => cfg.optimizer.tol = parse_scalar(value, key)?,
                "max_evals" => cfg.optimizer.max_evals = parse_scalar(value, key)?,
                "nig_alpha" => nig.alpha = Some(parse_scalar(value, key)?),
                "nig_beta" => nig.beta = Some(parse_list(value, key)?),
                "nig_delta" => nig.delta = Some(parse_scalar(value, key)?),
                "nig_shape" => nig.shape = Some(parse_list(value, key)?),
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        cfg.driver = driver_for(family, &cfg.theta0, &driver, &nig)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Optimizer settings used by studies: three starts and a looser tolerance than the library default.
pub fn study_optimizer() -> MinimizeOptions {
    MinimizeOptions { multistarts: 3, tol: 1e-8, max_evals: 5000, ..MinimizeOptions::default() }
}

#[derive(Debug, Default)]
struct NigOverrides {
    alpha: Option<f64>,
    beta: Option<Vec<f64>>,
    delta: Option<f64>,
    shape: Option<Vec<f64>>,
}

/// Driver named `kind` for the family at `theta0`.
///
/// Without overrides the NIG driver is the family default when `theta0` is the reference
/// parameter, otherwise `α = 3`, `β = 1`, `δ = 1` with the covariance matched to `Σ_L(θ₀)`.
fn driver_for(family: ModelFamily, theta0: &[f64], kind: &str, nig: &NigOverrides) -> Result<LevySpec> {
    match kind {
        "brownian" | "gaussian" => family.brownian_driver(theta0),
        "nig" => {
            let d = family.dims().2;
            if let Some(shape) = &nig.shape {
                if shape.len() != d * d {
                    return Err(Error::Config(format!("nig_shape needs {} entries", d * d)));
                }
                let beta = nig.beta.clone().unwrap_or_else(|| vec![1.0; d]);
                if beta.len() != d {
                    return Err(Error::Config(format!("nig_beta needs {d} entries")));
                }
                return Ok(LevySpec::nig(NigParams::new(
                    nig.alpha.unwrap_or(3.0),
                    DVector::from_vec(beta),
                    nig.delta.unwrap_or(1.0),
                    DMatrix::from_row_slice(d, d, shape),
                )?));
            }
            if nig.alpha.is_none()
                && nig.beta.is_none()
                && nig.delta.is_none()
                && theta0 == family.default_theta0().as_slice()
            {
                return Ok(LevySpec::nig(family.default_nig()?));
            }
            let target = family.build::<f64>(theta0)?.sigma_l;
            let beta = nig.beta.clone().unwrap_or_else(|| vec![1.0; d]);
            if beta.len() != d {
                return Err(Error::Config(format!("nig_beta needs {d} entries")));
            }
            Ok(LevySpec::nig(NigParams::matching_covariance(
                nig.alpha.unwrap_or(3.0),
                DVector::from_vec(beta),
                nig.delta.unwrap_or(1.0),
                &target,
            )?))
        }
        other => Err(Error::Config(format!("unknown driver `{other}` (expected brownian or nig)"))),
    }
}

fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let key = key.trim().to_ascii_lowercase();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
        }
    }
    Ok(out)
}

fn split_list(value: &str) -> Vec<String> {
    let inner = value.trim().trim_start_matches('[').trim_end_matches(']');
    inner.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

fn parse_scalar<V: FromStr>(value: &str, key: &str) -> Result<V> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<V: FromStr>(value: &str, key: &str) -> Result<Vec<V>> {
    split_list(value).iter().map(|s| parse_scalar(s, key)).collect()
}

/// One row of a study report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub estimator: EstimatorKind,
    pub n: usize,
    /// 1-based parameter index.
    pub param_index: usize,
    pub theta0: f64,
    pub mean: f64,
    /// `|mean − θ₀|`.
    pub bias: f64,
    pub std: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub rows: Vec<ReportRow>,
    pub replicates: usize,
}

pub const REPORT_HEADER: &str = "estimator,n,param_index,theta0,mean,bias,std,failures";

impl StudyReport {
    pub fn rows_for(&self, estimator: EstimatorKind, n: usize) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| r.estimator == estimator && r.n == n).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.10},{:.10},{:.10},{}",
                r.estimator, r.n, r.param_index, r.theta0, r.mean, r.bias, r.std, r.failures
            );
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Path for replicate `replicate` of a study, `n` observations long.
pub fn simulate_replicate(cfg: &StudyConfig, n: usize, replicate: u64) -> Result<SamplePath<f64>> {
    let model = cfg.space()?.model(&cfg.theta0)?;
    match cfg.simulator {
        Simulator::Euler => {
            let sim = SimulationConfig {
                delta: cfg.delta,
                euler_step: cfg.euler_step,
                horizon: cfg.delta * n as f64,
                seed: cfg.seed,
                burn_in: cfg.burn_in,
                replicate,
            };
            euler_maruyama(&model, &cfg.driver, &sim)
        }
        Simulator::Exact => {
            exact_gaussian_sample_replicate(&model, &cfg.driver.covariance(), cfg.delta, n, cfg.seed, replicate)
        }
    }
}

/// Optimizer start for a replicate: `θ₀` plus independent uniform noise, clamped into the box.
pub fn replicate_start(cfg: &StudyConfig, space: &ParamSpace<f64>, replicate: u64) -> Vec<f64> {
    let mut rng = stream_rng(cfg.seed, replicate, stream::STARTS);
    let r = cfg.start_radius;
    let raw: Vec<f64> = cfg.theta0.iter().map(|t| if r > 0.0 { t + rng.random_range(-r..=r) } else { *t }).collect();
    space.project(&raw)
}

type CellKey = (EstimatorKind, usize);

/// Estimates of one replicate, keyed by `(estimator, n)`; `None` marks a failure.
fn run_replicate(cfg: &StudyConfig, space: &ParamSpace<f64>, replicate: u64) -> Vec<(CellKey, Option<Vec<f64>>)> {
    let n_max = *cfg.sample_sizes.iter().max().expect("validated");
    let path = simulate_replicate(cfg, n_max, replicate);
    let start = replicate_start(cfg, space, replicate);
    let opts =
        MinimizeOptions { seed: cfg.seed ^ replicate.wrapping_mul(0x9E37_79B9_7F4A_7C15), ..cfg.optimizer.clone() };
    let mut out = Vec::new();
    for &n in &cfg.sample_sizes {
        for &kind in &cfg.estimators {
            let est = path
                .as_ref()
                .ok()
                .and_then(|p| p.truncated(n).ok())
                .and_then(|p| estimate(kind, &p, space, std::slice::from_ref(&start), &opts).ok())
                .filter(|r| r.objective_value.is_finite())
                .map(|r| r.theta_hat);
            out.push(((kind, n), est));
        }
    }
    out
}

/// Runs the study: one path per replicate at the largest size, prefixes for the smaller sizes,
/// each requested estimator on each prefix.
///
/// Replicates run on the rayon pool; aggregation happens in replicate order, so the report
/// does not depend on the number of threads. Fails when a cell loses more than 20% of its replicates.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let space = cfg.space()?;
    let per_rep: Vec<Vec<(CellKey, Option<Vec<f64>>)>> =
        (0..cfg.replicates as u64).into_par_iter().map(|r| run_replicate(cfg, &space, r)).collect();

    let mut rows = Vec::new();
    for &kind in &cfg.estimators {
        for &n in &cfg.sample_sizes {
            let estimates: Vec<&Vec<f64>> = per_rep
                .iter()
                .filter_map(|rep| rep.iter().find(|(k, _)| *k == (kind, n)).and_then(|(_, e)| e.as_ref()))
                .collect();
            let failures = cfg.replicates - estimates.len();
            if failures as f64 > MAX_FAILURE_SHARE * cfg.replicates as f64 || estimates.is_empty() {
                return Err(Error::StudyFailed { failed: failures, total: cfg.replicates });
            }
            for (i, &t0) in cfg.theta0.iter().enumerate() {
                let (mean, std) = mean_std(estimates.iter().map(|e| e[i]));
                rows.push(ReportRow {
                    estimator: kind,
                    n,
                    param_index: i + 1,
                    theta0: t0,
                    mean,
                    bias: (mean - t0).abs(),
                    std,
                    failures,
                });
            }
        }
    }
    let report = StudyReport { rows, replicates: cfg.replicates };
    if let Some(path) = &cfg.output_path {
        report.save_csv(path)?;
    }
    Ok(report)
}

/// Welford mean and sample standard deviation (zero for a single value).
fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut count, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for v in values {
        count += 1;
        let d = v - mean;
        mean += d / count as f64;
        m2 += d * (v - mean);
    }
    let std = if count > 1 { (m2 / (count - 1) as f64).sqrt() } else { 0.0 };
    (mean, std)
}

/// Estimate with analytic intervals.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub result: EstimationResult<f64>,
    /// Limit covariance at the estimate under a Gaussian driver.
    pub covariance: Option<DMatrix<f64>>,
    pub intervals: Option<Vec<(f64, f64)>>,
    /// Why intervals are missing, if they are.
    pub interval_error: Option<String>,
}

/// Estimates `family` from `path` and attaches `level` intervals.
///
/// Intervals use the Whittle limit covariance (adjusted form for the adjusted estimator)
/// evaluated at the estimate with a Gaussian driver; QMLE shares the Whittle covariance in that
/// case. Failures of the interval computation are reported, not raised.
pub fn estimate_once(
    path: &SamplePath<f64>,
    family: ModelFamily,
    kind: EstimatorKind,
    start: Option<&[f64]>,
    opts: &MinimizeOptions,
    level: f64,
) -> Result<EstimateReport> {
    let space = family.param_space(path.delta())?;
    let start = start.map(<[f64]>::to_vec).unwrap_or_else(|| family.default_theta0());
    if start.len() != space.dim() {
        return Err(Error::InvalidParameter(format!(
            "{family} takes {} parameters, start has {}",
            space.dim(),
            start.len()
        )));
    }
    let result = estimate(kind, path, &space, &[start], opts)?;
    let cov = space.sampled(&result.theta_hat).and_then(|sm| {
        let fm = FourthMomentMatrix::gaussian(sm.sigma_n());
        match kind {
            EstimatorKind::AdjustedWhittle => sigma_w_adjusted(&space, &result.theta_hat, &fm),
            _ => sigma_w(&space, &result.theta_hat, &fm),
        }
    });
    let (covariance, intervals, interval_error) = match cov {
        Ok(c) => {
            let ci = confidence_intervals(&result.theta_hat, &c.sigma_w, path.len(), level)?;
            (Some(c.sigma_w), Some(ci), None)
        }
        Err(e) => (None, None, Some(e.to_string())),
    };
    Ok(EstimateReport { result, covariance, intervals, interval_error })
}
