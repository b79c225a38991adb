//! Limit covariances of the Whittle and adjusted Whittle estimators, the fourth-moment
//! correction for non-Gaussian drivers, integrated-periodogram variances and confidence intervals.
//!
//! Everything here works in `f64`: finite-difference gradients and Monte-Carlo moments have no
//! useful single-precision counterpart.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::ParamSpace;
use crate::levy::{stream, stream_rng, LevySpec};
use crate::linalg::{matrix_exp, min_sym_eig, sym};
use crate::sampled::{complexify, SampledModel};
use crate::scalar::cis;
use crate::spectral::spectral_density;

type C64 = Complex<f64>;
type CMat = DMatrix<C64>;

/// Default number of quadrature nodes on `[−π, π)`.
pub const QUADRATURE_NODES: usize = 4096;
/// Relative central-difference step: `h_i = FD_REL_STEP · max(1, |θ_i|)`.
pub const FD_REL_STEP: f64 = 1e-6;
/// Sub-steps per sampling interval in the Monte-Carlo fourth moment.
pub const FOURTH_MOMENT_STEPS: usize = 1000;
pub const MIN_MC_SAMPLES: usize = 10_000;
pub const DEFAULT_MC_SAMPLES: usize = 1_000_000;
/// Draws per independently seeded Monte-Carlo block.
const MC_BLOCK: usize = 1000;
/// Relative imaginary residual tolerated in real-valued integrands.
const IMAG_GUARD: f64 = 1e-8;
/// Minimum eigenvalue of the Hessian limit relative to its trace.
const PD_RATIO: f64 = 1e-12;

/// Quadrature and differencing settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticOptions {
    pub nodes: usize,
    pub rel_step: f64,
}

impl Default for AsymptoticOptions {
    fn default() -> Self {
        Self { nodes: QUADRATURE_NODES, rel_step: FD_REL_STEP }
    }
}

impl AsymptoticOptions {
    fn validate(&self) -> Result<()> {
        if self.nodes < 8 || !self.nodes.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!("quadrature needs an even node count ≥ 8, got {}", self.nodes)));
        }
        if !(self.rel_step > 0.0 && self.rel_step < 1e-2) {
            return Err(Error::InvalidInput(format!("finite-difference step {} out of range", self.rel_step)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FourthMomentMethod {
    GaussianAnalytic,
    MonteCarlo,
}

/// `E[(N⊗N)(N⊗N)ᵀ]` for the sampled noise `N`, with what is needed to contract its
/// fourth cumulant and, for Monte-Carlo estimates, the standard error of such contractions.
#[derive(Debug, Clone)]
pub struct FourthMomentMatrix {
    value: DMatrix<f64>,
    method: FourthMomentMethod,
    mc_samples: usize,
    sigma_n: DMatrix<f64>,
    draws: Option<DMatrix<f64>>,
}

/// `E[N_a N_b N_c N_d]` of a centered Gaussian vector, in the Kronecker layout of `(N⊗N)(N⊗N)ᵀ`.
fn gaussian_fourth_moment(s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.nrows();
    DMatrix::from_fn(n * n, n * n, |r, c| {
        let (a, cc) = (r / n, r % n);
        let (b, d) = (c / n, c % n);
        s[(a, cc)] * s[(b, d)] + s[(a, b)] * s[(cc, d)] + s[(a, d)] * s[(cc, b)]
    })
}

impl FourthMomentMatrix {
    /// Exact value for a Gaussian noise with covariance `sigma_n`; its fourth cumulant is zero.
    pub fn gaussian(sigma_n: &DMatrix<f64>) -> Self {
        Self {
            value: gaussian_fourth_moment(sigma_n),
            method: FourthMomentMethod::GaussianAnalytic,
            mc_samples: 0,
            sigma_n: sigma_n.clone(),
            draws: None,
        }
    }

    /// Monte-Carlo estimate from noise draws, one per row.
    pub fn from_draws(draws: DMatrix<f64>, sigma_n: &DMatrix<f64>) -> Result<Self> {
        let n = sigma_n.nrows();
        if draws.ncols() != n {
            return Err(Error::InvalidInput(format!("draws have {} columns, expected {n}", draws.ncols())));
        }
        if draws.nrows() < MIN_MC_SAMPLES {
            return Err(Error::InsufficientSamples(format!(
                "fourth moment needs at least {MIN_MC_SAMPLES} draws, got {}",
                draws.nrows()
            )));
        }
        let mut value = DMatrix::zeros(n * n, n * n);
        let mut kron = vec![0.0; n * n];
        for row in draws.row_iter() {
            for a in 0..n {
                for c in 0..n {
                    kron[a * n + c] = row[a] * row[c];
                }
            }
            for i in 0..n * n {
                for j in 0..n * n {
                    value[(i, j)] += kron[i] * kron[j];
                }
            }
        }
        value /= draws.nrows() as f64;
        Ok(Self {
            value,
            method: FourthMomentMethod::MonteCarlo,
            mc_samples: draws.nrows(),
            sigma_n: sigma_n.clone(),
            draws: Some(draws),
        })
    }

    pub fn value(&self) -> &DMatrix<f64> {
        &self.value
    }

    pub fn method(&self) -> FourthMomentMethod {
        self.method
    }

    pub fn mc_samples(&self) -> usize {
        self.mc_samples
    }

    pub fn noise_dim(&self) -> usize {
        self.sigma_n.nrows()
    }

    /// The correction kernel is identically zero.
    pub fn is_gaussian(&self) -> bool {
        self.method == FourthMomentMethod::GaussianAnalytic
    }

    /// `value` minus the three Gaussian pairings: the fourth cumulant in Kronecker layout.
    pub fn cumulant(&self) -> DMatrix<f64> {
        if self.is_gaussian() {
            return DMatrix::zeros(self.value.nrows(), self.value.ncols());
        }
        &self.value - gaussian_fourth_moment(&self.sigma_n)
    }

    /// `Σ_{abcd} κ_{abcd} p_ab q_cd` for symmetric `p`, `q`, and its Monte-Carlo standard error
    /// (zero for the analytic Gaussian case).
    pub fn contract(&self, p: &DMatrix<f64>, q: &DMatrix<f64>) -> (f64, f64) {
        let Some(draws) = &self.draws else {
            return (0.0, 0.0);
        };
        let s = &self.sigma_n;
        let ps = p * s;
        let qs = q * s;
        let gauss = ps.trace() * qs.trace() + 2.0 * (&ps * &qs).trace();
        let m = draws.nrows() as f64;
        let (mut mean, mut m2) = (0.0, 0.0);
        for (k, row) in draws.row_iter().enumerate() {
            let x = row.transpose();
            let v = (x.transpose() * p * &x)[(0, 0)] * (x.transpose() * q * &x)[(0, 0)];
            let delta = v - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (v - mean);
        }
        let se = (m2 / (m - 1.0)).sqrt() / m.sqrt();
        (mean - gauss, se)
    }
}

/// Fourth moment of the sampled noise `N = ∫₀^Δ e^{A(Δ−u)} B dL_u`.
///
/// `GaussianAnalytic` needs a Brownian driver. `MonteCarlo` integrates on a midpoint grid of
/// [`FOURTH_MOMENT_STEPS`] sub-steps; draws come in blocks of 1000 with their own seeds, so the
/// result does not depend on the number of threads.
pub fn fourth_moment(
    sm: &SampledModel<f64>,
    spec: &LevySpec,
    method: FourthMomentMethod,
    mc_samples: usize,
    seed: u64,
) -> Result<FourthMomentMatrix> {
    let model = sm.model();
    if spec.dim() != model.driver_dim() {
        return Err(Error::InvalidInput(format!(
            "driver dimension {} does not match the model's {}",
            spec.dim(),
            model.driver_dim()
        )));
    }
    match method {
        FourthMomentMethod::GaussianAnalytic => {
            if !spec.is_gaussian() {
                return Err(Error::UnsupportedDriver(format!(
                    "analytic fourth moment needs a Brownian driver, got {}",
                    spec.name()
                )));
            }
            Ok(FourthMomentMatrix::gaussian(sm.sigma_n()))
        }
        FourthMomentMethod::MonteCarlo => {
            if mc_samples < MIN_MC_SAMPLES {
                return Err(Error::InsufficientSamples(format!(
                    "fourth moment needs at least {MIN_MC_SAMPLES} draws, got {mc_samples}"
                )));
            }
            let draws = sample_noise(sm, spec, mc_samples, seed)?;
            FourthMomentMatrix::from_draws(draws, sm.sigma_n())
        }
    }
}

/// Draws of the sampled noise by midpoint stochastic integration, one per row.
pub fn sample_noise(sm: &SampledModel<f64>, spec: &LevySpec, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    let model = sm.model();
    let (n, d) = (model.state_dim(), model.driver_dim());
    let h = sm.delta() / FOURTH_MOMENT_STEPS as f64;
    let kernels = (0..FOURTH_MOMENT_STEPS)
        .map(|k| Ok(matrix_exp(&model.a, sm.delta() - (k as f64 + 0.5) * h)? * &model.b))
        .collect::<Result<Vec<DMatrix<f64>>>>()?;
    let stepper = spec.stepper(h)?;
    let blocks = count.div_ceil(MC_BLOCK);
    let rows: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let size = MC_BLOCK.min(count - b * MC_BLOCK);
            let mut rng = stream_rng(seed, b as u64, stream::FOURTH_MOMENT);
            let (mut eps, mut inc) = (vec![0.0; d], vec![0.0; d]);
            let mut out = Vec::with_capacity(size * n);
            let mut acc = vec![0.0; n];
            for _ in 0..size {
                acc.iter_mut().for_each(|x| *x = 0.0);
                for g in &kernels {
                    stepper.sample_into(&mut rng, &mut eps, &mut inc);
                    for i in 0..n {
                        for j in 0..d {
                            acc[i] += g[(i, j)] * inc[j];
                        }
                    }
                }
                out.extend_from_slice(&acc);
            }
            out
        })
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(count, n, &flat))
}

/// Central-difference steps for `theta`; each `θ_i ± h_i` must stay in the box.
fn fd_steps(space: &ParamSpace<f64>, theta: &[f64], rel: f64) -> Result<Vec<f64>> {
    if theta.len() != space.dim() {
        return Err(Error::InvalidParameter(format!("expected {} parameters, got {}", space.dim(), theta.len())));
    }
    theta
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let h = rel * t.abs().max(1.0);
            if t - h < space.lower()[i] || t + h > space.upper()[i] {
                Err(Error::Range(format!(
                    "parameter {} = {t} lies within the differencing step {h} of its bounds",
                    i + 1
                )))
            } else {
                Ok(h)
            }
        })
        .collect()
}

/// Models at `θ ± h_i e_i`.
fn perturbed(
    space: &ParamSpace<f64>,
    theta: &[f64],
    steps: &[f64],
) -> Result<Vec<(SampledModel<f64>, SampledModel<f64>)>> {
    steps
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let mut up = theta.to_vec();
            let mut down = theta.to_vec();
            up[i] += h;
            down[i] -= h;
            Ok((space.sampled(&up)?, space.sampled(&down)?))
        })
        .collect()
}

/// Jacobian of `vec f(ω, ·)` at `theta` by central differences; `m² × r`.
pub fn grad_spectral_density(space: &ParamSpace<f64>, theta: &[f64], omega: f64) -> Result<CMat> {
    grad_spectral_density_with(space, theta, omega, FD_REL_STEP)
}

pub fn grad_spectral_density_with(space: &ParamSpace<f64>, theta: &[f64], omega: f64, rel_step: f64) -> Result<CMat> {
    let steps = fd_steps(space, theta, rel_step)?;
    let models = perturbed(space, theta, &steps)?;
    let m = models[0].0.output_dim();
    let mut out = CMat::zeros(m * m, theta.len());
    for (i, ((up, down), h)) in models.iter().zip(&steps).enumerate() {
        let d = (spectral_density(up, omega) - spectral_density(down, omega)) / C64::new(2.0 * h, 0.0);
        out.set_column(i, &DMatrix::from_column_slice(m * m, 1, d.as_slice()).column(0));
    }
    Ok(out)
}

fn check_real(z: C64, what: &str) -> Result<f64> {
    if z.im.abs() > IMAG_GUARD * z.re.abs().max(1.0) {
        return Err(Error::Numeric(format!("imaginary residual {} in {what}", z.im)));
    }
    Ok(z.re)
}

/// Half-grid node `k ∈ 0..=K/2` at `ω = 2πk/K` and its folding weight.
fn half_nodes(nodes: usize) -> impl Iterator<Item = (f64, f64)> {
    let half = nodes / 2;
    (0..=half).map(move |k| {
        let w = if k == 0 || k == half { 1.0 } else { 2.0 };
        (2.0 * PI * k as f64 / nodes as f64, w)
    })
}

/// Everything the covariance formulas need on the half grid.
struct GridData {
    nodes: usize,
    /// `Φ(e^{iω})`.
    phi: Vec<CMat>,
    f: Vec<CMat>,
    f_inv: Vec<CMat>,
    /// `∂_i f(ω)` for each parameter.
    df: Vec<Vec<CMat>>,
}

fn grid_data(
    space: &ParamSpace<f64>,
    theta: &[f64],
    opts: &AsymptoticOptions,
) -> Result<(SampledModel<f64>, GridData)> {
    opts.validate()?;
    let sm = space.sampled(theta)?;
    let steps = fd_steps(space, theta, opts.rel_step)?;
    let models = perturbed(space, theta, &steps)?;
    let mut data = GridData { nodes: opts.nodes, phi: vec![], f: vec![], f_inv: vec![], df: vec![] };
    for (omega, _) in half_nodes(opts.nodes) {
        let f = spectral_density(&sm, omega);
        let f_inv = f
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate(format!("spectral density singular at ω = {omega}")))?;
        let df = models
            .iter()
            .zip(&steps)
            .map(|((up, down), h)| {
                (spectral_density(up, omega) - spectral_density(down, omega)) / C64::new(2.0 * h, 0.0)
            })
            .collect();
        data.phi.push(sm.transfer_phi(cis(omega)));
        data.f.push(f);
        data.f_inv.push(f_inv);
        data.df.push(df);
    }
    Ok((sm, data))
}

/// `(1/2π)∫ g` for `g(−ω) = conj g(ω)`, folded onto the half grid.
fn fold<F: FnMut(usize) -> f64>(nodes: usize, mut g: F) -> f64 {
    half_nodes(nodes).enumerate().map(|(k, (_, w))| w * g(k)).sum::<f64>() / nodes as f64
}

/// `(1/2π)∫ M` for matrix integrands with `M(−ω) = conj M(ω)`; real part only.
fn fold_matrix(nodes: usize, values: &[CMat]) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(values[0].nrows(), values[0].ncols());
    for ((_, w), v) in half_nodes(nodes).zip(values) {
        acc += v.map(|z| z.re) * w;
    }
    acc / nodes as f64
}

fn hessian_from(data: &GridData) -> Result<DMatrix<f64>> {
    let r = data.df[0].len();
    let mut h = DMatrix::zeros(r, r);
    for (k, (_, w)) in half_nodes(data.nodes).enumerate() {
        let d: Vec<CMat> = data.df[k].iter().map(|df| &data.f_inv[k] * df).collect();
        for i in 0..r {
            for j in 0..=i {
                let t = (&d[i] * &d[j]).trace();
                if i == j {
                    check_real(t, "the Hessian integrand")?;
                }
                h[(i, j)] += w * t.re;
            }
        }
    }
    h /= data.nodes as f64;
    let h = sym(&h.lower_triangle());
    Ok(&h + h.transpose() - DMatrix::from_diagonal(&h.diagonal()))
}

fn require_pd(h: &DMatrix<f64>, what: &str) -> Result<()> {
    let min = min_sym_eig(h);
    if !(min >= PD_RATIO * h.trace().abs()) {
        return Err(Error::Identifiability(format!(
            "{what} is not positive definite (smallest eigenvalue {min:.3e}); the parametrization may not be identifiable at this point"
        )));
    }
    Ok(())
}

/// Limit of the Whittle Hessian, `(1/2π)∫ tr(f⁻¹ ∂_i f f⁻¹ ∂_j f) dω`.
pub fn sigma_hessian(space: &ParamSpace<f64>, theta0: &[f64]) -> Result<DMatrix<f64>> {
    sigma_hessian_with(space, theta0, &AsymptoticOptions::default())
}

pub fn sigma_hessian_with(space: &ParamSpace<f64>, theta0: &[f64], opts: &AsymptoticOptions) -> Result<DMatrix<f64>> {
    let h = hessian_limit(space, theta0, opts)?;
    require_pd(&h, "the Hessian limit")?;
    Ok(h)
}

/// The Hessian limit without the definiteness check, for inspecting degenerate points.
pub fn hessian_limit(space: &ParamSpace<f64>, theta0: &[f64], opts: &AsymptoticOptions) -> Result<DMatrix<f64>> {
    let (_, data) = grid_data(space, theta0, opts)?;
    hessian_from(&data)
}

fn check_fm(sm: &SampledModel<f64>, fm: &FourthMomentMatrix) -> Result<()> {
    if fm.noise_dim() != sm.state_dim() {
        return Err(Error::InvalidInput(format!(
            "fourth moment is for noise dimension {}, model state dimension is {}",
            fm.noise_dim(),
            sm.state_dim()
        )));
    }
    Ok(())
}

/// Correction matrix `(1/16π⁴) κ(m_i, m_j)` for weights `m_i = ∫ Φ(e^{iω})ᵀ η_i Φ(e^{−iω}) dω`,
/// plus entrywise standard errors.
fn correction(weights: &[DMatrix<f64>], fm: &FourthMomentMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = weights.len();
    let mut c = DMatrix::zeros(r, r);
    let mut se = DMatrix::zeros(r, r);
    if fm.is_gaussian() {
        return (c, se);
    }
    let scale = 1.0 / (16.0 * PI.powi(4));
    for i in 0..r {
        for j in 0..=i {
            let (v, s) = fm.contract(&weights[i], &weights[j]);
            c[(i, j)] = v * scale;
            c[(j, i)] = v * scale;
            se[(i, j)] = s * scale;
            se[(j, i)] = s * scale;
        }
    }
    (c, se)
}

/// `N × N` weight `(1/2π)∫ Φ(e^{iω})ᵀ η(ω) Φ(e^{−iω}) dω`, symmetrized.
fn noise_weight(data_phi: &[CMat], eta: &[CMat], nodes: usize) -> DMatrix<f64> {
    let vals: Vec<CMat> = data_phi.iter().zip(eta).map(|(p, e)| p.transpose() * e * p.map(|z| z.conj())).collect();
    sym(&fold_matrix(nodes, &vals))
}

/// Limit covariance of the scaled score, split into its Gaussian part and fourth-cumulant correction.
#[derive(Debug, Clone)]
pub struct ScoreCovariance {
    pub gaussian_part: DMatrix<f64>,
    pub correction: DMatrix<f64>,
    /// Monte-Carlo standard errors of `correction` entries.
    pub correction_se: DMatrix<f64>,
}

impl ScoreCovariance {
    pub fn total(&self) -> DMatrix<f64> {
        &self.gaussian_part + &self.correction
    }
}

fn whittle_score(sm: &SampledModel<f64>, data: &GridData, fm: &FourthMomentMatrix) -> Result<ScoreCovariance> {
    check_fm(sm, fm)?;
    let r = data.df[0].len();
    let nodes = data.nodes;
    // η_i = f⁻¹ ∂_i f f⁻¹ at every node.
    let eta: Vec<Vec<CMat>> =
        (0..data.f.len()).map(|k| data.df[k].iter().map(|d| &data.f_inv[k] * d * &data.f_inv[k]).collect()).collect();
    let mut g = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in 0..=i {
            let v = 2.0
                * fold(nodes, |k| {
                    let f = &data.f[k];
                    (&eta[k][i] * f * &eta[k][j] * f).trace().re
                });
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let weights: Vec<DMatrix<f64>> = (0..r)
        .map(|i| {
            let e: Vec<CMat> = eta.iter().map(|ek| ek[i].clone()).collect();
            noise_weight(&data.phi, &e, nodes) * (2.0 * PI)
        })
        .collect();
    let (correction, correction_se) = correction(&weights, fm);
    Ok(ScoreCovariance { gaussian_part: g, correction, correction_se })
}

/// Limit covariance of `√n ∇W_n(θ₀)`.
pub fn sigma_score(space: &ParamSpace<f64>, theta0: &[f64], fm: &FourthMomentMatrix) -> Result<ScoreCovariance> {
    sigma_score_with(space, theta0, fm, &AsymptoticOptions::default())
}

pub fn sigma_score_with(
    space: &ParamSpace<f64>,
    theta0: &[f64],
    fm: &FourthMomentMatrix,
    opts: &AsymptoticOptions,
) -> Result<ScoreCovariance> {
    let (sm, data) = grid_data(space, theta0, opts)?;
    whittle_score(&sm, &data, fm)
}

/// Hessian limit, score covariance and their sandwich.
#[derive(Debug, Clone)]
pub struct AsymptoticCovariances {
    pub sigma_hessian: DMatrix<f64>,
    pub sigma_score: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
    /// Monte-Carlo standard errors of the score-covariance entries (zero for Gaussian drivers).
    pub score_se: DMatrix<f64>,
    pub quadrature_nodes: usize,
    pub fd_step: f64,
}

impl AsymptoticCovariances {
    /// `√(Σ_W[i,i] / n)`.
    pub fn std_errors(&self, n: usize) -> Vec<f64> {
        self.sigma_w.diagonal().iter().map(|v| (v.max(0.0) / n as f64).sqrt()).collect()
    }
}

fn sandwich(h: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol =
        h.clone().cholesky().ok_or_else(|| Error::Identifiability("Hessian limit is not positive definite".into()))?;
    let left = chol.solve(s);
    Ok(sym(&chol.solve(&left.transpose())))
}

/// `Σ_W = H⁻¹ S H⁻¹` for the Whittle estimator.
pub fn sigma_w(space: &ParamSpace<f64>, theta0: &[f64], fm: &FourthMomentMatrix) -> Result<AsymptoticCovariances> {
    sigma_w_with(space, theta0, fm, &AsymptoticOptions::default())
}

pub fn sigma_w_with(
    space: &ParamSpace<f64>,
    theta0: &[f64],
    fm: &FourthMomentMatrix,
    opts: &AsymptoticOptions,
) -> Result<AsymptoticCovariances> {
    let (sm, data) = grid_data(space, theta0, opts)?;
    let h = hessian_from(&data)?;
    require_pd(&h, "the Hessian limit")?;
    let score = whittle_score(&sm, &data, fm)?;
    let s = score.total();
    Ok(AsymptoticCovariances {
        sigma_w: sandwich(&h, &s)?,
        sigma_hessian: h,
        sigma_score: s,
        score_se: score.correction_se,
        quadrature_nodes: opts.nodes,
        fd_step: opts.rel_step,
    })
}

/// Limit covariance of the adjusted Whittle estimator; univariate output only.
pub fn sigma_w_adjusted(
    space: &ParamSpace<f64>,
    theta0: &[f64],
    fm: &FourthMomentMatrix,
) -> Result<AsymptoticCovariances> {
    sigma_w_adjusted_with(space, theta0, fm, &AsymptoticOptions::default())
}

pub fn sigma_w_adjusted_with(
    space: &ParamSpace<f64>,
    theta0: &[f64],
    fm: &FourthMomentMatrix,
    opts: &AsymptoticOptions,
) -> Result<AsymptoticCovariances> {
    opts.validate()?;
    let sm = space.sampled(theta0)?;
    if sm.output_dim() != 1 {
        return Err(Error::UnsupportedDimension(format!(
            "adjusted Whittle needs univariate output, model has {}",
            sm.output_dim()
        )));
    }
    check_fm(&sm, fm)?;
    let steps = fd_steps(space, theta0, opts.rel_step)?;
    let models = perturbed(space, theta0, &steps)?;
    let r = theta0.len();
    let v = sm.innovation_cov()[(0, 0)];
    let abs2 = |m: &SampledModel<f64>, z: C64| m.pi_polynomial(z)[(0, 0)].norm_sqr();

    // Per node: ∂_i|Π|² and ∂_i log|Π|².
    let mut d_abs: Vec<Vec<f64>> = vec![];
    let mut d_log: Vec<Vec<f64>> = vec![];
    let mut phi = vec![];
    for (omega, _) in half_nodes(opts.nodes) {
        let z = cis(omega);
        let base = abs2(&sm, z);
        let grad: Vec<f64> =
            models.iter().zip(&steps).map(|((up, down), h)| (abs2(up, z) - abs2(down, z)) / (2.0 * h)).collect();
        d_log.push(grad.iter().map(|g| g / base).collect());
        d_abs.push(grad);
        phi.push(sm.transfer_phi(z));
    }
    let nodes = opts.nodes;
    let mut h = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in 0..=i {
            let val = v * fold(nodes, |k| d_log[k][i] * d_log[k][j]);
            h[(i, j)] = val;
            h[(j, i)] = val;
        }
    }
    require_pd(&h, "the adjusted Hessian limit")?;
    let mut g = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in 0..=i {
            let val = 2.0 * v * v * fold(nodes, |k| d_log[k][i] * d_log[k][j]);
            g[(i, j)] = val;
            g[(j, i)] = val;
        }
    }
    let weights: Vec<DMatrix<f64>> = (0..r)
        .map(|i| {
            let eta: Vec<CMat> =
                d_abs.iter().map(|d| CMat::from_element(1, 1, C64::new(2.0 * PI * d[i], 0.0))).collect();
            noise_weight(&phi, &eta, nodes) * (2.0 * PI)
        })
        .collect();
    let (corr, corr_se) = correction(&weights, fm);
    let s = g + corr;
    Ok(AsymptoticCovariances {
        sigma_w: sandwich(&h, &s)?,
        sigma_hessian: h,
        sigma_score: s,
        score_se: corr_se,
        quadrature_nodes: nodes,
        fd_step: opts.rel_step,
    })
}

/// Limit variance of `(1/2√n) Σ_j tr(η(ω_j)(I_n(ω_j) − f(ω_j)))` for a Hermitian weight `η`.
pub fn sigma_eta<E>(sm: &SampledModel<f64>, eta: E, fm: &FourthMomentMatrix, nodes: usize) -> Result<f64>
where
    E: Fn(f64) -> CMat,
{
    check_fm(sm, fm)?;
    if nodes < 8 {
        return Err(Error::InvalidInput(format!("need at least 8 quadrature nodes, got {nodes}")));
    }
    let m = sm.output_dim();
    let mut first = 0.0;
    let mut weight = CMat::zeros(sm.state_dim(), sm.state_dim());
    for k in 0..nodes {
        let omega = -PI + 2.0 * PI * k as f64 / nodes as f64;
        let e = eta(omega);
        if e.shape() != (m, m) {
            return Err(Error::InvalidInput(format!("weight must be {m}×{m}, got {:?}", e.shape())));
        }
        if (&e - e.adjoint()).iter().any(|z| z.norm() > 1e-12 * (1.0 + e.iter().map(|z| z.norm()).fold(0.0, f64::max)))
        {
            return Err(Error::InvalidInput(format!("weight is not Hermitian at ω = {omega}")));
        }
        let f = spectral_density(sm, omega);
        first += check_real((&e * &f * &e * &f).trace(), "the weight integrand")?;
        let phi = sm.transfer_phi(cis(omega));
        weight += phi.transpose() * &e * phi.map(|z| z.conj());
    }
    // (1/π)∫ ≈ (2/K) Σ on the full grid.
    first *= 2.0 / nodes as f64;
    let w = sym(&weight.map(|z| z.re)) * (2.0 * PI / nodes as f64);
    let (corr, _) = correction(&[w], fm);
    Ok(first + corr[(0, 0)])
}

/// Symmetric two-sided interval `θ̂_i ± z · √(cov[i,i]/n)`.
pub fn confidence_intervals(theta_hat: &[f64], cov: &DMatrix<f64>, n: usize, level: f64) -> Result<Vec<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Range(format!("confidence level must be in (0, 1), got {level}")));
    }
    if cov.shape() != (theta_hat.len(), theta_hat.len()) || n == 0 {
        return Err(Error::InvalidInput("covariance shape or sample size does not match the estimate".into()));
    }
    let z = normal_quantile((1.0 + level) / 2.0);
    Ok(theta_hat
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let half = z * (cov[(i, i)].max(0.0) / n as f64).sqrt();
            (t - half, t + half)
        })
        .collect())
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Complex copy, re-exported for callers building weights.
pub fn to_complex(m: &DMatrix<f64>) -> CMat {
    complexify(m)
}
