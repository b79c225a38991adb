//! Path simulation: Euler-Maruyama on the continuous system and exact sampling of
//! the Gaussian sampled recursion.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::levy::{psd_factor, stream, stream_rng, LevySpec};
use crate::linalg::{check_assumptions, discrete_lyapunov, matrix_exp, van_loan_integral};
use crate::path::SamplePath;
use crate::sampled::ContinuousModel;

/// Grid and seed of an Euler-Maruyama run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    /// Sampling distance between observations.
    pub delta: f64,
    /// Inner integration step; must divide `delta`.
    pub euler_step: f64,
    /// Observation horizon, `n = horizon / delta`.
    pub horizon: f64,
    pub seed: u64,
    /// Simulated time discarded before the first observation window.
    pub burn_in: f64,
    /// Replicate index, keying an independent random stream.
    pub replicate: u64,
}

impl SimulationConfig {
    pub const DEFAULT_EULER_STEP: f64 = 0.01;

    /// `n` observations at spacing `delta`, step 0.01, no burn-in.
    pub fn new(delta: f64, n: usize, seed: u64) -> Self {
        Self {
            delta,
            euler_step: Self::DEFAULT_EULER_STEP,
            horizon: delta * n as f64,
            seed,
            burn_in: 0.0,
            replicate: 0,
        }
    }

    /// Burn-in of 100 sampling intervals.
    pub fn with_default_burn_in(mut self) -> Self {
        self.burn_in = 100.0 * self.delta;
        self
    }

    pub fn observations(&self) -> usize {
        (self.horizon / self.delta).round() as usize
    }

    fn steps_per_observation(&self) -> Result<usize> {
        if !(self.delta > 0.0) || !(self.euler_step > 0.0) || !self.delta.is_finite() || !self.euler_step.is_finite() {
            return Err(Error::InvalidInput("sampling distance and Euler step must be positive".into()));
        }
        if !(self.horizon > 0.0) || !(self.burn_in >= 0.0) {
            return Err(Error::InvalidInput("horizon must be positive and burn-in non-negative".into()));
        }
        let ratio = (self.delta / self.euler_step).round();
        if ratio < 1.0 || (ratio * self.euler_step - self.delta).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "Euler step {} does not divide the sampling distance {}",
                self.euler_step, self.delta
            )));
        }
        let n = self.horizon / self.delta;
        if (n - n.round()).abs() > 1e-9 || n.round() < 1.0 {
            return Err(Error::InvalidInput(format!(
                "horizon {} is not a positive multiple of the sampling distance {}",
                self.horizon, self.delta
            )));
        }
        Ok(ratio as usize)
    }
}

/// Euler-Maruyama simulation of `dX = AX dt + B dL` from `X(0) = 0`, observing `Y = CX` every `delta`.
pub fn euler_maruyama(
    model: &ContinuousModel<f64>,
    spec: &LevySpec,
    cfg: &SimulationConfig,
) -> Result<SamplePath<f64>> {
    if spec.dim() != model.driver_dim() {
        return Err(Error::InvalidInput(format!(
            "driver dimension {} does not match B with {} columns",
            spec.dim(),
            model.driver_dim()
        )));
    }
    check_assumptions(&model.a, &model.c, &spec.covariance(), cfg.delta).into_result()?;
    let stepper = spec.stepper(cfg.euler_step)?;
    let mut rng = stream_rng(cfg.seed, cfg.replicate, stream::DRIVER);
    let mut eps = vec![0.0; spec.dim()];
    euler_maruyama_with(model, cfg, |out| stepper.sample_into(&mut rng, &mut eps, out))
}

/// Euler-Maruyama with caller-supplied driver increments (one call per inner step).
pub fn euler_maruyama_with<F>(
    model: &ContinuousModel<f64>,
    cfg: &SimulationConfig,
    mut increment: F,
) -> Result<SamplePath<f64>>
where
    F: FnMut(&mut [f64]),
{
    let per_obs = cfg.steps_per_observation()?;
    let n_obs = cfg.observations();
    let h = cfg.euler_step;
    let burn_steps = (cfg.burn_in / h).round() as usize;
    let (ns, d, m) = (model.state_dim(), model.driver_dim(), model.output_dim());
    // Row-major copies keep the inner loop allocation-free.
    let a: Vec<f64> = (0..ns * ns).map(|k| model.a[(k / ns, k % ns)]).collect();
    let b: Vec<f64> = (0..ns * d).map(|k| model.b[(k / d, k % d)]).collect();
    let mut x = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut dl = vec![0.0; d];
    let mut out = DMatrix::zeros(n_obs, m);
    let total = burn_steps + per_obs * n_obs;
    let mut obs = 0;
    for step in 1..=total {
        increment(&mut dl);
        for i in 0..ns {
            let mut drift = 0.0;
            for j in 0..ns {
                drift += a[i * ns + j] * x[j];
            }
            let mut noise = 0.0;
            for j in 0..d {
                noise += b[i * d + j] * dl[j];
            }
            next[i] = x[i] + drift * h + noise;
        }
        std::mem::swap(&mut x, &mut next);
        if step > burn_steps && (step - burn_steps).is_multiple_of(per_obs) {
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::Blowup(step as f64 * h));
            }
            for r in 0..m {
                out[(obs, r)] = (0..ns).map(|j| model.c[(r, j)] * x[j]).sum();
            }
            obs += 1;
        }
    }
    SamplePath::new(out, cfg.delta)
}

/// Exact draw of the sampled Gaussian recursion `X_k = e^{AΔ} X_{k−1} + N_k`
/// with `X_0` from the stationary law.
pub fn exact_gaussian_sample(
    model: &ContinuousModel<f64>,
    spec: &LevySpec,
    delta: f64,
    n: usize,
    seed: u64,
) -> Result<SamplePath<f64>> {
    let LevySpec::Brownian { sigma_l } = spec else {
        return Err(Error::UnsupportedDriver(format!("exact sampling needs a Brownian driver, got {}", spec.name())));
    };
    exact_gaussian_sample_replicate(model, sigma_l, delta, n, seed, 0)
}

pub(crate) fn exact_gaussian_sample_replicate(
    model: &ContinuousModel<f64>,
    sigma_l: &DMatrix<f64>,
    delta: f64,
    n: usize,
    seed: u64,
    replicate: u64,
) -> Result<SamplePath<f64>> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be positive".into()));
    }
    if sigma_l.shape() != (model.driver_dim(), model.driver_dim()) {
        return Err(Error::InvalidInput("driver covariance does not match B".into()));
    }
    let e_ad = matrix_exp(&model.a, delta)?;
    let q = &model.b * sigma_l * model.b.transpose();
    let sigma_n = van_loan_integral(&model.a, &q, delta)?;
    let stationary = discrete_lyapunov(&e_ad, &sigma_n)?;
    let noise_factor = psd_factor(&sigma_n);
    let init_factor = psd_factor(&stationary);
    let ns = model.state_dim();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, f: &DMatrix<f64>| {
        let eps = nalgebra::DVector::from_fn(ns, |_, _| StandardNormal.sample(rng));
        f * eps
    };
    let mut init_rng = stream_rng(seed, replicate, stream::INITIAL_STATE);
    let mut rng = stream_rng(seed, replicate, stream::DRIVER);
    let mut x = draw(&mut init_rng, &init_factor);
    let m = model.output_dim();
    let mut out = DMatrix::zeros(n, m);
    for k in 0..n {
        x = &e_ad * x + draw(&mut rng, &noise_factor);
        let y = &model.c * &x;
        for r in 0..m {
            out[(k, r)] = y[r];
        }
    }
    SamplePath::new(out, delta)
}
