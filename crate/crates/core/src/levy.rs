//! Driving Lévy processes: Brownian motion and centered normal-inverse Gaussian.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, is_symmetric, is_symmetric_pd, sym};

/// Random streams carved out of one seed.
pub mod stream {
    pub const DRIVER: u64 = 0;
    pub const INITIAL_STATE: u64 = 1;
    pub const FOURTH_MOMENT: u64 = 2;
    pub const STARTS: u64 = 3;
}

/// Counter-based generator keyed by `(seed, replicate, stream)`.
pub fn stream_rng(seed: u64, replicate: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replicate.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Inverse Gaussian draw by the Michael-Schucany-Haas transform.
///
/// The smaller root is taken as `mean² / larger root`, which avoids the
/// cancellation of the textbook form when `shape` is small against `mean`.
pub fn sample_inverse_gaussian<R: Rng + ?Sized>(rng: &mut R, mean: f64, shape: f64) -> f64 {
    let nu: f64 = rng.sample(StandardNormal);
    let y = mean * nu * nu;
    let big = mean + mean / (2.0 * shape) * (y + (4.0 * shape * y + y * y).sqrt());
    let x = mean * mean / big;
    let u: f64 = rng.random();
    if u * (mean + x) <= mean {
        x
    } else {
        big
    }
}

/// Normal-inverse Gaussian driver parameters with the centering drift derived.
#[derive(Debug, Clone, PartialEq)]
pub struct NigParams {
    alpha: f64,
    beta: DVector<f64>,
    delta: f64,
    shape: DMatrix<f64>,
    kappa: f64,
    mu: DVector<f64>,
    shape_chol: DMatrix<f64>,
}

impl NigParams {
    /// `alpha > 0`, scale `delta ≥ 0`, symmetric positive definite `shape`,
    /// and `alpha² − βᵀ shape β > 0`.
    pub fn new(alpha: f64, beta: DVector<f64>, delta: f64, shape: DMatrix<f64>) -> Result<Self> {
        let d = beta.len();
        if d == 0 || shape.shape() != (d, d) {
            return Err(Error::InvalidParameter("NIG shape matrix must be d x d with d = len(beta)".into()));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("NIG alpha must be positive, got {alpha}")));
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!("NIG scale must be non-negative, got {delta}")));
        }
        if !beta.iter().all(|x| x.is_finite()) || !is_symmetric_pd(&shape) {
            return Err(Error::InvalidParameter("NIG shape matrix must be symmetric positive definite".into()));
        }
        let shape = sym(&shape);
        let kappa2 = alpha * alpha - beta.dot(&(&shape * &beta));
        if !(kappa2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "NIG parameters need alpha^2 - beta' Delta beta > 0, got {kappa2}"
            )));
        }
        let kappa = kappa2.sqrt();
        let mu = -(&shape * &beta) * (delta / kappa);
        let shape_chol = shape.clone().cholesky().expect("checked positive definite").l();
        Ok(Self { alpha, beta, delta, shape, kappa, mu, shape_chol })
    }

    /// Parameters with given `alpha`, `beta`, `delta` whose unit-time covariance equals `target`.
    ///
    /// With `u = shape·β` and `s = βᵀu` the covariance identity gives
    /// `u = κ target β / (δ (1 + s/κ²))`, a scalar equation in `s` solved by bisection.
    pub fn matching_covariance(alpha: f64, beta: DVector<f64>, delta: f64, target: &DMatrix<f64>) -> Result<Self> {
        if !is_symmetric_pd(target) {
            return Err(Error::InvalidParameter("target covariance must be symmetric positive definite".into()));
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter("matching needs a positive NIG scale".into()));
        }
        let q = beta.dot(&(target * &beta));
        let a2 = alpha * alpha;
        // g(s) = s − q κ / (δ (1 + s/κ²)), κ² = α² − s; g is increasing on [0, α²).
        let g = |s: f64| {
            let k2 = a2 - s;
            s - q * k2.sqrt() / (delta * (1.0 + s / k2))
        };
        let (mut lo, mut hi) = (0.0, a2);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        let kappa2 = a2 - s;
        let kappa = kappa2.sqrt();
        let u = target * &beta * (kappa / (delta * (1.0 + s / kappa2)));
        let shape = target * (kappa / delta) - &u * u.transpose() / kappa2;
        Self::new(alpha, beta, delta, sym(&shape))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    /// `κ = sqrt(α² − βᵀ shape β)`.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Centering drift `−δ shape β / κ`.
    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    /// Mean of the mixing variable over unit time.
    fn mixing_mean(&self) -> f64 {
        self.delta / self.kappa
    }

    /// Unit-time covariance `(δ/κ) shape + (δ/κ³) shape β βᵀ shape`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let sb = &self.shape * &self.beta;
        &self.shape * self.mixing_mean() + &sb * sb.transpose() * (self.delta / self.kappa.powi(3))
    }

    /// Unit-time mean; zero by construction of the drift.
    pub fn mean(&self) -> DVector<f64> {
        &self.mu + &self.shape * &self.beta * self.mixing_mean()
    }
}

/// Description of the driving Lévy process.
#[derive(Debug, Clone, PartialEq)]
pub enum LevySpec {
    /// Brownian motion with unit-time covariance `sigma_l` (positive semidefinite).
    Brownian {
        sigma_l: DMatrix<f64>,
    },
    Nig(NigParams),
}

impl LevySpec {
    pub fn brownian(sigma_l: DMatrix<f64>) -> Result<Self> {
        if !sigma_l.is_square() || sigma_l.nrows() == 0 || !all_finite(&sigma_l) || !is_symmetric(&sigma_l, 1e-10) {
            return Err(Error::InvalidParameter("Brownian covariance must be a finite symmetric matrix".into()));
        }
        let ev = sym(&sigma_l).symmetric_eigenvalues();
        if ev.iter().any(|&e| e < -1e-12 * sigma_l.amax().max(1.0)) {
            return Err(Error::InvalidParameter("Brownian covariance must be positive semidefinite".into()));
        }
        Ok(LevySpec::Brownian { sigma_l: sym(&sigma_l) })
    }

    pub fn nig(params: NigParams) -> Self {
        LevySpec::Nig(params)
    }

    pub fn dim(&self) -> usize {
        match self {
            LevySpec::Brownian { sigma_l } => sigma_l.nrows(),
            LevySpec::Nig(p) => p.beta.len(),
        }
    }

    /// Unit-time covariance `Σ_L`.
    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            LevySpec::Brownian { sigma_l } => sigma_l.clone(),
            LevySpec::Nig(p) => p.covariance(),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, LevySpec::Brownian { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LevySpec::Brownian { .. } => "brownian",
            LevySpec::Nig(_) => "nig",
        }
    }

    /// Precomputed sampler for increments over steps of length `dt`.
    pub fn stepper(&self, dt: f64) -> Result<IncrementSampler> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidInput(format!("increment length must be positive, got {dt}")));
        }
        Ok(match self {
            LevySpec::Brownian { sigma_l } => IncrementSampler::Gaussian { factor: psd_factor(sigma_l) * dt.sqrt() },
            LevySpec::Nig(p) => IncrementSampler::Nig {
                drift: &p.mu * dt,
                skew: &p.shape * &p.beta,
                factor: p.shape_chol.clone(),
                ig_mean: p.delta * dt / p.kappa,
                ig_shape: (p.delta * dt).powi(2),
            },
        })
    }
}

/// Square-root factor `F` with `F Fᵀ = S` for a positive semidefinite `S`.
pub fn psd_factor(s: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = s.clone().cholesky() {
        return ch.unpack();
    }
    let eig = sym(s).symmetric_eigen();
    let roots = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Draws increments of a fixed length; see [`LevySpec::stepper`].
#[derive(Debug, Clone)]
pub enum IncrementSampler {
    Gaussian { factor: DMatrix<f64> },
    Nig { drift: DVector<f64>, skew: DVector<f64>, factor: DMatrix<f64>, ig_mean: f64, ig_shape: f64 },
}

impl IncrementSampler {
    /// Writes one increment into `out` using `eps` as scratch (both of driver dimension).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, eps: &mut [f64], out: &mut [f64]) {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        match self {
            IncrementSampler::Gaussian { factor } => lower_mul(factor, eps, 1.0, out),
            IncrementSampler::Nig { drift, skew, factor, ig_mean, ig_shape } => {
                if *ig_mean == 0.0 {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    return;
                }
                let z = sample_inverse_gaussian(rng, *ig_mean, *ig_shape);
                lower_mul(factor, eps, z.sqrt(), out);
                for i in 0..out.len() {
                    out[i] += drift[i] + z * skew[i];
                }
            }
        }
    }
}

fn lower_mul(f: &DMatrix<f64>, x: &[f64], scale: f64, out: &mut [f64]) {
    let d = x.len();
    for i in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            acc += f[(i, j)] * x[j];
        }
        out[i] = acc * scale;
    }
}

/// `count` i.i.d. increments over steps of length `dt`, one per row.
pub fn sample_increments(spec: &LevySpec, dt: f64, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    if count == 0 {
        return Err(Error::InvalidInput("increment count must be positive".into()));
    }
    let stepper = spec.stepper(dt)?;
    let d = spec.dim();
    let mut rng = stream_rng(seed, 0, stream::DRIVER);
    let mut out = DMatrix::zeros(count, d);
    let mut eps = vec![0.0; d];
    let mut inc = vec![0.0; d];
    for k in 0..count {
        stepper.sample_into(&mut rng, &mut eps, &mut inc);
        for i in 0..d {
            out[(k, i)] = inc[i];
        }
    }
    Ok(out)
}
