//! Continuous-time state space models and their discrete-time sampled form.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::linalg::{
    self, all_finite, check_assumptions, discrete_lyapunov, kalman_gain, matrix_exp, noise_covariance, solve_riccati,
    SpectrumReport,
};
use crate::scalar::Real;

/// `dX = A X dt + B dL`, `Y = C X`, with `Cov(L(1)) = Σ_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    pub sigma_l: DMatrix<T>,
}

impl<T: Real> ContinuousModel<T> {
    /// Checks shapes and finiteness only; see [`ContinuousModel::check`] for the assumptions.
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>, sigma_l: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::InvalidInput(format!("A must be square, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::InvalidInput(format!("B must have {n} rows, got {}x{}", b.nrows(), b.ncols())));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::InvalidInput(format!("C must have {n} columns, got {}x{}", c.nrows(), c.ncols())));
        }
        let d = b.ncols();
        if sigma_l.shape() != (d, d) {
            return Err(Error::InvalidInput(format!(
                "driver covariance must be {d}x{d}, got {}x{}",
                sigma_l.nrows(),
                sigma_l.ncols()
            )));
        }
        if !(all_finite(&a) && all_finite(&b) && all_finite(&c) && all_finite(&sigma_l)) {
            return Err(Error::InvalidInput("model matrices contain non-finite entries".into()));
        }
        Ok(Self { a, b, c, sigma_l })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn driver_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn check(&self, delta: T) -> SpectrumReport<T> {
        check_assumptions(&self.a, &self.c, &self.sigma_l, delta)
    }

    /// Same model with `Σ_L` multiplied by `factor`.
    pub fn with_scaled_driver(&self, factor: T) -> Self {
        Self { sigma_l: &self.sigma_l * factor, ..self.clone() }
    }
}

/// Discrete-time objects of a model sampled at spacing `delta`. Immutable once built.
#[derive(Debug, Clone)]
pub struct SampledModel<T: Real> {
    model: ContinuousModel<T>,
    delta: T,
    e_ad: DMatrix<T>,
    sigma_n: DMatrix<T>,
    omega: DMatrix<T>,
    gain: DMatrix<T>,
    innovation_cov: DMatrix<T>,
    filter: DMatrix<T>,
    filter_radius: T,
}

/// Builds the sampled model, requiring every assumption check to pass.
pub fn build_sampled<T: Real>(model: &ContinuousModel<T>, delta: T) -> Result<SampledModel<T>> {
    SampledModel::new(model, delta)
}

impl<T: Real> SampledModel<T> {
    pub fn new(model: &ContinuousModel<T>, delta: T) -> Result<Self> {
        if !(delta > T::zero()) || !delta.is_finite() {
            return Err(Error::InvalidInput(format!("sampling distance must be positive, got {delta}")));
        }
        model.check(delta).into_result()?;
        let e_ad = matrix_exp(&model.a, delta)?;
        let sigma_n = noise_covariance(&model.a, &model.b, &model.sigma_l, delta)?;
        let omega = solve_riccati(&e_ad, &sigma_n, &model.c)?;
        let k = kalman_gain(&e_ad, &omega, &model.c)?;
        let innovation_cov = linalg::sym(&(&model.c * &omega * model.c.transpose()));
        Ok(Self {
            model: model.clone(),
            delta,
            e_ad,
            sigma_n,
            omega,
            gain: k.gain,
            innovation_cov,
            filter: k.filter,
            filter_radius: k.spectral_radius,
        })
    }

    pub fn model(&self) -> &ContinuousModel<T> {
        &self.model
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    /// `e^{AΔ}`.
    pub fn e_ad(&self) -> &DMatrix<T> {
        &self.e_ad
    }

    /// Covariance of the sampled noise `Σ_N`.
    pub fn sigma_n(&self) -> &DMatrix<T> {
        &self.sigma_n
    }

    /// Solution `Ω` of the Riccati equation.
    pub fn omega(&self) -> &DMatrix<T> {
        &self.omega
    }

    /// Kalman gain `K`.
    pub fn gain(&self) -> &DMatrix<T> {
        &self.gain
    }

    /// Innovation covariance `V = C Ω Cᵀ`.
    pub fn innovation_cov(&self) -> &DMatrix<T> {
        &self.innovation_cov
    }

    /// Innovation filter transition `e^{AΔ} − K C`.
    pub fn filter(&self) -> &DMatrix<T> {
        &self.filter
    }

    pub fn filter_radius(&self) -> T {
        self.filter_radius
    }

    pub fn c(&self) -> &DMatrix<T> {
        &self.model.c
    }

    pub fn state_dim(&self) -> usize {
        self.e_ad.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.model.c.nrows()
    }

    /// `C (I − e^{AΔ} z)^{-1}`, the transfer function of the moving average representation.
    pub fn transfer_phi(&self, z: Complex<T>) -> DMatrix<Complex<T>> {
        resolvent_left(&complexify(&self.model.c), &self.e_ad, z)
    }

    /// `Π(z) = I − C (I − F z)^{-1} K z`.
    pub fn pi_polynomial(&self, z: Complex<T>) -> DMatrix<Complex<T>> {
        let m = self.output_dim();
        let left = resolvent_left(&complexify(&self.model.c), &self.filter, z);
        let k = complexify(&self.gain);
        DMatrix::identity(m, m) - left * k * z
    }

    /// `Π^{-1}(z) = I + C (I − e^{AΔ} z)^{-1} K z`.
    pub fn pi_inverse(&self, z: Complex<T>) -> DMatrix<Complex<T>> {
        let m = self.output_dim();
        DMatrix::identity(m, m) + self.transfer_phi(z) * complexify(&self.gain) * z
    }

    /// Spectral density through the innovations form `Π^{-1}(e^{-iω}) V Π^{-1}(e^{iω})ᵀ / 2π`.
    pub fn innovations_spectral_density(&self, omega: T) -> DMatrix<Complex<T>> {
        let z = crate::scalar::cis(omega);
        let left = self.pi_inverse(z.conj());
        let right = self.pi_inverse(z).transpose();
        let v = complexify(&self.innovation_cov) * Complex::new(T::one() / T::two_pi(), T::zero());
        left * v * right
    }

    /// Stationary covariance of the sampled state.
    pub fn stationary_state_cov(&self) -> Result<DMatrix<T>> {
        discrete_lyapunov(&self.e_ad, &self.sigma_n)
    }

    /// Autocovariances `Cov(Y_{k+h}, Y_k)` of the output for `h = 0..=max_lag`.
    pub fn autocovariances(&self, max_lag: usize) -> Result<Vec<DMatrix<T>>> {
        let gx = self.stationary_state_cov()?;
        let c = &self.model.c;
        let mut out = Vec::with_capacity(max_lag + 1);
        let mut p = gx;
        for _ in 0..=max_lag {
            out.push(c * &p * c.transpose());
            p = &self.e_ad * p;
        }
        Ok(out)
    }
}

pub(crate) fn complexify<T: Real>(m: &DMatrix<T>) -> DMatrix<Complex<T>> {
    m.map(|x| Complex::new(x, T::zero()))
}

/// `L (I − M z)^{-1}` via a transposed linear solve.
pub(crate) fn resolvent_left<T: Real>(l: &DMatrix<Complex<T>>, m: &DMatrix<T>, z: Complex<T>) -> DMatrix<Complex<T>> {
    let n = m.nrows();
    let mut sys = DMatrix::<Complex<T>>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            // Transposed system: (I − Mᵀ z) Xᵀ = Lᵀ.
            sys[(i, j)] -= z * m[(j, i)];
        }
    }
    let sol = sys.lu().solve(&l.transpose()).expect("I - M z is invertible on the closed unit disc for a stable M");
    sol.transpose()
}
