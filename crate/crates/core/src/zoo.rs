//! Shipped model parametrizations with their reference parameters and boxes.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::{ModelBuilder, ParamSpace};
use crate::levy::{LevySpec, NigParams};
use crate::linalg::is_symmetric_pd;
use crate::sampled::ContinuousModel;
use crate::scalar::Real;
use crate::spectral::SpectralEvaluator;

/// Smallest admissible value for diagonal variance parameters and largest for stability-constrained ones.
const VALIDITY_GAP: f64 = 1e-6;
/// Half-width of the default box around the reference parameter.
const BOX_RADIUS: f64 = 5.0;

/// Reference parameter of the bivariate MCARMA(2,1) family.
pub const MCARMA21_THETA0: [f64; 10] = [-1.0, -2.0, 1.0, -2.0, -3.0, 1.0, 2.0, 0.4751, -0.1622, 0.3708];
/// Reference parameter of the bivariate MCAR(1) family.
pub const MCAR1_THETA0: [f64; 7] = [1.0, -2.0, 3.0, -4.0, 0.7513, -0.3536, 0.3536];
/// MCAR(1) parameter with an eigenvalue close to zero.
pub const MCAR1_NEAR_UNIT_ROOT_THETA0: [f64; 7] = [-0.01, 0.0, 7.0, -1.0, 0.7513, -0.3536, 0.3536];
pub const CARMA21_THETA0: [f64; 3] = [-2.0, -2.0, -1.0];
pub const CAR3_THETA0: [f64; 3] = [-6.0, -11.0, -6.0];
pub const CAR1_THETA0: [f64; 1] = [-1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelFamily {
    /// Bivariate MCARMA(2,1), state dimension 3, ten parameters including the driver covariance.
    Mcarma21,
    /// Bivariate MCAR(1) with `A = B`, seven parameters including the driver covariance.
    Mcar1,
    /// Univariate CARMA(2,1) with unit driver variance.
    Carma21,
    /// Univariate CAR(3) with unit driver variance.
    Car3,
    /// Univariate Ornstein–Uhlenbeck process with unit driver variance.
    Car1,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 5] =
        [ModelFamily::Mcarma21, ModelFamily::Mcar1, ModelFamily::Carma21, ModelFamily::Car3, ModelFamily::Car1];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Mcarma21 => "mcarma21",
            ModelFamily::Mcar1 => "mcar1",
            ModelFamily::Carma21 => "carma21",
            ModelFamily::Car3 => "car3",
            ModelFamily::Car1 => "car1",
        }
    }

    pub fn param_count(self) -> usize {
        self.default_theta0().len()
    }

    /// `(state, output, driver)` dimensions.
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            ModelFamily::Mcarma21 => (3, 2, 2),
            ModelFamily::Mcar1 => (2, 2, 2),
            ModelFamily::Carma21 => (2, 1, 1),
            ModelFamily::Car3 => (3, 1, 1),
            ModelFamily::Car1 => (1, 1, 1),
        }
    }

    pub fn default_theta0(self) -> Vec<f64> {
        match self {
            ModelFamily::Mcarma21 => MCARMA21_THETA0.to_vec(),
            ModelFamily::Mcar1 => MCAR1_THETA0.to_vec(),
            ModelFamily::Carma21 => CARMA21_THETA0.to_vec(),
            ModelFamily::Car3 => CAR3_THETA0.to_vec(),
            ModelFamily::Car1 => CAR1_THETA0.to_vec(),
        }
    }

    /// `θ₀ ± 5` per coordinate, cut back where a coordinate has a sign constraint.
    pub fn default_bounds(self) -> (Vec<f64>, Vec<f64>) {
        let theta0 = self.default_theta0();
        let mut lower: Vec<f64> = theta0.iter().map(|t| t - BOX_RADIUS).collect();
        let mut upper: Vec<f64> = theta0.iter().map(|t| t + BOX_RADIUS).collect();
        let positive: &[usize] = match self {
            ModelFamily::Mcarma21 => &[7, 9],
            ModelFamily::Mcar1 => &[4, 6],
            _ => &[],
        };
        let negative: &[usize] = match self {
            ModelFamily::Carma21 => &[0, 1],
            ModelFamily::Car3 => &[0, 1, 2],
            ModelFamily::Car1 => &[0],
            _ => &[],
        };
        for &i in positive {
            lower[i] = lower[i].max(VALIDITY_GAP);
        }
        for &i in negative {
            upper[i] = upper[i].min(-VALIDITY_GAP);
        }
        (lower, upper)
    }

    /// Whether the driver variance is part of the parameter vector.
    pub fn estimates_driver_covariance(self) -> bool {
        matches!(self, ModelFamily::Mcarma21 | ModelFamily::Mcar1)
    }

    pub fn builder<T: Real>(self) -> ModelBuilder<T> {
        match self {
            ModelFamily::Mcarma21 => Arc::new(build_mcarma21::<T>),
            ModelFamily::Mcar1 => Arc::new(build_mcar1::<T>),
            ModelFamily::Carma21 => Arc::new(build_carma21::<T>),
            ModelFamily::Car3 => Arc::new(build_car3::<T>),
            ModelFamily::Car1 => Arc::new(build_car1::<T>),
        }
    }

    pub fn build<T: Real>(self, theta: &[T]) -> Result<ContinuousModel<T>> {
        (self.builder::<T>())(theta)
    }

    /// Parameter space with the default box.
    pub fn param_space<T: Real>(self, delta: T) -> Result<ParamSpace<T>> {
        let (lower, upper) = self.default_bounds();
        ParamSpace::new(
            lower.into_iter().map(T::lit).collect(),
            upper.into_iter().map(T::lit).collect(),
            delta,
            self.builder(),
        )
    }

    /// NIG driver used with this family in the studies.
    ///
    /// The MCARMA(2,1) driver is the reference one; the others use `α = 3`, `β = 1`, `δ = 1`
    /// with the shape matrix chosen so the covariance equals the family's driver covariance at `θ₀`.
    pub fn default_nig(self) -> Result<NigParams> {
        let d = self.dims().2;
        match self {
            ModelFamily::Mcarma21 => NigParams::new(
                3.0,
                DVector::from_element(2, 1.0),
                1.0,
                DMatrix::from_row_slice(2, 2, &[1.25, -0.5, -0.5, 1.0]),
            ),
            _ => {
                let target = self.build::<f64>(&self.default_theta0())?.sigma_l;
                NigParams::matching_covariance(3.0, DVector::from_element(d, 1.0), 1.0, &target)
            }
        }
    }

    /// Brownian driver with the covariance the model carries at `theta`.
    pub fn brownian_driver(self, theta: &[f64]) -> Result<LevySpec> {
        LevySpec::brownian(self.build::<f64>(theta)?.sigma_l)
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.trim().to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match key.as_str() {
            "mcarma21" | "mcarma21biv" => Ok(ModelFamily::Mcarma21),
            "mcar1" | "mcar1biv" => Ok(ModelFamily::Mcar1),
            "carma21" => Ok(ModelFamily::Carma21),
            "car3" => Ok(ModelFamily::Car3),
            "car1" | "ou" => Ok(ModelFamily::Car1),
            _ => Err(Error::InvalidInput(format!(
                "unknown model family `{s}` (expected mcarma21, mcar1, carma21, car3 or car1)"
            ))),
        }
    }
}

fn expect_len<T: Real>(theta: &[T], r: usize, family: &str) -> Result<()> {
    if theta.len() != r {
        return Err(Error::InvalidParameter(format!("{family} takes {r} parameters, got {}", theta.len())));
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite parameter in {theta:?}")));
    }
    Ok(())
}

fn driver_cov<T: Real>(s11: T, s12: T, s22: T) -> Result<DMatrix<T>> {
    let s = DMatrix::from_row_slice(2, 2, &[s11, s12, s12, s22]);
    if !is_symmetric_pd(&s) {
        return Err(Error::InvalidParameter(format!(
            "driver covariance [[{s11}, {s12}], [{s12}, {s22}]] is not positive definite"
        )));
    }
    Ok(s)
}

fn unit<T: Real>() -> DMatrix<T> {
    DMatrix::from_element(1, 1, T::one())
}

/// Bivariate MCARMA(2,1) in canonical form.
pub fn build_mcarma21<T: Real>(t: &[T]) -> Result<ContinuousModel<T>> {
    expect_len(t, 10, "mcarma21")?;
    let (o, z) = (T::one(), T::zero());
    let a = DMatrix::from_row_slice(3, 3, &[t[0], t[1], z, z, z, o, t[2], t[3], t[4]]);
    let b = DMatrix::from_row_slice(3, 2, &[t[0], t[1], t[5], t[6], t[2] + t[4] * t[5], t[3] + t[4] * t[6]]);
    let c = DMatrix::from_row_slice(2, 3, &[o, z, z, z, o, z]);
    ContinuousModel::new(a, b, c, driver_cov(t[7], t[8], t[9])?)
}

/// Bivariate MCAR(1) with `A = B`, `C = I`.
pub fn build_mcar1<T: Real>(t: &[T]) -> Result<ContinuousModel<T>> {
    expect_len(t, 7, "mcar1")?;
    let a = DMatrix::from_row_slice(2, 2, &t[..4]);
    ContinuousModel::new(a.clone(), a, DMatrix::identity(2, 2), driver_cov(t[4], t[5], t[6])?)
}

/// Univariate CARMA(2,1): companion drift, `B = (t₃, t₁ + t₂t₃)ᵀ`, unit driver variance.
pub fn build_carma21<T: Real>(t: &[T]) -> Result<ContinuousModel<T>> {
    expect_len(t, 3, "carma21")?;
    let (o, z) = (T::one(), T::zero());
    let a = DMatrix::from_row_slice(2, 2, &[z, o, t[0], t[1]]);
    let b = DMatrix::from_column_slice(2, 1, &[t[2], t[0] + t[1] * t[2]]);
    ContinuousModel::new(a, b, DMatrix::from_row_slice(1, 2, &[o, z]), unit())
}

/// Univariate CAR(3): companion drift with last row `t`, `B = (0, 0, t₁)ᵀ`.
pub fn build_car3<T: Real>(t: &[T]) -> Result<ContinuousModel<T>> {
    expect_len(t, 3, "car3")?;
    if t[0] == T::zero() {
        return Err(Error::InvalidParameter("car3 with a zero first parameter has no noise input".into()));
    }
    let (o, z) = (T::one(), T::zero());
    let a = DMatrix::from_row_slice(3, 3, &[z, o, z, z, z, o, t[0], t[1], t[2]]);
    let b = DMatrix::from_column_slice(3, 1, &[z, z, t[0]]);
    ContinuousModel::new(a, b, DMatrix::from_row_slice(1, 3, &[o, z, z]), unit())
}

/// Ornstein–Uhlenbeck process `dX = a X dt + dL`.
pub fn build_car1<T: Real>(t: &[T]) -> Result<ContinuousModel<T>> {
    expect_len(t, 1, "car1")?;
    ContinuousModel::new(DMatrix::from_element(1, 1, t[0]), unit(), unit(), unit())
}

/// Number of frequencies scanned by [`identifiability_probe`].
pub const PROBE_FREQUENCIES: usize = 512;

/// Largest relative Frobenius distance between the spectral densities at two parameters over
/// an even grid on `[0, π]`. Values near zero mean the two points are not told apart by second
/// moments at this sampling distance; the result is advisory only.
pub fn identifiability_probe<T: Real>(space: &ParamSpace<T>, first: &[T], second: &[T]) -> Result<T> {
    let a = SpectralEvaluator::new(&space.sampled(first)?);
    let b = SpectralEvaluator::new(&space.sampled(second)?);
    let mut worst = T::zero();
    for k in 0..PROBE_FREQUENCIES {
        let w = T::pi() * T::from_usize_lossy(k) / T::from_usize_lossy(PROBE_FREQUENCIES - 1);
        let (fa, fb) = (a.density(w), b.density(w));
        let scale = fa.iter().map(|z| z.norm_sqr()).fold(T::zero(), |x, y| x + y).sqrt();
        let diff = (&fa - &fb).iter().map(|z| z.norm_sqr()).fold(T::zero(), |x, y| x + y).sqrt();
        worst = worst.max(diff / scale.max(T::eps()));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigenvalues, riccati_residual};
    use crate::sampled::SampledModel;

    #[test]
    fn every_family_builds_at_reference_point() {
        for fam in ModelFamily::ALL {
            let theta = fam.default_theta0();
            assert_eq!(theta.len(), fam.param_count());
            let model = fam.build::<f64>(&theta).unwrap();
            assert_eq!((model.state_dim(), model.output_dim(), model.driver_dim()), fam.dims());
            assert!(model.check(1.0).all_ok(), "{fam}");
            let sm = SampledModel::new(&model, 1.0).unwrap();
            let res = riccati_residual(sm.e_ad(), sm.sigma_n(), sm.c(), sm.omega()).unwrap();
            assert!(res <= 1e-10, "{fam}: {res}");
            let space = fam.param_space::<f64>(1.0).unwrap();
            assert!(space.contains(&theta));
        }
    }

    #[test]
    fn mcarma21_matrices() {
        let m = build_mcarma21(&MCARMA21_THETA0).unwrap();
        assert_eq!(m.a, DMatrix::from_row_slice(3, 3, &[-1.0, -2.0, 0.0, 0.0, 0.0, 1.0, 1.0, -2.0, -3.0]));
        assert_eq!(m.b, DMatrix::from_row_slice(3, 2, &[-1.0, -2.0, 1.0, 2.0, -2.0, -8.0]));
        let mut t = MCARMA21_THETA0;
        t[7] = 0.0;
        assert!(matches!(build_mcarma21(&t), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn mcar1_instances() {
        for theta in [MCAR1_THETA0, MCAR1_NEAR_UNIT_ROOT_THETA0] {
            let m = build_mcar1(&theta).unwrap();
            assert!(m.check(1.0).stable);
            let sm = SampledModel::new(&m, 1.0).unwrap();
            assert!((sm.omega() - sm.sigma_n()).amax() < 1e-12);
        }
    }

    fn sorted_re(a: &DMatrix<f64>) -> Vec<(f64, f64)> {
        let mut ev: Vec<(f64, f64)> = eigenvalues(a).iter().map(|z| (z.re, z.im)).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ev
    }

    #[test]
    fn carma21_instance() {
        let m = build_carma21(&CARMA21_THETA0).unwrap();
        assert_eq!(m.b[(1, 0)], 0.0);
        let ev = sorted_re(&m.a);
        assert!((ev[0].0 + 1.0).abs() < 1e-12 && (ev[0].1 + 1.0).abs() < 1e-12);
        assert!((ev[1].0 + 1.0).abs() < 1e-12 && (ev[1].1 - 1.0).abs() < 1e-12);
        assert!(!build_carma21(&[0.0, -2.0, -1.0]).unwrap().check(1.0).all_ok());
    }

    #[test]
    fn car3_instance() {
        let m = build_car3(&CAR3_THETA0).unwrap();
        let ev = sorted_re(&m.a);
        for (got, want) in ev.iter().zip([-3.0, -2.0, -1.0]) {
            assert!((got.0 - want).abs() < 1e-10 && got.1.abs() < 1e-10);
        }
        assert!(build_car3(&[0.0, -11.0, -6.0]).is_err());
        // Real eigenvalues: the strip condition holds for any sampling distance.
        assert!(m.check(7.3).strip_ok);
    }

    #[test]
    fn family_names_parse() {
        for fam in ModelFamily::ALL {
            assert_eq!(fam.name().parse::<ModelFamily>().unwrap(), fam);
        }
        assert_eq!("MCARMA21_biv".parse::<ModelFamily>().unwrap(), ModelFamily::Mcarma21);
        assert!("arma".parse::<ModelFamily>().is_err());
    }

    #[test]
    fn nig_defaults_match_driver_covariance() {
        let p = ModelFamily::Mcarma21.default_nig().unwrap();
        let target = build_mcarma21(&MCARMA21_THETA0).unwrap().sigma_l;
        assert!((p.covariance() - &target).amax() < 1e-4);
        for fam in [ModelFamily::Mcar1, ModelFamily::Carma21, ModelFamily::Car3, ModelFamily::Car1] {
            let p = fam.default_nig().unwrap();
            let target = fam.build::<f64>(&fam.default_theta0()).unwrap().sigma_l;
            assert!((p.covariance() - target).amax() < 1e-10, "{fam}");
        }
    }

    #[test]
    fn probe_separates_distinct_points() {
        let space = ModelFamily::Carma21.param_space::<f64>(1.0).unwrap();
        let same = identifiability_probe(&space, &CARMA21_THETA0, &CARMA21_THETA0).unwrap();
        assert_eq!(same, 0.0);
        let other = identifiability_probe(&space, &CARMA21_THETA0, &[-2.0, -2.0, -0.5]).unwrap();
        assert!(other > 1e-3);
    }

    #[test]
    fn builders_work_in_single_precision() {
        let space = ModelFamily::Carma21.param_space::<f32>(1.0).unwrap();
        let sm = space.sampled(&[-2.0f32, -2.0, -1.0]).unwrap();
        assert!(sm.innovation_cov()[(0, 0)] > 0.0);
    }
}
