use nalgebra::Complex;

use super::{ObjectiveValue, ParamSpace};
use crate::error::{Error, Result};
use crate::path::SamplePath;
use crate::sampled::SampledModel;
use crate::scalar::Real;
use crate::spectral::{trace_inv_logdet, PeriodogramGrid, RationalResolvent, SpectralEvaluator, SpectralScratch};

/// Relative size of the imaginary part tolerated in quantities that are real in exact arithmetic.
const IMAG_GUARD: f64 = 1e-8;

fn guard_real<T: Real>(z: Complex<T>) -> Result<T> {
    if z.im.abs() > T::tol(IMAG_GUARD) * z.re.abs().max(T::one()) {
        return Err(Error::Numeric(format!("imaginary residual {} in a real quantity", z.im)));
    }
    Ok(z.re)
}

/// Weight of grid index `j ∈ 0..=n` when folding the grid onto its non-negative half.
#[inline]
fn fold_weight<T: Real>(j: usize, n: usize) -> T {
    if j == 0 || j == n {
        T::one()
    } else {
        T::lit(2.0)
    }
}

/// Whittle function of a built model; infeasible if some `f(ω_j)` is not positive definite.
pub fn whittle_value<T: Real>(grid: &PeriodogramGrid<T>, sm: &SampledModel<T>) -> Result<ObjectiveValue<T>> {
    let m = grid.dim();
    if sm.output_dim() != m {
        return Err(Error::InvalidInput(format!(
            "periodogram is {m}-dimensional but the model has {} outputs",
            sm.output_dim()
        )));
    }
    let n = grid.n();
    let ev = SpectralEvaluator::new(sm);
    let mut scratch = SpectralScratch::default();
    let mut f = vec![Complex::new(T::zero(), T::zero()); m * m];
    let mut total = T::zero();
    for j in 0..=n {
        ev.density_at(grid.phase(j), &mut scratch, &mut f);
        let Some((tr, logdet)) = trace_inv_logdet(m, &f, grid.half_value(j)) else {
            return Ok(ObjectiveValue::infeasible());
        };
        total += fold_weight::<T>(j, n) * (guard_real(tr)? + logdet);
    }
    let value = total / (T::lit(2.0) * T::from_usize_lossy(n));
    Ok(if value.is_finite() { ObjectiveValue::feasible(value) } else { ObjectiveValue::infeasible() })
}

/// `W_n(θ) = (2n)^{-1} Σ_j [tr(f(ω_j,θ)^{-1} I_n(ω_j)) + log det f(ω_j,θ)]`.
///
/// Models that cannot be built at `θ` yield the infeasible sentinel.
pub fn whittle_objective<T: Real>(
    grid: &PeriodogramGrid<T>,
    theta: &[T],
    space: &ParamSpace<T>,
) -> Result<ObjectiveValue<T>> {
    match space.sampled(theta) {
        Ok(sm) => whittle_value(grid, &sm),
        Err(_) => Ok(ObjectiveValue::infeasible()),
    }
}

fn require_univariate<T: Real>(grid: &PeriodogramGrid<T>) -> Result<()> {
    if grid.dim() != 1 {
        return Err(Error::UnsupportedDimension(format!(
            "adjusted Whittle needs univariate output, got dimension {}",
            grid.dim()
        )));
    }
    Ok(())
}

/// `W_n^A(θ) = (π/n) Σ_j |Π(e^{iω_j},θ)|² I_n(ω_j)`; univariate only.
pub fn adjusted_whittle_objective<T: Real>(
    grid: &PeriodogramGrid<T>,
    theta: &[T],
    space: &ParamSpace<T>,
) -> Result<ObjectiveValue<T>> {
    require_univariate(grid)?;
    let sm = match space.sampled(theta) {
        Ok(sm) if sm.output_dim() == 1 => sm,
        Ok(sm) => {
            return Err(Error::UnsupportedDimension(format!(
                "adjusted Whittle needs univariate output, model has {}",
                sm.output_dim()
            )))
        }
        Err(_) => return Ok(ObjectiveValue::infeasible()),
    };
    // On the unit circle C (I − F z)^{-1} K z = C (w I − F)^{-1} K with w = z̄.
    let resolvent = RationalResolvent::new(sm.c(), sm.filter(), sm.gain());
    let n = grid.n();
    let mut num = Vec::with_capacity(1);
    let mut total = T::zero();
    for j in 0..=n {
        let p = resolvent.eval_into(grid.phase(j).conj(), &mut num);
        let pi = Complex::new(T::one(), T::zero()) - num[0] / p;
        let weight = pi.re * pi.re + pi.im * pi.im;
        total += fold_weight::<T>(j, n) * weight * grid.half_value(j)[0].re;
    }
    let value = total * T::pi() / T::from_usize_lossy(n);
    Ok(if value.is_finite() { ObjectiveValue::feasible(value) } else { ObjectiveValue::infeasible() })
}

/// The adjusted Whittle function through `(V/2n) Σ_j f(ω_j,θ)^{-1} I_n(ω_j)`.
pub fn adjusted_whittle_objective_spectral<T: Real>(
    grid: &PeriodogramGrid<T>,
    theta: &[T],
    space: &ParamSpace<T>,
) -> Result<ObjectiveValue<T>> {
    require_univariate(grid)?;
    let Ok(sm) = space.sampled(theta) else {
        return Ok(ObjectiveValue::infeasible());
    };
    let ev = SpectralEvaluator::new(&sm);
    let mut scratch = SpectralScratch::default();
    let mut f = [Complex::new(T::zero(), T::zero())];
    let n = grid.n();
    let mut total = T::zero();
    for j in 0..=n {
        ev.density_at(grid.phase(j), &mut scratch, &mut f);
        total += fold_weight::<T>(j, n) * grid.half_value(j)[0].re / f[0].re;
    }
    let v = sm.innovation_cov()[(0, 0)];
    let value = total * v / (T::lit(2.0) * T::from_usize_lossy(n));
    Ok(if value.is_finite() { ObjectiveValue::feasible(value) } else { ObjectiveValue::infeasible() })
}

/// `n^{-1} Σ_k [ξ_kᵀ V^{-1} ξ_k + log det V] − m log 2π` with pseudo-innovations
/// from the filter `x̂_{k+1} = F x̂_k + K Y_k`, `ξ_k = Y_k − C x̂_k`, `x̂_1 = 0`.
pub fn qmle_objective<T: Real>(path: &SamplePath<T>, theta: &[T], space: &ParamSpace<T>) -> Result<ObjectiveValue<T>> {
    let Ok(sm) = space.sampled(theta) else {
        return Ok(ObjectiveValue::infeasible());
    };
    qmle_value(path, &sm)
}

pub(crate) fn qmle_value<T: Real>(path: &SamplePath<T>, sm: &SampledModel<T>) -> Result<ObjectiveValue<T>> {
    let m = path.dim();
    if sm.output_dim() != m {
        return Err(Error::InvalidInput(format!("data has {m} columns but the model has {} outputs", sm.output_dim())));
    }
    let n = path.len();
    if n == 0 {
        return Err(Error::InsufficientSamples("QMLE needs at least one observation".into()));
    }
    let Some(chol) = sm.innovation_cov().clone().cholesky() else {
        return Ok(ObjectiveValue::infeasible());
    };
    let l = chol.l();
    let logdet = l.diagonal().iter().fold(T::zero(), |acc, &d| acc + d.ln()) * T::lit(2.0);
    let ns = sm.state_dim();
    let (f, k, c) = (sm.filter(), sm.gain(), sm.c());
    let y = path.observations();
    let mut x = vec![T::zero(); ns];
    let mut next = vec![T::zero(); ns];
    let mut xi = vec![T::zero(); m];
    let mut quad = T::zero();
    for t in 0..n {
        for a in 0..m {
            let mut pred = T::zero();
            for j in 0..ns {
                pred += c[(a, j)] * x[j];
            }
            xi[a] = y[(t, a)] - pred;
        }
        // Forward substitution with the Cholesky factor: |L^{-1} ξ|² = ξᵀ V^{-1} ξ.
        for a in 0..m {
            let mut s = xi[a];
            for b in 0..a {
                s -= l[(a, b)] * xi[b];
            }
            xi[a] = s / l[(a, a)];
            quad += xi[a] * xi[a];
        }
        for i in 0..ns {
            let mut s = T::zero();
            for j in 0..ns {
                s += f[(i, j)] * x[j];
            }
            for a in 0..m {
                s += k[(i, a)] * y[(t, a)];
            }
            next[i] = s;
        }
        std::mem::swap(&mut x, &mut next);
    }
    let value = quad / T::from_usize_lossy(n) + logdet - T::from_usize_lossy(m) * T::two_pi().ln();
    Ok(if value.is_finite() { ObjectiveValue::feasible(value) } else { ObjectiveValue::infeasible() })
}
