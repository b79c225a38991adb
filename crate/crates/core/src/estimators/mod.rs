//! Parameter spaces, the three objective functions and their minimization.

mod objectives;
mod optimize;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::path::SamplePath;
use crate::sampled::{ContinuousModel, SampledModel};
use crate::scalar::Real;
use crate::spectral::periodogram;

pub use objectives::{
    adjusted_whittle_objective, adjusted_whittle_objective_spectral, qmle_objective, whittle_objective, whittle_value,
};
pub use optimize::{minimize, MinimizeOptions};

/// Maps a parameter vector to a continuous-time model.
pub type ModelBuilder<T> = Arc<dyn Fn(&[T]) -> Result<ContinuousModel<T>> + Send + Sync>;

/// Box-constrained parameter set together with its model parametrization and sampling distance.
#[derive(Clone)]
pub struct ParamSpace<T: Real> {
    lower: Vec<T>,
    upper: Vec<T>,
    delta: T,
    builder: ModelBuilder<T>,
}

impl<T: Real> fmt::Debug for ParamSpace<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamSpace")
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("delta", &self.delta)
            .finish_non_exhaustive()
    }
}

impl<T: Real> ParamSpace<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>, delta: T, builder: ModelBuilder<T>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidInput("bounds must be non-empty and of equal length".into()));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() || l > u {
                return Err(Error::InvalidInput(format!("invalid bounds [{l}, {u}] for parameter {}", i + 1)));
            }
        }
        if !(delta > T::zero()) || !delta.is_finite() {
            return Err(Error::InvalidInput(format!("sampling distance must be positive, got {delta}")));
        }
        Ok(Self { lower, upper, delta, builder })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    /// Same parametrization with other bounds.
    pub fn with_bounds(&self, lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        Self::new(lower, upper, self.delta, self.builder.clone())
    }

    pub fn contains(&self, theta: &[T]) -> bool {
        theta.len() == self.dim() && theta.iter().zip(&self.lower).zip(&self.upper).all(|((x, l), u)| x >= l && x <= u)
    }

    /// Clamps into the box.
    pub fn project(&self, theta: &[T]) -> Vec<T> {
        theta
            .iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .map(|((&x, &l), &u)| {
                if x < l {
                    l
                } else if x > u {
                    u
                } else {
                    x
                }
            })
            .collect()
    }

    /// Model at `theta`; rejects points outside the box.
    pub fn model(&self, theta: &[T]) -> Result<ContinuousModel<T>> {
        if theta.len() != self.dim() {
            return Err(Error::InvalidParameter(format!("expected {} parameters, got {}", self.dim(), theta.len())));
        }
        if !self.contains(theta) {
            return Err(Error::InvalidParameter(format!("parameter {theta:?} outside the bounds")));
        }
        (self.builder)(theta)
    }

    pub fn sampled(&self, theta: &[T]) -> Result<SampledModel<T>> {
        SampledModel::new(&self.model(theta)?, self.delta)
    }
}

/// Objective value with an explicit infeasibility flag (value is `+∞` when set).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue<T: Real> {
    pub value: T,
    pub infeasible: bool,
}

impl<T: Real> ObjectiveValue<T> {
    pub fn feasible(value: T) -> Self {
        Self { value, infeasible: false }
    }

    pub fn infeasible() -> Self {
        Self { value: T::infinity(), infeasible: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    Whittle,
    AdjustedWhittle,
    Qmle,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Whittle, EstimatorKind::AdjustedWhittle, EstimatorKind::Qmle];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Whittle => "whittle",
            EstimatorKind::AdjustedWhittle => "adjusted_whittle",
            EstimatorKind::Qmle => "qmle",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "whittle" => Ok(EstimatorKind::Whittle),
            "adjusted_whittle" | "adjusted" => Ok(EstimatorKind::AdjustedWhittle),
            "qmle" => Ok(EstimatorKind::Qmle),
            other => Err(Error::InvalidInput(format!(
                "unknown estimator `{other}` (expected whittle, adjusted_whittle or qmle)"
            ))),
        }
    }
}

/// Outcome of a minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult<T: Real> {
    pub theta_hat: Vec<T>,
    pub objective_value: T,
    /// Simplex iterations summed over all starts.
    pub iterations: usize,
    pub evaluations: usize,
    /// The winning start met the convergence criterion.
    pub converged: bool,
    pub estimator_kind: Option<EstimatorKind>,
    /// Number of start points searched.
    pub restarts_used: usize,
}

/// Runs the chosen estimator on `path` from the given starts.
pub fn estimate<T: Real>(
    kind: EstimatorKind,
    path: &SamplePath<T>,
    space: &ParamSpace<T>,
    starts: &[Vec<T>],
    opts: &MinimizeOptions,
) -> Result<EstimationResult<T>> {
    let model = space.model(&space.project(starts.first().ok_or(Error::InfeasibleStart)?))?;
    if model.output_dim() != path.dim() {
        return Err(Error::InvalidInput(format!(
            "data has {} columns but the model has {} outputs",
            path.dim(),
            model.output_dim()
        )));
    }
    let mut result = match kind {
        EstimatorKind::Whittle => {
            let grid = periodogram(path)?;
            minimize(
                |t: &[T]| whittle_objective(&grid, t, space).unwrap_or_else(|_| ObjectiveValue::infeasible()),
                space,
                starts,
                opts,
            )?
        }
        EstimatorKind::AdjustedWhittle => {
            if path.dim() != 1 {
                return Err(Error::UnsupportedDimension(format!(
                    "adjusted Whittle needs univariate data, got {} columns",
                    path.dim()
                )));
            }
            let grid = periodogram(path)?;
            minimize(
                |t: &[T]| adjusted_whittle_objective(&grid, t, space).unwrap_or_else(|_| ObjectiveValue::infeasible()),
                space,
                starts,
                opts,
            )?
        }
        EstimatorKind::Qmle => minimize(
            |t: &[T]| qmle_objective(path, t, space).unwrap_or_else(|_| ObjectiveValue::infeasible()),
            space,
            starts,
            opts,
        )?,
    };
    result.estimator_kind = Some(kind);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert_eq!("Adjusted-Whittle".parse::<EstimatorKind>().unwrap(), EstimatorKind::AdjustedWhittle);
        assert!("mle".parse::<EstimatorKind>().is_err());
    }
}
