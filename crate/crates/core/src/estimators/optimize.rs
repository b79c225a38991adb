use rand::Rng;
use rayon::prelude::*;

use super::{EstimationResult, ObjectiveValue, ParamSpace};
use crate::error::{Error, Result};
use crate::levy::{stream, stream_rng};
use crate::scalar::Real;

/// Settings for the bounded Nelder–Mead search.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeOptions {
    /// Relative spread of simplex values (and vertices) at which a run stops.
    pub tol: f64,
    /// Evaluation budget per start.
    pub max_evals: usize,
    /// Total number of starts; extra ones are jittered copies of the first supplied start.
    pub multistarts: usize,
    /// Seed of the jitter.
    pub seed: u64,
    /// Relative size of the initial simplex.
    pub initial_step: f64,
    /// Restart once from the best point found.
    pub polish: bool,
    /// Search starts on the rayon pool.
    pub parallel: bool,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_evals: 20_000, multistarts: 5, seed: 0, initial_step: 0.1, polish: true, parallel: true }
    }
}

impl MinimizeOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_evals == 0 || !(self.initial_step > 0.0) {
            return Err(Error::InvalidInput(format!("invalid optimizer options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Run<T: Real> {
    x: Vec<T>,
    value: T,
    iterations: usize,
    evaluations: usize,
    converged: bool,
}

/// Lexicographic order on parameter vectors, used to break ties between equal minima.
fn lex_less<T: Real>(a: &[T], b: &[T]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

fn better<T: Real>(a: &Run<T>, b: &Run<T>) -> bool {
    a.value < b.value || (a.value == b.value && lex_less(&a.x, &b.x))
}

fn nelder_mead<T: Real, F>(f: &F, space: &ParamSpace<T>, start: &[T], opts: &MinimizeOptions) -> Option<Run<T>>
where
    F: Fn(&[T]) -> ObjectiveValue<T>,
{
    let d = space.dim();
    let x0 = space.project(start);
    let f0 = f(&x0).value;
    let mut evals = 1;
    if !f0.is_finite() {
        return None;
    }
    let (alpha, gamma, rho, sigma) = (T::one(), T::lit(2.0), T::lit(0.5), T::lit(0.5));
    let tol = T::lit(opts.tol);
    let floor = T::lit(0.1);

    let mut simplex: Vec<(Vec<T>, T)> = Vec::with_capacity(d + 1);
    simplex.push((x0.clone(), f0));
    for i in 0..d {
        let mut x = x0.clone();
        let step = T::lit(opts.initial_step) * x0[i].abs().max(floor);
        x[i] += step;
        // Step inward if the vertex would collapse onto the bound.
        if x[i] > space.upper()[i] {
            x[i] = x0[i] - step;
        }
        let x = space.project(&x);
        let v = f(&x).value;
        evals += 1;
        simplex.push((x, v));
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = vec![T::zero(); d];
    let point = |c: &[T], w: &[T], t: T| -> Vec<T> {
        let raw: Vec<T> = c.iter().zip(w).map(|(&ci, &wi)| ci + t * (wi - ci)).collect();
        space.project(&raw)
    };
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[d].1;
        let f_spread = (worst - best).abs();
        let x_spread = simplex[1..].iter().fold(T::zero(), |acc, (x, _)| {
            x.iter().zip(&simplex[0].0).fold(acc, |a, (&p, &q)| a.max((p - q).abs() / q.abs().max(T::one())))
        });
        if worst.is_finite() && f_spread <= tol * (T::one() + best.abs()) && x_spread <= tol.sqrt() {
            converged = true;
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = T::zero());
        for (x, _) in &simplex[..d] {
            for (c, &xi) in centroid.iter_mut().zip(x) {
                *c += xi;
            }
        }
        let inv = T::one() / T::from_usize_lossy(d);
        centroid.iter_mut().for_each(|c| *c *= inv);

        let xr = point(&centroid, &simplex[d].0, -alpha);
        let fr = f(&xr).value;
        evals += 1;
        if fr < simplex[0].1 {
            let xe = point(&centroid, &simplex[d].0, -gamma);
            let fe = f(&xe).value;
            evals += 1;
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        // Outside contraction when the reflection beat the worst point, inside otherwise.
        let (xc, fc) = if fr < simplex[d].1 {
            let xc = point(&centroid, &simplex[d].0, -rho);
            let fc = f(&xc).value;
            (xc, fc)
        } else {
            let xc = point(&centroid, &simplex[d].0, rho);
            let fc = f(&xc).value;
            (xc, fc)
        };
        evals += 1;
        if fc < simplex[d].1.min(fr) {
            simplex[d] = (xc, fc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x = point(&anchor, &vertex.0, sigma);
            let v = f(&x).value;
            *vertex = (x, v);
        }
        evals += d;
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let (x, value) = simplex.swap_remove(0);
    Some(Run { x, value, iterations, evaluations: evals, converged })
}

/// Start points: the supplied ones, then jittered copies of the first up to `opts.multistarts`.
fn start_points<T: Real>(space: &ParamSpace<T>, starts: &[Vec<T>], opts: &MinimizeOptions) -> Result<Vec<Vec<T>>> {
    let first = starts.first().ok_or(Error::InfeasibleStart)?;
    for s in starts {
        if s.len() != space.dim() || s.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("start point {s:?} does not match the parameter space")));
        }
    }
    let mut out: Vec<Vec<T>> = starts.iter().map(|s| space.project(s)).collect();
    let mut rng = stream_rng(opts.seed, 0, stream::STARTS);
    while out.len() < opts.multistarts {
        let x: Vec<T> = first
            .iter()
            .map(|&xi| {
                let r = opts.initial_step * xi.as_f64().abs().max(0.1);
                xi + T::lit(rng.random_range(-r..=r))
            })
            .collect();
        out.push(space.project(&x));
    }
    Ok(out)
}

/// Minimizes `f` over the box of `space` by Nelder–Mead from several starts, keeping the best run.
///
/// Infeasible points report `+∞`; trial points are clamped into the box. Fails with
/// [`Error::InfeasibleStart`] when no start has a finite value.
pub fn minimize<T: Real, F>(
    f: F,
    space: &ParamSpace<T>,
    starts: &[Vec<T>],
    opts: &MinimizeOptions,
) -> Result<EstimationResult<T>>
where
    F: Fn(&[T]) -> ObjectiveValue<T> + Sync,
{
    opts.validate()?;
    let points = start_points(space, starts, opts)?;
    let runs: Vec<Option<Run<T>>> = if opts.parallel {
        points.par_iter().map(|p| nelder_mead(&f, space, p, opts)).collect()
    } else {
        points.iter().map(|p| nelder_mead(&f, space, p, opts)).collect()
    };
    let mut iterations = 0;
    let mut evaluations = 0;
    let mut best: Option<Run<T>> = None;
    for run in runs.into_iter().flatten() {
        iterations += run.iterations;
        evaluations += run.evaluations;
        if best.as_ref().is_none_or(|b| better(&run, b)) {
            best = Some(run);
        }
    }
    let mut best = best.ok_or(Error::InfeasibleStart)?;
    if !best.value.is_finite() {
        return Err(Error::InfeasibleStart);
    }
    if opts.polish {
        if let Some(run) = nelder_mead(&f, space, &best.x, opts) {
            iterations += run.iterations;
            evaluations += run.evaluations;
            if !better(&best, &run) {
                best = run;
            }
        }
    }
    Ok(EstimationResult {
        theta_hat: best.x,
        objective_value: best.value,
        iterations,
        evaluations,
        converged: best.converged,
        estimator_kind: None,
        restarts_used: points.len(),
    })
}
