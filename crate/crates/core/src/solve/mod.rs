//! Grid oracles and iterative solvers.
//!
//! Every grid search samples the box on `points` values per coordinate, then
//! runs `rounds` refinement passes, each on a box ten times smaller centred
//! at the incumbent. Points where an expression is undefined are skipped.
//! Argmin sets are sorted by value, then lexicographically by coordinates.

mod game;
mod grid;
mod local;
mod two_stage;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::BilevelProblem;

pub use game::{
    alternating_br, best_response, enumerate_equilibria_grid, equilibrium_residuals, EquilibriumCandidate,
    NonConvergence,
};
pub(crate) use grid::{grid_search, SearchResult};
pub use local::{refine_local, LocalProblem};
pub use two_stage::{solve_two_stage, TwoStageResult};

/// Cap on the number of points kept in an ε-argmin set.
pub const MAX_ARGMIN_POINTS: usize = 20_000;

const GRID_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("no feasible pair found")]
    NoFeasiblePair,
    #[error("follower problem is infeasible at x = {0:?}")]
    FollowerInfeasible(Vec<f64>),
    #[error("{0}")]
    Invalid(String),
}

/// Sampling density and tolerances shared by all oracles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub rounds: usize,
    pub feas_tol: f64,
    pub opt_tol: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 101,
            rounds: 3,
            feas_tol: 1e-6,
            opt_tol: 1e-6,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), SolveError> {
        if self.points < 2 {
            return Err(SolveError::Invalid("grid needs at least 2 points per dimension".into()));
        }
        if !(self.feas_tol > 0.0 && self.opt_tol > 0.0) {
            return Err(SolveError::Invalid("tolerances must be positive".into()));
        }
        Ok(())
    }

    /// Acceptance threshold for constraint residuals of grid samples.
    ///
    /// Far below `feas_tol` so that thin feasible sets such as `w^2 <= 0`
    /// do not widen to a band of half-width `sqrt(feas_tol)`; at 1e-12 the
    /// band is narrower than the finest refinement step.
    pub fn grid_feas_tol(&self) -> f64 {
        self.feas_tol.min(GRID_TOL)
    }

    /// Width of the value band kept in grid argmin sets, for the same reason.
    pub fn grid_opt_tol(&self) -> f64 {
        self.opt_tol.min(GRID_TOL)
    }

    /// Coarse step of a coordinate with the given box width.
    pub fn step(&self, width: f64) -> f64 {
        width / (self.points - 1) as f64
    }
}

/// ε-argmin set of a sampled minimization.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolutionSet {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Smallest value found; `None` when no sample was feasible.
    pub best: Option<f64>,
    pub truncated: bool,
    pub evaluations: usize,
}

impl SolutionSet {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn infeasible(&self) -> bool {
        self.best.is_none()
    }

    /// Lexicographically smallest point among those attaining the best value.
    pub fn best_point(&self) -> Option<&[f64]> {
        self.points.first().map(Vec::as_slice)
    }

    /// `φ(x)` when the set comes from [`solve_lower`].
    pub fn value_function(&self) -> Option<f64> {
        self.best
    }

    pub(crate) fn from_search<T>(r: SearchResult<T>) -> Self {
        Self {
            best: r.samples.first().map(|s| s.value),
            values: r.samples.iter().map(|s| s.value).collect(),
            points: r.samples.into_iter().map(|s| s.point).collect(),
            truncated: r.truncated,
            evaluations: r.evaluations,
        }
    }
}

/// `S(x)` and `φ(x)` of the lower level at a fixed `x`.
pub fn solve_lower(p: &BilevelProblem, x: &[f64], grid: &GridSpec) -> SolutionSet {
    let tol = grid.grid_feas_tol();
    let r = grid_search(p.w_bounds(), grid, |w| {
        let point = p.compose(x, w, w);
        let v = p.lower_violation(x, w).ok()?;
        if v > tol {
            return None;
        }
        Some((p.lower_objective.eval(&point).ok()?, ()))
    });
    SolutionSet::from_search(r)
}

/// ε-global solution set of the SBP over `(x, y)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbpSolution {
    /// Points are `[x | y]`.
    pub set: SolutionSet,
    /// Outer grid `x` values where the lower level had no feasible sample.
    pub lower_infeasible_x: usize,
}

impl SbpSolution {
    pub fn best(&self) -> f64 {
        self.set.best.unwrap_or(f64::NAN)
    }

    pub fn best_point(&self) -> &[f64] {
        self.set.best_point().unwrap_or(&[])
    }
}

/// Nested-grid oracle: grid over `x ∈ X`, `S(x)` by [`solve_lower`], minimum
/// of `F` over the resulting pairs.
pub fn solve_sbp_grid(p: &BilevelProblem, grid: &GridSpec) -> Result<SbpSolution, SolveError> {
    let tol = grid.grid_feas_tol();
    let infeasible = std::sync::atomic::AtomicUsize::new(0);
    let r = grid_search(p.x_bounds(), grid, |x| {
        if p.upper_violation(x).ok()? > tol {
            return None;
        }
        let s = solve_lower(p, x, grid);
        if s.is_empty() {
            infeasible.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            return None;
        }
        let mut pairs: Vec<(f64, Vec<f64>)> = s
            .points
            .into_iter()
            .filter_map(|y| Some((p.upper_value(x, &y).ok()?, y)))
            .collect();
        if pairs.is_empty() {
            return None;
        }
        pairs.sort_by(|a, b| grid::cmp_sample(a.0, &a.1, b.0, &b.1));
        let best = pairs[0].0;
        pairs.retain(|(v, _)| *v <= best + grid.grid_opt_tol());
        Some((best, pairs))
    });
    if r.samples.is_empty() {
        return Err(SolveError::NoFeasiblePair);
    }
    let best = r.samples[0].value;
    let mut pairs: Vec<(f64, Vec<f64>)> = Vec::new();
    for s in &r.samples {
        for (v, y) in &s.data {
            if *v <= best + grid.grid_opt_tol() {
                let mut xy = s.point.clone();
                xy.extend_from_slice(y);
                pairs.push((*v, xy));
            }
        }
    }
    pairs.sort_by(|a, b| grid::cmp_sample(a.0, &a.1, b.0, &b.1));
    let truncated = r.truncated || pairs.len() > MAX_ARGMIN_POINTS;
    pairs.truncate(MAX_ARGMIN_POINTS);
    Ok(SbpSolution {
        set: SolutionSet {
            best: Some(pairs[0].0),
            values: pairs.iter().map(|p| p.0).collect(),
            points: pairs.into_iter().map(|p| p.1).collect(),
            truncated,
            evaluations: r.evaluations,
        },
        lower_infeasible_x: infeasible.into_inner(),
    })
}
