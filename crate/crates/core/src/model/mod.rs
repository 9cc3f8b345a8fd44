//! Bilevel problem data, problem-file ingestion, GNEP reformulations and
//! structural classification.
//!
//! Every bilevel problem lives in the layout `[x (n1) | y (n2) | w (n2)]`:
//! `x` is the upper-level block, `y` the upper-level copy of the lower
//! variables, and `w` the follower's own block. The lower objective and the
//! `g` constraints are stored over `(x, w)`; their `(x, y)` versions are
//! obtained by renaming `w` to `y`.

mod classify;
mod file;
mod gnep;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Expr, ExprError, VarSpace};

pub use classify::{classify_problem, probe_solution_map, ProblemClass, SolutionMapProbe};
pub use file::{load_problem, parse_problem};
pub(crate) use file::{parse_box_line, section_of, strip_comment};
pub use gnep::{reformulate, GnepMode, GnepProblem, Player, PlayerProblem};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Expr {
        line: usize,
        #[source]
        source: ExprError,
    },
    #[error("missing search box for variable `{0}`")]
    MissingBox(String),
    #[error("dimension mismatch: y has dimension {y}, w has dimension {w}")]
    DimensionMismatch { y: usize, w: usize },
    #[error("hierarchical reformulation needs a lower level that does not depend on x")]
    LowerDependsOnX,
    #[error("{0}")]
    Invalid(String),
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Closed interval `[lo, hi]` used as a finite search box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Distance outside the interval, 0 when inside.
    pub fn violation(&self, v: f64) -> f64 {
        (self.lo - v).max(v - self.hi).max(0.0)
    }
}

/// A box over some variables of a layout plus inequality constraints
/// `expr <= 0` over the same layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub vars: Vec<usize>,
    pub bounds: Vec<Interval>,
    pub constraints: Vec<Expr>,
}

impl ConstraintSet {
    pub fn new(vars: Vec<usize>, bounds: Vec<Interval>, constraints: Vec<Expr>) -> Self {
        debug_assert_eq!(vars.len(), bounds.len());
        Self { vars, bounds, constraints }
    }

    /// Largest box or constraint violation at `point` (0 when feasible).
    pub fn violation(&self, point: &[f64]) -> Result<f64, EvalError> {
        let mut worst = self
            .vars
            .iter()
            .zip(&self.bounds)
            .map(|(&i, b)| b.violation(point[i]))
            .fold(0.0, f64::max);
        for c in &self.constraints {
            worst = worst.max(c.eval(point)?);
        }
        Ok(worst)
    }

    /// Violation of the inequality list only, ignoring the box.
    pub fn constraint_violation(&self, point: &[f64]) -> Result<f64, EvalError> {
        self.constraints
            .iter()
            .try_fold(0.0_f64, |acc, c| Ok(acc.max(c.eval(point)?)))
    }

    pub fn contains(&self, point: &[f64], tol: f64) -> bool {
        matches!(self.violation(point), Ok(v) if v <= tol)
    }

    /// Same set with every variable index passed through `map`.
    pub fn remap(&self, map: &impl Fn(usize) -> usize) -> Self {
        Self {
            vars: self.vars.iter().map(|&i| map(i)).collect(),
            bounds: self.bounds.clone(),
            constraints: self.constraints.iter().map(|c| c.remap(map)).collect(),
        }
    }
}

/// Optimistic bilevel program: minimize `F(x, y)` over `x ∈ X`, `y ∈ S(x)`,
/// where `S(x)` solves `min_w f(x, w)` s.t. `w ∈ U`, `g(x, w) <= 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilevelProblem {
    pub name: Option<String>,
    pub n1: usize,
    pub n2: usize,
    pub space: VarSpace,
    /// `F`, over `(x, y)`.
    pub upper_objective: Expr,
    /// `X`, over `x`.
    pub upper_set: ConstraintSet,
    /// `f`, over `(x, w)`.
    pub lower_objective: Expr,
    /// `U`, over `w`.
    pub lower_set: ConstraintSet,
    /// `g`, over `(x, w)`.
    pub coupling: Vec<Expr>,
}

impl BilevelProblem {
    pub fn layout(n1: usize, n2: usize) -> VarSpace {
        VarSpace::new([("x", n1), ("y", n2), ("w", n2)]).expect("valid layout")
    }

    pub fn x_range(&self) -> Range<usize> {
        0..self.n1
    }

    pub fn y_range(&self) -> Range<usize> {
        self.n1..self.n1 + self.n2
    }

    pub fn w_range(&self) -> Range<usize> {
        self.n1 + self.n2..self.n1 + 2 * self.n2
    }

    pub fn dim(&self) -> usize {
        self.n1 + 2 * self.n2
    }

    /// Maps a `w` index to the matching `y` index; other indices pass through.
    pub fn w_to_y(&self) -> impl Fn(usize) -> usize {
        let (n1, n2) = (self.n1, self.n2);
        move |i| if i >= n1 + n2 { i - n2 } else { i }
    }

    /// `f(x, y)`.
    pub fn lower_objective_on_y(&self) -> Expr {
        self.lower_objective.remap(&self.w_to_y())
    }

    /// `U` over the `y` block.
    pub fn lower_set_on_y(&self) -> ConstraintSet {
        self.lower_set.remap(&self.w_to_y())
    }

    /// `g(x, y)`.
    pub fn coupling_on_y(&self) -> Vec<Expr> {
        let m = self.w_to_y();
        self.coupling.iter().map(|g| g.remap(&m)).collect()
    }

    pub fn x_bounds(&self) -> &[Interval] {
        &self.upper_set.bounds
    }

    pub fn w_bounds(&self) -> &[Interval] {
        &self.lower_set.bounds
    }

    /// Full layout vector `[x | y | w]`.
    pub fn compose(&self, x: &[f64], y: &[f64], w: &[f64]) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.dim());
        p.extend_from_slice(x);
        p.extend_from_slice(y);
        p.extend_from_slice(w);
        p
    }

    pub fn upper_value(&self, x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
        self.upper_objective.eval(&self.compose(x, y, y))
    }

    pub fn lower_value(&self, x: &[f64], w: &[f64]) -> Result<f64, EvalError> {
        self.lower_objective.eval(&self.compose(x, w, w))
    }

    /// Largest violation of `U ∩ K(x)` at `w`.
    pub fn lower_violation(&self, x: &[f64], w: &[f64]) -> Result<f64, EvalError> {
        let p = self.compose(x, w, w);
        let mut v = self.lower_set.violation(&p)?;
        for g in &self.coupling {
            v = v.max(g.eval(&p)?);
        }
        Ok(v)
    }

    pub fn upper_violation(&self, x: &[f64]) -> Result<f64, EvalError> {
        let mut p = x.to_vec();
        p.resize(self.dim(), 0.0);
        self.upper_set.violation(&p)
    }

    /// Individual `g_i(x, w)` values.
    pub fn coupling_values(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>, EvalError> {
        let p = self.compose(x, w, w);
        self.coupling.iter().map(|g| g.eval(&p)).collect()
    }

    /// Structural checks shared by the loader and programmatic builders.
    pub fn validate(&self) -> Result<(), ModelError> {
        let (x, y, w) = (self.x_range(), self.y_range(), self.w_range());
        let only = |e: &Expr, allowed: &[&Range<usize>], what: &str| -> Result<(), ModelError> {
            for v in e.variables() {
                if !allowed.iter().any(|r| r.contains(&v)) {
                    return Err(ModelError::Invalid(format!(
                        "{what} references `{}`, which is not allowed there",
                        self.space.name(v)
                    )));
                }
            }
            Ok(())
        };
        only(&self.upper_objective, &[&x, &y], "upper objective")?;
        for c in &self.upper_set.constraints {
            only(c, &[&x], "upper constraint")?;
        }
        only(&self.lower_objective, &[&x, &w], "lower objective")?;
        for c in &self.lower_set.constraints {
            only(c, &[&w], "uconstraint")?;
        }
        for c in &self.coupling {
            only(c, &[&x, &w], "gconstraint")?;
        }
        for b in self.upper_set.bounds.iter().chain(&self.lower_set.bounds) {
            if !(b.lo.is_finite() && b.hi.is_finite() && b.lo <= b.hi) {
                return Err(ModelError::Invalid(format!("invalid search box [{}, {}]", b.lo, b.hi)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    #[test]
    fn interval_violation() {
        let b = Interval::new(-1.0, 1.0);
        assert_eq!(b.violation(0.3), 0.0);
        assert_eq!(b.violation(1.5), 0.5);
        assert_eq!(b.violation(-3.0), 2.0);
    }

    #[test]
    fn constraint_set_reports_worst_violation() {
        let s = VarSpace::new([("x", 1), ("y", 1)]).unwrap();
        let c = ConstraintSet::new(
            vec![0],
            vec![Interval::new(0.0, 1.0)],
            vec![parse_expr("x + y - 1", &s).unwrap()],
        );
        assert_eq!(c.violation(&[0.5, 0.25]).unwrap(), 0.0);
        assert_eq!(c.violation(&[0.5, 1.0]).unwrap(), 0.5);
        assert_eq!(c.violation(&[2.0, -2.0]).unwrap(), 1.0);
        assert!(c.contains(&[1.0, 0.0], 0.0));
    }
}
