//! Two-firm market application: profit models, the horizontal, vertical and
//! uneven perspectives, resource sweeps over `b1` and the VI-based easy
//! solution check.
//!
//! Profits are maximized, but every solver minimizes, so the built models
//! carry `-Π1` and `-Π2`. Values reported from this module are profits.

mod file;
mod sweep;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, VarSpace};
use crate::model::{reformulate, BilevelProblem, ConstraintSet, GnepMode, GnepProblem, Interval, ModelError};
use crate::solve::{GridSpec, SolveError};

pub use file::{load_market, parse_market};
pub use sweep::{
    check_relations, compare_models, sweep_b1, vi_easy_check, B1Sample, SweepResult, SWEEP_CSV_HEADER,
};

#[derive(Debug, Error)]
pub enum MarketError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("the market has no budget constraint")]
    NoBudget,
    #[error("no feasible production plan: min a1 + min a2 = {0} exceeds b = {1}")]
    EmptyFeasible(f64, f64),
    #[error("no sampled b1 lies in B")]
    EmptyB,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Perspective {
    Horizontal,
    Vertical,
    Uneven,
}

/// Shared resource: `a1(q1) + a2(q2) <= b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub a1: Expr,
    pub a2: Expr,
    pub b: f64,
}

/// Profits and technology of the two firms. Expressions are over
/// `space = [q1 (n1) | q2 (n2)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    pub name: Option<String>,
    pub n1: usize,
    pub n2: usize,
    pub space: VarSpace,
    pub pi1: Expr,
    pub pi2: Expr,
    pub x1: Vec<Interval>,
    pub x2: Vec<Interval>,
    pub budget: Option<Budget>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MarketGame {
    Game(GnepProblem),
    Bilevel(BilevelProblem),
}

impl MarketModel {
    pub fn market_space(n1: usize, n2: usize) -> VarSpace {
        VarSpace::new([("q1", n1), ("q2", n2)]).expect("valid market space")
    }

    pub fn dim(&self) -> usize {
        self.n1 + self.n2
    }

    /// True when firm 2's profit ignores `q1`.
    pub fn pi2_independent_of_q1(&self) -> bool {
        !self.pi2.depends_on(0..self.n1)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let q1 = 0..self.n1;
        let q2 = self.n1..self.dim();
        if let Some(bud) = &self.budget {
            if bud.a1.depends_on(q2.clone()) {
                return Err(MarketError::Invalid("a1 must depend on q1 only".into()));
            }
            if bud.a2.depends_on(q1) {
                return Err(MarketError::Invalid("a2 must depend on q2 only".into()));
            }
            if !(bud.b.is_finite() && bud.b > 0.0) {
                return Err(MarketError::Invalid(format!("b must be positive, found {}", bud.b)));
            }
        }
        for b in self.x1.iter().chain(&self.x2) {
            if !(b.lo.is_finite() && b.hi.is_finite() && b.lo <= b.hi) {
                return Err(MarketError::Invalid(format!("invalid box [{}, {}]", b.lo, b.hi)));
            }
        }
        Ok(())
    }

    /// Grid minima of `a1` over `X¹` and `a2` over `X²`.
    pub fn budget_minima(&self, grid: &GridSpec) -> Option<(f64, f64)> {
        let bud = self.budget.as_ref()?;
        Some((
            sweep::min_over_box(&bud.a1, &self.x1, 0, self.dim(), grid),
            sweep::min_over_box(&bud.a2, &self.x2, self.n1, self.dim(), grid),
        ))
    }

    /// Probes `{q1 ∈ X¹, q2 ∈ X², a1 + a2 <= b}` for a grid point.
    pub fn check_feasible(&self, grid: &GridSpec) -> Result<(), MarketError> {
        if let (Some((m1, m2)), Some(bud)) = (self.budget_minima(grid), &self.budget) {
            if m1 + m2 > bud.b + grid.feas_tol {
                return Err(MarketError::EmptyFeasible(m1 + m2, bud.b));
            }
        }
        Ok(())
    }

    /// Vertical model with firm 1 leading. With `b1` the budget is split:
    /// `a1 <= b1` for the leader and `a2 <= b - b1` for the follower.
    pub fn vertical(&self, b1: Option<f64>) -> BilevelProblem {
        let (n1, n2) = (self.n1, self.n2);
        let space = VarSpace::new([("q1", n1), ("q2", n2), ("w2", n2)]).expect("valid layout");
        let on_y = |i: usize| i;
        let on_w = move |i: usize| if i >= n1 { i + n2 } else { i };
        let mut upper = Vec::new();
        let mut lower = Vec::new();
        let mut coupling = Vec::new();
        if let Some(bud) = &self.budget {
            match b1 {
                Some(b1) => {
                    upper.push(Expr::sub(bud.a1.clone(), Expr::constant(b1)));
                    lower.push(Expr::sub(bud.a2.remap(&on_w), Expr::constant(bud.b - b1)));
                }
                None => coupling.push(Expr::sub(
                    Expr::add(bud.a1.clone(), bud.a2.remap(&on_w)),
                    Expr::constant(bud.b),
                )),
            }
        }
        BilevelProblem {
            name: self.name.clone(),
            n1,
            n2,
            space,
            upper_objective: Expr::neg(self.pi1.remap(&on_y)),
            upper_set: ConstraintSet::new((0..n1).collect(), self.x1.clone(), upper),
            lower_objective: Expr::neg(self.pi2.remap(&on_w)),
            lower_set: ConstraintSet::new((n1 + n2..n1 + 2 * n2).collect(), self.x2.clone(), lower),
            coupling,
        }
    }

    /// Horizontal game: both firms move simultaneously; a shared budget
    /// appears in both players' constraints.
    pub fn horizontal(&self, b1: Option<f64>) -> GnepProblem {
        let p = self.vertical(b1);
        let mut g = reformulate(&p, GnepMode::SameLevel).expect("same-level reformulation never fails");
        let shared = g.follower.coupling.clone();
        g.leader.coupling.extend(shared);
        g
    }

    /// Uneven horizontal game with coupling `Π2(q1, q2) >= Π2(q1, w2)`.
    pub fn uneven(&self, b1: Option<f64>) -> GnepProblem {
        reformulate(&self.vertical(b1), GnepMode::Uneven).expect("uneven reformulation never fails")
    }

    /// Firm 1's profit at a point of the bilevel layout `[q1 | q2 | w2]`.
    pub fn profit1(&self, layout_point: &[f64]) -> Option<f64> {
        self.pi1.eval(&layout_point[..self.dim()]).ok()
    }
}

/// Builds one of the three market perspectives (profits negated).
pub fn build_market_models(
    m: &MarketModel,
    perspective: Perspective,
    grid: &GridSpec,
) -> Result<MarketGame, MarketError> {
    m.validate()?;
    m.check_feasible(grid)?;
    Ok(match perspective {
        Perspective::Horizontal => MarketGame::Game(m.horizontal(None)),
        Perspective::Vertical => MarketGame::Bilevel(m.vertical(None)),
        Perspective::Uneven => MarketGame::Game(m.uneven(None)),
    })
}
