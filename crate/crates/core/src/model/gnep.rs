use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{BilevelProblem, Interval, ModelError};
use crate::expr::{EvalError, Expr, VarSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GnepMode {
    Uneven,
    SameLevel,
    Hierarchical,
}

impl GnepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GnepMode::Uneven => "uneven",
            GnepMode::SameLevel => "same-level",
            GnepMode::Hierarchical => "hierarchical",
        }
    }
}

impl std::str::FromStr for GnepMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uneven" => Ok(GnepMode::Uneven),
            "same-level" => Ok(GnepMode::SameLevel),
            "hierarchical" => Ok(GnepMode::Hierarchical),
            other => Err(format!("unknown mode `{other}` (expected uneven, same-level or hierarchical)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Player {
    Leader,
    Follower,
}

/// One player's problem: minimize `objective` over `vars` inside `bounds`,
/// subject to `private <= 0` and `coupling <= 0`. Expressions are over the
/// game's full layout; rival variables are read-only parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerProblem {
    pub vars: Vec<usize>,
    pub bounds: Vec<Interval>,
    pub objective: Expr,
    pub private: Vec<Expr>,
    pub coupling: Vec<Expr>,
}

impl PlayerProblem {
    /// Box violation over own variables plus the worst constraint value.
    pub fn violation(&self, point: &[f64]) -> Result<f64, EvalError> {
        let mut v = self
            .vars
            .iter()
            .zip(&self.bounds)
            .map(|(&i, b)| b.violation(point[i]))
            .fold(0.0, f64::max);
        for c in self.private.iter().chain(&self.coupling) {
            v = v.max(c.eval(point)?);
        }
        Ok(v)
    }

    pub fn private_violation(&self, point: &[f64]) -> Result<f64, EvalError> {
        let mut v = self
            .vars
            .iter()
            .zip(&self.bounds)
            .map(|(&i, b)| b.violation(point[i]))
            .fold(0.0, f64::max);
        for c in &self.private {
            v = v.max(c.eval(point)?);
        }
        Ok(v)
    }

    pub fn coupling_violation(&self, point: &[f64]) -> Result<f64, EvalError> {
        self.coupling.iter().try_fold(0.0_f64, |acc, c| Ok(acc.max(c.eval(point)?)))
    }
}

/// Two-player game over the bilevel layout `[x | y | w]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnepProblem {
    pub mode: GnepMode,
    pub space: VarSpace,
    pub n1: usize,
    pub n2: usize,
    pub leader: PlayerProblem,
    pub follower: PlayerProblem,
}

impl GnepProblem {
    pub fn player(&self, who: Player) -> &PlayerProblem {
        match who {
            Player::Leader => &self.leader,
            Player::Follower => &self.follower,
        }
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Variables actually used by the game, in layout order.
    pub fn active_vars(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.leader.vars.iter().chain(&self.follower.vars).copied().collect();
        v.sort_unstable();
        v
    }

    /// Lays a point given over [`active_vars`](Self::active_vars) into the full layout.
    pub fn embed(&self, coords: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        for (&i, &c) in self.active_vars().iter().zip(coords) {
            p[i] = c;
        }
        p
    }

    /// Renders the game in the problem-file grammar with a `[coupling]` section.
    pub fn render(&self) -> String {
        let s = &self.space;
        let mut out = String::new();
        let _ = writeln!(out, "# {} game", self.mode.as_str());
        let _ = writeln!(out, "[dims]");
        let _ = writeln!(out, "n1={} n2={}", self.n1, self.n2);
        for (title, pl) in [("leader", &self.leader), ("follower", &self.follower)] {
            let _ = writeln!(out, "[{title}]");
            let names: Vec<&str> = pl.vars.iter().map(|&i| s.name(i)).collect();
            let _ = writeln!(out, "vars = {}", names.join(", "));
            let _ = writeln!(out, "objective = {}", pl.objective.render(s));
            for c in &pl.private {
                let _ = writeln!(out, "constraint = {}", c.render(s));
            }
        }
        let _ = writeln!(out, "[coupling]");
        for (who, pl) in [("leader", &self.leader), ("follower", &self.follower)] {
            for c in &pl.coupling {
                let _ = writeln!(out, "{who} = {}", c.render(s));
            }
        }
        let _ = writeln!(out, "[box]");
        for pl in [&self.leader, &self.follower] {
            for (&i, b) in pl.vars.iter().zip(&pl.bounds) {
                let _ = writeln!(out, "{} in [{}, {}]", s.name(i), b.lo, b.hi);
            }
        }
        out
    }
}

/// Builds the GNEP associated with a bilevel problem.
pub fn reformulate(p: &BilevelProblem, mode: GnepMode) -> Result<GnepProblem, ModelError> {
    let x_free = |e: &Expr| !e.depends_on(p.x_range());
    if mode == GnepMode::Hierarchical && !(x_free(&p.lower_objective) && p.coupling.iter().all(x_free)) {
        return Err(ModelError::LowerDependsOnX);
    }
    let xs: Vec<usize> = p.x_range().collect();
    let ys: Vec<usize> = p.y_range().collect();
    let ws: Vec<usize> = p.w_range().collect();
    let u_on_y = p.lower_set_on_y();
    let g_on_y = p.coupling_on_y();

    let (leader, follower) = match mode {
        GnepMode::Uneven | GnepMode::Hierarchical => {
            let mut private = p.upper_set.constraints.clone();
            private.extend(u_on_y.constraints.iter().cloned());
            private.extend(g_on_y);
            let leader = PlayerProblem {
                vars: xs.iter().chain(&ys).copied().collect(),
                bounds: p.x_bounds().iter().chain(p.w_bounds()).copied().collect(),
                objective: p.upper_objective.clone(),
                private,
                coupling: vec![Expr::sub(p.lower_objective_on_y(), p.lower_objective.clone())],
            };
            let follower = PlayerProblem {
                vars: ws,
                bounds: p.w_bounds().to_vec(),
                objective: p.lower_objective.clone(),
                private: p.lower_set.constraints.clone(),
                coupling: p.coupling.clone(),
            };
            (leader, follower)
        }
        GnepMode::SameLevel => {
            let leader = PlayerProblem {
                vars: xs,
                bounds: p.x_bounds().to_vec(),
                objective: p.upper_objective.clone(),
                private: p.upper_set.constraints.clone(),
                coupling: Vec::new(),
            };
            let follower = PlayerProblem {
                vars: ys,
                bounds: p.w_bounds().to_vec(),
                objective: p.lower_objective_on_y(),
                private: u_on_y.constraints,
                coupling: g_on_y,
            };
            (leader, follower)
        }
    };
    Ok(GnepProblem {
        mode,
        space: p.space.clone(),
        n1: p.n1,
        n2: p.n2,
        leader,
        follower,
    })
}
