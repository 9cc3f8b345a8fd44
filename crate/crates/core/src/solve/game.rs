use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{cmp_sample, grid_coord};
use super::{grid_search, GridSpec, SolutionSet};
use crate::model::{GnepProblem, Interval, Player, PlayerProblem};

/// Leader argmin points examined per follower grid point.
const LEADER_CANDIDATES: usize = 32;
const POLISH_ITERS: usize = 50;

/// A triple with its four residual groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumCandidate {
    /// Full layout point `[x | y | w]`.
    pub point: Vec<f64>,
    pub leader_feasibility: f64,
    /// Player value minus its best response value (clamped at 0).
    pub leader_gap: f64,
    pub leader_best_response: Option<Vec<f64>>,
    pub leader_best_value: Option<f64>,
    pub follower_feasibility: f64,
    pub follower_gap: f64,
    pub follower_best_response: Option<Vec<f64>>,
    pub follower_best_value: Option<f64>,
    pub verdict: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonConvergence {
    pub iterations: usize,
    /// Last few iterates, oldest first.
    pub tail: Vec<Vec<f64>>,
    pub reason: String,
}

impl std::fmt::Display for NonConvergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "no convergence after {} iterations: {}", self.iterations, self.reason)
    }
}

fn with_vars(point: &[f64], vars: &[usize], coords: &[f64]) -> Vec<f64> {
    let mut p = point.to_vec();
    for (&i, &c) in vars.iter().zip(coords) {
        p[i] = c;
    }
    p
}

fn own(point: &[f64], pl: &PlayerProblem) -> Vec<f64> {
    pl.vars.iter().map(|&i| point[i]).collect()
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(s, t)| (s - t).abs()).fold(0.0, f64::max)
}

/// ε-argmin of one player's problem with rival variables taken from `point`.
/// Returned points are over the player's own variables.
pub fn best_response(g: &GnepProblem, who: Player, point: &[f64], grid: &GridSpec) -> SolutionSet {
    let pl = g.player(who);
    let tol = grid.grid_feas_tol();
    let r = grid_search(&pl.bounds, grid, |z| {
        let p = with_vars(point, &pl.vars, z);
        if pl.violation(&p).ok()? > tol {
            return None;
        }
        Some((pl.objective.eval(&p).ok()?, ()))
    });
    SolutionSet::from_search(r)
}

fn residuals(pl: &PlayerProblem, point: &[f64], br: &SolutionSet) -> (f64, f64, Option<Vec<f64>>) {
    let feas = pl.violation(point).unwrap_or(f64::INFINITY);
    let value = pl.objective.eval(point).unwrap_or(f64::INFINITY);
    let gap = match br.best {
        Some(b) => (value - b).max(0.0),
        None => 0.0,
    };
    (feas, gap, br.best_point().map(<[f64]>::to_vec))
}

fn assemble(
    g: &GnepProblem,
    point: &[f64],
    leader_br: &SolutionSet,
    follower_br: &SolutionSet,
    grid: &GridSpec,
) -> EquilibriumCandidate {
    let (lf, lg, lb) = residuals(&g.leader, point, leader_br);
    let (ff, fg, fb) = residuals(&g.follower, point, follower_br);
    EquilibriumCandidate {
        point: point.to_vec(),
        leader_feasibility: lf,
        leader_gap: lg,
        leader_best_response: lb,
        leader_best_value: leader_br.best,
        follower_feasibility: ff,
        follower_gap: fg,
        follower_best_response: fb,
        follower_best_value: follower_br.best,
        verdict: lf <= grid.feas_tol && lg <= grid.opt_tol && ff <= grid.feas_tol && fg <= grid.opt_tol,
    }
}

/// Feasibility and optimality residuals of both players at `point`.
pub fn equilibrium_residuals(g: &GnepProblem, point: &[f64], grid: &GridSpec) -> EquilibriumCandidate {
    let lbr = best_response(g, Player::Leader, point, grid);
    let fbr = best_response(g, Player::Follower, point, grid);
    assemble(g, point, &lbr, &fbr, grid)
}

/// Gauss-Seidel best-response iteration: follower first, then leader, until
/// successive iterates move less than `opt_tol` in the max norm.
pub fn alternating_br(
    g: &GnepProblem,
    start: &[f64],
    max_iters: usize,
    grid: &GridSpec,
) -> Result<EquilibriumCandidate, NonConvergence> {
    let mut current = start.to_vec();
    let mut tail: Vec<Vec<f64>> = vec![current.clone()];
    let fail = |iterations, tail: &[Vec<f64>], reason: String| NonConvergence {
        iterations,
        tail: tail[tail.len().saturating_sub(5)..].to_vec(),
        reason,
    };
    for it in 1..=max_iters {
        let fbr = best_response(g, Player::Follower, &current, grid);
        let Some(fz) = fbr.best_point() else {
            return Err(fail(it, &tail, "follower problem infeasible".into()));
        };
        let next = with_vars(&current, &g.follower.vars, fz);
        let lbr = best_response(g, Player::Leader, &next, grid);
        let Some(lz) = lbr.best_point() else {
            return Err(fail(it, &tail, "leader problem infeasible".into()));
        };
        let next = with_vars(&next, &g.leader.vars, lz);
        let moved = inf_dist(&next, &current);
        current = next;
        tail.push(current.clone());
        if moved < grid.opt_tol {
            let c = equilibrium_residuals(g, &current, grid);
            if c.verdict {
                return Ok(c);
            }
            return Err(fail(it, &tail, "fixed point failed the equilibrium check".into()));
        }
    }
    Err(fail(max_iters, &tail, "iteration limit reached".into()))
}

/// Smallest coarse step over a player's coordinates.
fn coarse_step(bounds: &[Interval], grid: &GridSpec) -> f64 {
    bounds
        .iter()
        .map(|b| grid.step(b.width()))
        .filter(|s| *s > 0.0)
        .fold(f64::INFINITY, f64::min)
}

/// Enumerates verified equilibria: for each coarse follower grid point, the
/// leader's argmin set is computed and every resulting triple is checked.
/// Triples where the follower is off by at most one coarse step are polished
/// by [`alternating_br`]. Output is deduplicated with radius half a coarse step.
pub fn enumerate_equilibria_grid(g: &GnepProblem, grid: &GridSpec) -> Vec<EquilibriumCandidate> {
    let fb = &g.follower.bounds;
    let dims: Vec<usize> = fb.iter().map(|b| if b.width() == 0.0 { 1 } else { grid.points }).collect();
    let total: usize = dims.iter().product();
    let step = coarse_step(fb, grid).min(coarse_step(&g.leader.bounds, grid));
    let base = vec![0.0; g.dim()];

    let found: Vec<Vec<EquilibriumCandidate>> = (0..total)
        .into_par_iter()
        .map(|mut idx| {
            let mut z = vec![0.0; fb.len()];
            for d in (0..fb.len()).rev() {
                z[d] = grid_coord(fb[d], idx % dims[d], dims[d]);
                idx /= dims[d];
            }
            let at_w = with_vars(&base, &g.follower.vars, &z);
            let lbr = best_response(g, Player::Leader, &at_w, grid);
            let mut out = Vec::new();
            for a in lbr.points.iter().take(LEADER_CANDIDATES) {
                let point = with_vars(&at_w, &g.leader.vars, a);
                let fbr = best_response(g, Player::Follower, &point, grid);
                let c = assemble(g, &point, &lbr, &fbr, grid);
                if c.verdict {
                    out.push(c);
                } else if c.leader_feasibility <= grid.feas_tol
                    && fbr
                        .best_point()
                        .is_some_and(|b| inf_dist(b, &own(&point, &g.follower)) <= step * 1.001)
                {
                    if let Ok(c) = alternating_br(g, &point, POLISH_ITERS, grid) {
                        out.push(c);
                    }
                }
            }
            out
        })
        .collect();

    let mut all: Vec<EquilibriumCandidate> = found.into_iter().flatten().collect();
    all.sort_by(|a, b| cmp_sample(0.0, &a.point, 0.0, &b.point));
    let radius = 0.5 * step;
    let mut kept: Vec<EquilibriumCandidate> = Vec::new();
    for c in all {
        if kept.iter().all(|k| inf_dist(&k.point, &c.point) >= radius) {
            kept.push(c);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reformulate, GnepMode};
    use crate::solve::tests::{ex, EX1, EX2, EX5};

    fn near(c: &[EquilibriumCandidate], target: &[f64], tol: f64) -> bool {
        c.iter().any(|e| inf_dist(&e.point, target) <= tol)
    }

    #[test]
    fn best_responses_of_example_one() {
        let g = reformulate(&ex(EX1), GnepMode::Uneven).unwrap();
        let grid = GridSpec::default();
        let f = best_response(&g, Player::Follower, &[1.0, 0.0, 0.5], &grid);
        assert!(inf_dist(f.best_point().unwrap(), &[0.0]) < 1e-9);
        let l = best_response(&g, Player::Leader, &[0.0, 0.0, 0.0], &grid);
        assert!(inf_dist(l.best_point().unwrap(), &[1.0, 0.0]) < 1e-6);
        let l = best_response(&g, Player::Leader, &[0.0, 0.0, -1.0], &grid);
        assert!(inf_dist(l.best_point().unwrap(), &[2.0, -1.0]) < 1e-6);
    }

    #[test]
    fn alternating_reaches_fixed_points() {
        let grid = GridSpec::default();
        let g7 = reformulate(&ex(EX5), GnepMode::Uneven).unwrap();
        let c = alternating_br(&g7, &[0.0, 1.0, 0.0], 20, &grid).unwrap();
        assert!(inf_dist(&c.point, &[0.0, 1.0, 1.0]) < 1e-6, "{:?}", c.point);
        let g1 = reformulate(&ex(EX1), GnepMode::Uneven).unwrap();
        let c = alternating_br(&g1, &[1.0, 0.0, 0.0], 20, &grid).unwrap();
        assert!(inf_dist(&c.point, &[1.0, 0.0, 0.0]) < 1e-9);
    }

    #[test]
    fn iteration_limit_is_reported() {
        let g1 = reformulate(&ex(EX1), GnepMode::Uneven).unwrap();
        let e = alternating_br(&g1, &[2.0, 0.5, 0.5], 0, &GridSpec::default()).unwrap_err();
        assert_eq!(e.reason, "iteration limit reached");
    }

    #[test]
    fn enumeration_on_examples() {
        let grid = GridSpec::default();
        let mut p1 = ex(EX1);
        // Follower box restricted to λ ∈ [-1, 0].
        p1.lower_set.bounds[0] = Interval::new(-1.0, 0.0);
        let g1 = reformulate(&p1, GnepMode::Uneven).unwrap();
        let eq = enumerate_equilibria_grid(&g1, &grid);
        let res = 0.02;
        for lam in [0.0, -0.5, -1.0] {
            assert!(near(&eq, &[1.0 - lam, lam, lam], res), "missing λ = {lam}");
        }
        assert!(eq.iter().all(|c| c.verdict));

        let g2 = reformulate(&ex(EX2), GnepMode::Uneven).unwrap();
        let eq = enumerate_equilibria_grid(&g2, &grid);
        assert!(!near(&eq, &[0.5, 0.5, 0.5], 1e-6));

        let g7 = reformulate(&ex(EX5), GnepMode::Uneven).unwrap();
        let eq = enumerate_equilibria_grid(&g7, &grid);
        assert!(near(&eq, &[0.0, 1.0, 1.0], 0.01));
    }

    #[test]
    fn example_two_midpoint_is_not_an_equilibrium() {
        let g2 = reformulate(&ex(EX2), GnepMode::Uneven).unwrap();
        let c = equilibrium_residuals(&g2, &[0.5, 0.5, 0.5], &GridSpec::default());
        assert!(!c.verdict);
        assert!(c.leader_best_value.unwrap() < 0.5 - 1e-3);
        assert!(inf_dist(c.leader_best_response.as_deref().unwrap(), &[0.0, 0.5]) < 1e-3);
    }
}
