use serde::{Deserialize, Serialize};

use super::{best_response, solve_lower, GridSpec, SolutionSet, SolveError};
use crate::model::{classify_problem, probe_solution_map, reformulate, BilevelProblem, GnepMode, Player};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStageResult {
    /// `x` at which the follower problem was solved in stage 1.
    pub stage1_x: Vec<f64>,
    pub follower_point: Vec<f64>,
    pub follower_value: f64,
    /// Stage-2 argmin set over `[x | y]`.
    pub leader: SolutionSet,
    /// Best triple `[x | y | w]`.
    pub point: Vec<f64>,
    /// False when neither the feasible map nor the solution map is known to
    /// be fixed; the result is then a heuristic.
    pub premise_holds: bool,
    pub premise: String,
}

/// Solves the follower once, then the leader against that follower point.
pub fn solve_two_stage(p: &BilevelProblem, grid: &GridSpec) -> Result<TwoStageResult, SolveError> {
    let class = classify_problem(p);
    let (premise_holds, premise) = if class.solution_map_fixed_syntactic {
        (true, "solution map fixed (syntactic)".to_string())
    } else if probe_solution_map(p, 5, grid).probably_fixed {
        if class.feasible_map_fixed {
            (true, "feasible map fixed".to_string())
        } else {
            (true, "solution map probably fixed (numeric probe)".to_string())
        }
    } else if class.feasible_map_fixed {
        // A fixed feasible map alone does not pin the follower's choice.
        (false, "heuristic only: feasible map fixed but the solution map moves with x".to_string())
    } else {
        (false, "heuristic only: no fixed-map premise".to_string())
    };

    let xb = p.x_bounds();
    let mid: Vec<f64> = xb.iter().map(|b| b.midpoint()).collect();
    let mut stage1_x = mid.clone();
    let mut lower = solve_lower(p, &mid, grid);
    if lower.is_empty() {
        // Fall back to the coarse-grid x nearest the midpoint with a feasible lower level.
        let mut best: Option<(f64, Vec<f64>, SolutionSet)> = None;
        let n = grid.points;
        let total = n.pow(xb.len() as u32);
        for mut idx in 0..total {
            let mut x = vec![0.0; xb.len()];
            for d in (0..xb.len()).rev() {
                x[d] = super::grid::grid_coord(xb[d], idx % n, n);
                idx /= n;
            }
            let d = x.iter().zip(&mid).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if best.as_ref().is_some_and(|b| b.0 <= d) {
                continue;
            }
            let s = solve_lower(p, &x, grid);
            if !s.is_empty() {
                best = Some((d, x, s));
            }
        }
        let (_, x, s) = best.ok_or_else(|| SolveError::FollowerInfeasible(mid.clone()))?;
        stage1_x = x;
        lower = s;
    }
    let follower_point = lower.best_point().expect("nonempty").to_vec();
    let follower_value = lower.best.expect("nonempty");

    let g = reformulate(p, GnepMode::Uneven).map_err(|e| SolveError::Invalid(e.to_string()))?;
    let mut at_w = vec![0.0; p.dim()];
    at_w[p.w_range()].copy_from_slice(&follower_point);
    let leader = best_response(&g, Player::Leader, &at_w, grid);
    let Some(best) = leader.best_point() else {
        return Err(SolveError::NoFeasiblePair);
    };
    let mut point = best.to_vec();
    point.extend_from_slice(&follower_point);
    Ok(TwoStageResult {
        stage1_x,
        follower_point,
        follower_value,
        leader,
        point,
        premise_holds,
        premise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solve::tests::{ex, EX1, EX4};

    #[test]
    fn example_four() {
        let r = solve_two_stage(&ex(EX4), &GridSpec::default()).unwrap();
        assert!(r.premise_holds);
        assert_eq!(r.premise, "feasible map fixed");
        assert!((r.point[0] - 1.0).abs() < 1e-4 && r.point[1].abs() < 1e-4, "{:?}", r.point);
        assert_eq!(r.point[2], 0.0);
    }

    #[test]
    fn hierarchical_toy() {
        let p = ex("[dims]\nn1=1 n2=1\n[upper]\nobjective = (x - 0.3)^2 + y\n[lower]\nobjective = w^2\n\
                    [box]\nx in [-1, 1]\nw in [-1, 1]\n");
        let r = solve_two_stage(&p, &GridSpec::default()).unwrap();
        assert_eq!(r.follower_point, [0.0]);
        assert!((r.point[0] - 0.3).abs() < 1e-6 && r.point[1].abs() < 1e-9);
    }

    #[test]
    fn moving_feasible_map_is_labelled() {
        let r = solve_two_stage(&ex(EX1), &GridSpec::default()).unwrap();
        assert!(!r.premise_holds);
        assert!(r.premise.starts_with("heuristic"));
    }
}
