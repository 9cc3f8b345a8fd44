use serde::{Deserialize, Serialize};

use super::BilevelProblem;
use crate::solve::{solve_lower, GridSpec};

/// Structural flags read off variable occurrences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemClass {
    /// No `x` in `g`: the Stackelberg case.
    pub g_independent_of_x: bool,
    /// No `x` in `f` or `g`.
    pub lower_independent_of_x: bool,
    /// `U ∩ K(x)` does not move with `x`.
    pub feasible_map_fixed: bool,
    /// Sufficient condition for a fixed solution map.
    pub solution_map_fixed_syntactic: bool,
}

pub fn classify_problem(p: &BilevelProblem) -> ProblemClass {
    let xr = p.x_range();
    let g_free = p.coupling.iter().all(|g| !g.depends_on(xr.clone()));
    let f_free = !p.lower_objective.depends_on(xr.clone());
    // U is over w alone by construction, so K carries all x-dependence.
    ProblemClass {
        g_independent_of_x: g_free,
        lower_independent_of_x: g_free && f_free,
        feasible_map_fixed: g_free,
        solution_map_fixed_syntactic: g_free && f_free,
    }
}

/// Numeric probe of whether `S(x)` stays put across sampled `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionMapProbe {
    pub samples: Vec<Vec<f64>>,
    /// Largest Hausdorff distance between `S(x_0)` and any other `S(x_k)`.
    pub max_distance: f64,
    pub tolerance: f64,
    pub probably_fixed: bool,
}

fn hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(s, t)| (s - t).abs()).fold(0.0, f64::max);
    let one_way = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter()
            .map(|p| b.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}

/// Solves the lower level at `k` points along the diagonal of the `x` box and
/// compares the solution sets. Tolerance is one coarse grid step of `w`.
pub fn probe_solution_map(p: &BilevelProblem, k: usize, grid: &GridSpec) -> SolutionMapProbe {
    let k = k.max(2);
    let tolerance = p
        .w_bounds()
        .iter()
        .map(|b| b.width() / (grid.points - 1) as f64)
        .fold(0.0, f64::max)
        * 1.001;
    let samples: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let t = i as f64 / (k - 1) as f64;
            p.x_bounds().iter().map(|b| b.lo + b.width() * t).collect()
        })
        .collect();
    let sets: Vec<Vec<Vec<f64>>> = samples.iter().map(|x| solve_lower(p, x, grid).points).collect();
    let mut max_distance: f64 = 0.0;
    for s in &sets[1..] {
        let d = match (sets[0].is_empty(), s.is_empty()) {
            (true, true) => 0.0,
            (false, false) => hausdorff(&sets[0], s),
            _ => f64::INFINITY,
        };
        max_distance = max_distance.max(d);
    }
    SolutionMapProbe {
        samples,
        max_distance,
        tolerance,
        probably_fixed: max_distance <= tolerance,
    }
}
