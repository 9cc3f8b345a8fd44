//! Certificate checkers for bilevel points and game equilibria.
//!
//! Every universal statement is checked on the same grids the solvers use,
//! so verdicts are ε-certificates over the declared search box.

mod report;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{classify_problem, reformulate, BilevelProblem, GnepMode, GnepProblem, Interval};
use crate::solve::{
    equilibrium_residuals, grid_search, solve_lower, solve_sbp_grid, GridSpec, SbpSolution, SolutionSet, SolveError,
};

pub use report::{fmt_num, fmt_point, Condition, GridMeta, VerificationReport, Verdict, CERTIFICATE_NOTE};

pub const DEFAULT_RADIUS: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error("lower level is infeasible at x = {0:?}")]
    LowerInfeasible(Vec<f64>),
    #[error("point has {got} coordinates, expected {expected}")]
    PointLength { got: usize, expected: usize },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// `I(x, w)` plus the separately reported violated indices (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub indices: Vec<usize>,
    pub violated: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn active_set(p: &BilevelProblem, x: &[f64], w: &[f64], tol: f64) -> ActiveSet {
    let values: Vec<f64> = p
        .coupling_values(x, w)
        .unwrap_or_else(|_| vec![f64::INFINITY; p.coupling.len()]);
    ActiveSet {
        indices: (1..=values.len()).filter(|&i| values[i - 1].abs() <= tol).collect(),
        violated: (1..=values.len()).filter(|&i| values[i - 1] > tol).collect(),
        values,
    }
}

/// Four-part equilibrium check: feasibility and optimality of each player.
pub fn check_gnep_equilibrium(g: &GnepProblem, point: &[f64], grid: &GridSpec, radius: f64) -> VerificationReport {
    let c = equilibrium_residuals(g, point, grid);
    let mut r = VerificationReport::new("equilibrium", point, GridMeta::new(grid, radius));
    let gap_cond = |name: &str, gap: f64, br: &Option<Vec<f64>>, best: Option<f64>| {
        let ok = gap <= grid.opt_tol;
        let mut cond = Condition::new(name, Verdict::from_bool(ok)).residual(gap);
        if ok {
            cond = cond.witness(br.clone());
        } else {
            cond = cond.counterexample(br.clone());
        }
        match best {
            Some(b) => cond.note(format!("best response value {}", fmt_num(b))),
            None => cond.note("best response problem has no feasible grid point"),
        }
    };
    r.push(
        Condition::new("leader_feasibility", Verdict::from_bool(c.leader_feasibility <= grid.feas_tol))
            .residual(c.leader_feasibility),
    );
    r.push(gap_cond("leader_optimality", c.leader_gap, &c.leader_best_response, c.leader_best_value));
    r.push(
        Condition::new("follower_feasibility", Verdict::from_bool(c.follower_feasibility <= grid.feas_tol))
            .residual(c.follower_feasibility),
    );
    r.push(gap_cond("follower_optimality", c.follower_gap, &c.follower_best_response, c.follower_best_value));
    r
}

fn is_equilibrium(g: &GnepProblem, point: &[f64], grid: &GridSpec) -> bool {
    equilibrium_residuals(g, point, grid).verdict
}

fn cube(center: &[f64], radius: f64, bounds: &[Interval]) -> Vec<Interval> {
    center
        .iter()
        .zip(bounds)
        .map(|(&c, b)| Interval::new((c - radius).max(b.lo), (c + radius).min(b.hi)))
        .collect()
}

/// Coarse tensor grid over `boxes`, lexicographic order.
fn coarse_points(boxes: &[Interval], n: usize) -> Vec<Vec<f64>> {
    let dims: Vec<usize> = boxes.iter().map(|b| if b.width() == 0.0 { 1 } else { n }).collect();
    let total: usize = dims.iter().product();
    (0..total)
        .map(|mut idx| {
            let mut p = vec![0.0; boxes.len()];
            for d in (0..boxes.len()).rev() {
                let k = idx % dims[d];
                idx /= dims[d];
                let b = boxes[d];
                p[d] = if dims[d] == 1 {
                    b.lo
                } else if k + 1 == dims[d] {
                    b.hi
                } else {
                    b.lo + b.width() * k as f64 / (dims[d] - 1) as f64
                };
            }
            p
        })
        .collect()
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Checks bound to one problem, sharing a per-`x` cache of lower-level solves.
pub struct Verifier<'a> {
    pub problem: &'a BilevelProblem,
    pub grid: GridSpec,
    pub radius: f64,
    lower: Mutex<HashMap<Vec<u64>, Arc<SolutionSet>>>,
    sbp: Mutex<Option<Arc<SbpSolution>>>,
}

impl<'a> Verifier<'a> {
    pub fn new(problem: &'a BilevelProblem, grid: GridSpec, radius: f64) -> Self {
        Self {
            problem,
            grid,
            radius,
            lower: Mutex::new(HashMap::new()),
            sbp: Mutex::new(None),
        }
    }

    fn meta(&self) -> GridMeta {
        GridMeta::new(&self.grid, self.radius)
    }

    pub fn lower(&self, x: &[f64]) -> Arc<SolutionSet> {
        let k = key(x);
        if let Some(s) = self.lower.lock().expect("cache").get(&k) {
            return Arc::clone(s);
        }
        let s = Arc::new(solve_lower(self.problem, x, &self.grid));
        self.lower.lock().expect("cache").insert(k, Arc::clone(&s));
        s
    }

    pub fn sbp(&self) -> Result<Arc<SbpSolution>, SolveError> {
        if let Some(s) = self.sbp.lock().expect("cache").as_ref() {
            return Ok(Arc::clone(s));
        }
        let s = Arc::new(solve_sbp_grid(self.problem, &self.grid)?);
        *self.sbp.lock().expect("cache") = Some(Arc::clone(&s));
        Ok(s)
    }

    fn x_feasible(&self, x: &[f64]) -> bool {
        self.problem
            .upper_violation(x)
            .is_ok_and(|v| v <= self.grid.grid_feas_tol())
    }

    /// W-points over `x`: pairs `(F, y)` with `y ∈ S(x)`, best first.
    fn w_points(&self, x: &[f64]) -> Vec<(f64, Vec<f64>)> {
        if !self.x_feasible(x) {
            return Vec::new();
        }
        let s = self.lower(x);
        let mut out: Vec<(f64, Vec<f64>)> = s
            .points
            .iter()
            .filter_map(|y| Some((self.problem.upper_value(x, y).ok()?, y.clone())))
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal)));
        out
    }

    /// Smallest `F` over W-points with `x` in the `radius` cube around `x0`,
    /// optionally with `y` also in the cube around `y0`.
    fn ball_min(&self, x0: &[f64], y0: Option<&[f64]>, radius: f64) -> Option<(f64, Vec<f64>)> {
        let bounds = cube(x0, radius, self.problem.x_bounds());
        let r = grid_search(&bounds, &self.grid, |x| {
            let best = self.w_points(x).into_iter().find(|(_, y)| {
                y0.map_or(true, |y0| y.iter().zip(y0).all(|(a, b)| (a - b).abs() <= radius))
            })?;
            Some((best.0, best.1))
        });
        let s = r.samples.into_iter().next()?;
        let mut xy = s.point;
        xy.extend_from_slice(&s.data);
        Some((s.value, xy))
    }

    fn split(&self, xy: &[f64]) -> Result<(Vec<f64>, Vec<f64>), VerifyError> {
        let p = self.problem;
        if xy.len() != p.n1 + p.n2 {
            return Err(VerifyError::PointLength {
                got: xy.len(),
                expected: p.n1 + p.n2,
            });
        }
        Ok((xy[..p.n1].to_vec(), xy[p.n1..].to_vec()))
    }

    /// Feasibility, global, strong-local, joint-local and OBP-local verdicts.
    pub fn check_sbp_point(&self, xy: &[f64]) -> Result<VerificationReport, VerifyError> {
        let p = self.problem;
        let (x, y) = self.split(xy)?;
        let mut r = VerificationReport::new("sbp_point", xy, self.meta());
        let s = self.lower(&x);
        let Some(phi) = s.best else {
            return Err(VerifyError::LowerInfeasible(x));
        };
        let f_star = p.upper_value(&x, &y).unwrap_or(f64::NAN);
        let upper = p.upper_violation(&x).unwrap_or(f64::INFINITY);
        let lower = p.lower_violation(&x, &y).unwrap_or(f64::INFINITY);
        let lgap = (p.lower_value(&x, &y).unwrap_or(f64::INFINITY) - phi).max(0.0);
        let res = upper.max(lower).max(lgap);
        let feasible = upper <= self.grid.feas_tol && lower <= self.grid.feas_tol && lgap <= self.grid.opt_tol;
        let mut cond = Condition::new("feasible", Verdict::from_bool(feasible))
            .residual(res)
            .note(format!("F = {}, phi(x) = {}", fmt_num(f_star), fmt_num(phi)));
        if !feasible && lgap > self.grid.opt_tol {
            cond = cond.counterexample(s.best_point().map(<[f64]>::to_vec));
        }
        r.push(cond);
        let infeasible_note = "point is not SBP-feasible";

        // (b) global
        let sbp = self.sbp()?;
        let gap = f_star - sbp.best();
        let global = feasible && gap <= self.grid.opt_tol;
        let mut cond = Condition::new("global", Verdict::from_bool(global)).residual(gap.max(0.0));
        cond = if gap > self.grid.opt_tol {
            cond.counterexample(Some(sbp.best_point().to_vec()))
                .note(format!("better W-point with F = {}", fmt_num(sbp.best())))
        } else if !feasible {
            cond.note(infeasible_note)
        } else {
            cond.note(format!("grid optimum F = {}", fmt_num(sbp.best())))
        };
        r.push(cond);

        // (c), (d): local verdicts at ρ, retried once at ρ/10.
        for (name, joint) in [("strong_local", false), ("joint_local", true)] {
            let mut outcome = None;
            for rad in [self.radius, self.radius / 10.0] {
                let best = self.ball_min(&x, joint.then_some(y.as_slice()), rad);
                let beaten = best.as_ref().is_some_and(|(v, _)| *v < f_star - self.grid.opt_tol);
                outcome = Some((rad, best, beaten));
                if !beaten {
                    break;
                }
            }
            let (rad, best, beaten) = outcome.expect("at least one radius");
            let ok = feasible && !beaten;
            let mut cond = Condition::new(name, Verdict::from_bool(ok))
                .residual(best.as_ref().map_or(0.0, |(v, _)| (f_star - v).max(0.0)));
            cond = if beaten {
                cond.counterexample(best.map(|b| b.1))
                    .note(format!("beaten at radius {} and {}", fmt_num(self.radius), fmt_num(rad)))
            } else if !feasible {
                cond.note(infeasible_note)
            } else {
                cond.note(format!("radius {}", fmt_num(rad)))
            };
            r.push(cond);
        }

        // (e) OBP-local: the optimistic value min over S(x') of F against its value at x.
        let phi_f = self.w_points(&x).first().map_or(f64::INFINITY, |b| b.0);
        let mut outcome = None;
        for rad in [self.radius, self.radius / 10.0] {
            let best = self.ball_min(&x, None, rad);
            let beaten = best.as_ref().is_some_and(|(v, _)| *v < phi_f - self.grid.opt_tol);
            outcome = Some((rad, best, beaten));
            if !beaten {
                break;
            }
        }
        let (rad, best, beaten) = outcome.expect("at least one radius");
        let ok = feasible && !beaten;
        let mut cond = Condition::new("obp_local", Verdict::from_bool(ok))
            .residual(best.as_ref().map_or(0.0, |(v, _)| (phi_f - v).max(0.0)));
        cond = if beaten {
            cond.counterexample(best.map(|b| b.1)).note(format!(
                "optimistic value {} beaten at radius {} and {}",
                fmt_num(phi_f),
                fmt_num(self.radius),
                fmt_num(rad)
            ))
        } else if !feasible {
            cond.note(infeasible_note)
        } else {
            cond.note(format!("radius {}, optimistic value {}", fmt_num(rad), fmt_num(phi_f)))
        };
        r.push(cond);
        Ok(r)
    }

    fn thm_scan(
        &self,
        xs: &[Vec<f64>],
        w: &[f64],
        f_bound: f64,
        indices: &[usize],
    ) -> Vec<(Vec<f64>, f64, Option<(f64, Vec<f64>)>)> {
        // Per x': (x', max violation of the selected g_i at (x', w), best W-point when F <= bound).
        xs.par_iter()
            .map(|xp| {
                let pts = self.w_points(xp);
                let qualifies = pts.first().is_some_and(|b| b.0 <= f_bound);
                let vals = self.problem.coupling_values(xp, w).unwrap_or_default();
                let viol = indices
                    .iter()
                    .map(|&i| vals.get(i - 1).copied().unwrap_or(f64::INFINITY))
                    .fold(f64::NEG_INFINITY, f64::max);
                let best = pts.into_iter().next();
                (xp.clone(), if qualifies { viol } else { f64::NEG_INFINITY }, best)
            })
            .collect()
    }

    fn split_triple(&self, point: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), VerifyError> {
        let p = self.problem;
        if point.len() != p.dim() {
            return Err(VerifyError::PointLength {
                got: point.len(),
                expected: p.dim(),
            });
        }
        Ok((
            point[p.x_range()].to_vec(),
            point[p.y_range()].to_vec(),
            point[p.w_range()].to_vec(),
        ))
    }

    /// `g(x', w*) <= 0` for every W-point `(x', y')` with `F <= F*`.
    pub fn check_thm1(&self, g: &GnepProblem, point: &[f64]) -> Result<VerificationReport, VerifyError> {
        let p = self.problem;
        let (x, y, w) = self.split_triple(point)?;
        let mut r = VerificationReport::new("thm1", point, self.meta());
        if !is_equilibrium(g, point, &self.grid) {
            r.push(Condition::new("thm1", Verdict::NotApplicable).note("point is not a verified equilibrium"));
            return Ok(r);
        }
        if classify_problem(p).g_independent_of_x {
            r.push(
                Condition::new("thm1", Verdict::True)
                    .residual(0.0)
                    .note("holds by structure: g does not depend on x, so U ∩ K is fixed"),
            );
            return Ok(r);
        }
        let f_star = p.upper_value(&x, &y).unwrap_or(f64::NAN);
        let xs: Vec<Vec<f64>> = coarse_points(p.x_bounds(), self.grid.points);
        let all: Vec<usize> = (1..=p.coupling.len()).collect();
        let scan = self.thm_scan(&xs, &w, f_star + self.grid.opt_tol, &all);
        let mut worst: Option<(f64, &Vec<f64>)> = None;
        for (xp, v, _) in &scan {
            if worst.is_none_or(|(wv, _)| *v > wv) {
                worst = Some((*v, xp));
            }
        }
        let max_v = worst.map_or(f64::NEG_INFINITY, |w| w.0);
        let ok = max_v <= self.grid.feas_tol;
        // Suboptimality reading: best W-point whose x' keeps w* feasible.
        let witness = scan
            .iter()
            .filter(|(xp, _, _)| {
                self.problem
                    .coupling_values(xp, &w)
                    .is_ok_and(|v| v.iter().all(|g| *g <= self.grid.feas_tol))
            })
            .filter_map(|(xp, _, b)| b.as_ref().map(|b| (b.0, xp, &b.1)))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let mut cond = Condition::new("thm1", Verdict::from_bool(ok)).residual(max_v.max(0.0));
        if !ok {
            cond = cond.counterexample(worst.map(|w| w.1.clone()));
        }
        if let Some((v, xp, yp)) = witness {
            let mut pt = xp.clone();
            pt.extend_from_slice(yp);
            cond = cond
                .witness(Some(pt))
                .note(format!("best W-point keeping g(x', w*) <= 0 has F = {}", fmt_num(v)));
        }
        r.push(cond);
        Ok(r)
    }

    /// Per active index, `g_i(x', w*) <= 0` near `x*` for W-points with `F <= F*`.
    pub fn check_thm3(&self, g: &GnepProblem, point: &[f64]) -> Result<VerificationReport, VerifyError> {
        let p = self.problem;
        let (x, y, w) = self.split_triple(point)?;
        let mut r = VerificationReport::new("thm3", point, self.meta());
        if !is_equilibrium(g, point, &self.grid) {
            r.push(Condition::new("thm3", Verdict::NotApplicable).note("point is not a verified equilibrium"));
            return Ok(r);
        }
        let act = active_set(p, &x, &w, self.grid.feas_tol);
        let f_star = p.upper_value(&x, &y).unwrap_or(f64::NAN);
        let mut all_ok = true;
        for &i in &act.indices {
            let mut outcome = None;
            for rad in [self.radius, self.radius / 10.0] {
                let xs = coarse_points(&cube(&x, rad, p.x_bounds()), self.grid.points);
                let scan = self.thm_scan(&xs, &w, f_star + self.grid.opt_tol, &[i]);
                let worst = scan
                    .into_iter()
                    .map(|(xp, v, _)| (v, xp))
                    .reduce(|a, b| if b.0 > a.0 { b } else { a });
                let bad = worst.as_ref().is_some_and(|w| w.0 > self.grid.feas_tol);
                outcome = Some((rad, worst, bad));
                if !bad {
                    break;
                }
            }
            let (rad, worst, bad) = outcome.expect("one radius");
            all_ok &= !bad;
            let mut cond = Condition::new(&format!("thm3_g{i}"), Verdict::from_bool(!bad))
                .residual(worst.as_ref().map_or(0.0, |w| w.0.max(0.0)))
                .note(format!("radius {}", fmt_num(rad)));
            if bad {
                cond = cond.counterexample(worst.map(|w| w.1));
            }
            r.push(cond);
        }
        let note = if act.indices.is_empty() {
            "active set is empty".to_string()
        } else {
            format!("active set {:?}", act.indices)
        };
        r.push(Condition::new("thm3", Verdict::from_bool(all_ok)).note(note));
        if all_ok {
            let mut xy = x.clone();
            xy.extend_from_slice(&y);
            let s = self.check_sbp_point(&xy)?;
            let strong = s.verdict("strong_local");
            r.push(
                Condition::new("implied_strong_local", strong)
                    .note("cross-check against the strong-local verdict of the point check"),
            );
        }
        Ok(r)
    }

    /// SBP-feasible and minimizing `F` over the leader's private set `T`.
    pub fn check_easy_solution(&self, xy: &[f64]) -> Result<VerificationReport, VerifyError> {
        let p = self.problem;
        let (x, y) = self.split(xy)?;
        let mut r = VerificationReport::new("easy_solution", xy, self.meta());
        let s = self.lower(&x);
        let phi = s.best;
        let upper = p.upper_violation(&x).unwrap_or(f64::INFINITY);
        let lower = p.lower_violation(&x, &y).unwrap_or(f64::INFINITY);
        let lgap = phi.map_or(f64::INFINITY, |phi| (p.lower_value(&x, &y).unwrap_or(f64::INFINITY) - phi).max(0.0));
        let feasible = upper <= self.grid.feas_tol && lower <= self.grid.feas_tol && lgap <= self.grid.opt_tol;
        r.push(Condition::new("feasible", Verdict::from_bool(feasible)).residual(upper.max(lower).max(lgap)));

        let t = minimize_over_t(p, &self.grid);
        let f_star = p.upper_value(&x, &y).unwrap_or(f64::NAN);
        let gap = t.best.map_or(0.0, |b| f_star - b);
        let min_ok = gap <= self.grid.opt_tol;
        let mut cond = Condition::new("minimizes_over_t", Verdict::from_bool(min_ok)).residual(gap.max(0.0));
        if let Some(b) = t.best {
            cond = cond.note(format!("min of F over T = {}", fmt_num(b)));
        }
        if !min_ok {
            cond = cond.counterexample(t.best_point().map(<[f64]>::to_vec));
        }
        r.push(cond);
        let easy = feasible && min_ok;
        r.push(Condition::new("easy", Verdict::from_bool(easy)));
        if easy {
            let g = reformulate(p, GnepMode::Uneven).map_err(|e| SolveError::Invalid(e.to_string()))?;
            let triple = p.compose(&x, &y, &y);
            let eq = equilibrium_residuals(&g, &triple, &self.grid);
            r.push(
                Condition::new("equilibrium_xyy", Verdict::from_bool(eq.verdict))
                    .residual(
                        eq.leader_feasibility
                            .max(eq.leader_gap)
                            .max(eq.follower_feasibility)
                            .max(eq.follower_gap),
                    )
                    .witness(Some(triple)),
            );
        } else {
            r.push(Condition::new("equilibrium_xyy", Verdict::NotApplicable));
        }
        Ok(r)
    }
}

/// ε-argmin of `F` over `T = {x ∈ X, y ∈ U, g(x, y) <= 0}`, points `[x | y]`.
pub fn minimize_over_t(p: &BilevelProblem, grid: &GridSpec) -> SolutionSet {
    let bounds: Vec<Interval> = p.x_bounds().iter().chain(p.w_bounds()).copied().collect();
    let tol = grid.grid_feas_tol();
    let r = grid_search(&bounds, grid, |z| {
        let (x, y) = z.split_at(p.n1);
        if p.upper_violation(x).ok()? > tol || p.lower_violation(x, y).ok()? > tol {
            return None;
        }
        Some((p.upper_value(x, y).ok()?, ()))
    });
    SolutionSet::from_search(r)
}
