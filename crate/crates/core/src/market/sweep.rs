use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MarketError, MarketModel};
use crate::expr::{grad_expr, Expr};
use crate::model::{classify_problem, GnepProblem, Interval};
use crate::solve::{enumerate_equilibria_grid, grid_search, solve_sbp_grid, solve_two_stage, GridSpec};
use crate::verify::{fmt_num, fmt_point, Condition, GridMeta, VerificationReport, Verdict, Verifier, DEFAULT_RADIUS};

pub const SWEEP_CSV_HEADER: &str = "b1,pi1_horizontal_min,pi1_horizontal_max,pi1_uneven,pi1_vertical,budget_slack";

const BISECTION_STEPS: usize = 60;

/// Profit values of one resource split `b1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct B1Sample {
    pub b1: f64,
    /// Both parameterized technology sets are nonempty.
    pub in_b: bool,
    /// Firm 1 profit at each equilibrium of the parameterized horizontal game.
    pub horizontal: Vec<f64>,
    pub uneven: Option<f64>,
    pub vertical: Option<f64>,
    /// Largest unused budget share over the horizontal equilibria.
    pub budget_slack: Option<f64>,
}

/// Firm 1 profit ranges under the three perspectives, optionally per `b1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: Option<String>,
    pub b: Option<f64>,
    pub samples: Vec<B1Sample>,
    pub horizontal: Vec<f64>,
    pub uneven: Vec<f64>,
    pub vertical: Option<f64>,
    pub vertical_point: Vec<f64>,
    /// Firm 2's problem ignores firm 1 entirely (no q1 in Π2, no shared budget).
    pub hierarchical: bool,
    /// `(b1, Π1^V(b1))` closest to the unparameterized vertical value.
    pub membership: Option<(f64, f64)>,
    pub membership_by_bisection: bool,
    pub grid: GridSpec,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
        for s in self.samples.iter().filter(|s| s.in_b) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                fmt_num(s.b1),
                opt(s.horizontal.first().copied()),
                opt(s.horizontal.last().copied()),
                opt(s.uneven),
                opt(s.vertical),
                opt(s.budget_slack),
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep serializes")
    }
}

/// Grid minimum of `e` over a block of the market space; `INFINITY` when
/// `e` is undefined everywhere.
pub(crate) fn min_over_box(e: &Expr, bounds: &[Interval], offset: usize, dim: usize, grid: &GridSpec) -> f64 {
    let r = grid_search(bounds, grid, |z| {
        let mut p = vec![0.0; dim];
        p[offset..offset + z.len()].copy_from_slice(z);
        Some((e.eval(&p).ok()?, ()))
    });
    r.samples.first().map_or(f64::INFINITY, |s| s.value)
}

fn sorted_values(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-9);
    v
}

fn equilibrium_values(m: &MarketModel, g: &GnepProblem, grid: &GridSpec) -> (Vec<f64>, Vec<Vec<f64>>) {
    let eq = enumerate_equilibria_grid(g, grid);
    let values = eq.iter().filter_map(|c| m.profit1(&c.point)).collect();
    (sorted_values(values), eq.into_iter().map(|c| c.point).collect())
}

/// Uneven value: two-stage when the follower's solution map is fixed,
/// otherwise the best enumerated equilibrium.
fn uneven_values(m: &MarketModel, b1: Option<f64>, grid: &GridSpec) -> Vec<f64> {
    let p = m.vertical(b1);
    if classify_problem(&p).solution_map_fixed_syntactic {
        if let Ok(r) = solve_two_stage(&p, grid) {
            return r.leader.best.map(|v| vec![-v]).unwrap_or_default();
        }
        return Vec::new();
    }
    equilibrium_values(m, &m.uneven(b1), grid).0
}

fn vertical_value(m: &MarketModel, b1: Option<f64>, grid: &GridSpec) -> Option<(f64, Vec<f64>)> {
    let s = solve_sbp_grid(&m.vertical(b1), grid).ok()?;
    Some((-s.best(), s.best_point().to_vec()))
}

/// Firm 1 profits of the unparameterized horizontal, uneven and vertical models.
pub fn compare_models(m: &MarketModel, grid: &GridSpec) -> Result<SweepResult, MarketError> {
    grid.validate()?;
    m.validate()?;
    m.check_feasible(grid)?;
    let (horizontal, _) = equilibrium_values(m, &m.horizontal(None), grid);
    let uneven = uneven_values(m, None, grid);
    let vertical = vertical_value(m, None, grid);
    Ok(SweepResult {
        name: m.name.clone(),
        b: m.budget.as_ref().map(|b| b.b),
        samples: Vec::new(),
        horizontal,
        uneven,
        vertical: vertical.as_ref().map(|v| v.0),
        vertical_point: vertical.map(|v| v.1).unwrap_or_default(),
        hierarchical: m.budget.is_none() && m.pi2_independent_of_q1(),
        membership: None,
        membership_by_bisection: false,
        grid: *grid,
    })
}

fn sample_at(m: &MarketModel, b1: f64, minima: (f64, f64), grid: &GridSpec) -> B1Sample {
    let bud = m.budget.as_ref().expect("budget checked by caller");
    let in_b = minima.0 <= b1 + grid.feas_tol && minima.1 <= bud.b - b1 + grid.feas_tol;
    if !in_b {
        return B1Sample {
            b1,
            in_b,
            horizontal: Vec::new(),
            uneven: None,
            vertical: None,
            budget_slack: None,
        };
    }
    let (horizontal, points) = equilibrium_values(m, &m.horizontal(Some(b1)), grid);
    let slack = points
        .iter()
        .filter_map(|p| {
            let a1 = bud.a1.eval(&p[..m.dim()]).ok()?;
            let a2 = bud.a2.eval(&p[..m.dim()]).ok()?;
            Some((b1 - a1).max(bud.b - b1 - a2).max(0.0))
        })
        .reduce(f64::max);
    B1Sample {
        b1,
        in_b,
        horizontal,
        uneven: uneven_values(m, Some(b1), grid).last().copied(),
        vertical: vertical_value(m, Some(b1), grid).map(|v| v.0),
        budget_slack: slack,
    }
}

/// Resource-directed sweep: `samples` values of `b1` evenly spaced on
/// `[0, b]`, each solved under the three parameterized perspectives.
pub fn sweep_b1(m: &MarketModel, samples: usize, grid: &GridSpec) -> Result<SweepResult, MarketError> {
    let bud = m.budget.as_ref().ok_or(MarketError::NoBudget)?;
    if samples < 2 {
        return Err(MarketError::Invalid("a sweep needs at least 2 samples".into()));
    }
    let mut result = compare_models(m, grid)?;
    let minima = m.budget_minima(grid).expect("budget present");
    let b = bud.b;
    result.samples = (0..samples)
        .into_par_iter()
        .map(|j| {
            let b1 = if j + 1 == samples { b } else { b * j as f64 / (samples - 1) as f64 };
            sample_at(m, b1, minima, grid)
        })
        .collect();
    if !result.samples.iter().any(|s| s.in_b) {
        return Err(MarketError::EmptyB);
    }
    if let Some(v) = result.vertical {
        let (witness, bisected) = membership_witness(m, &result.samples, v, grid);
        result.membership = witness;
        result.membership_by_bisection = bisected;
    }
    Ok(result)
}

/// Sample value closest to `target`; when no sample is within `1e-9`, the
/// first bracketing pair of samples is bisected on `b1`.
fn membership_witness(m: &MarketModel, samples: &[B1Sample], target: f64, grid: &GridSpec) -> (Option<(f64, f64)>, bool) {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.in_b)
        .filter_map(|s| Some((s.b1, s.vertical?)))
        .collect();
    let closest = pts
        .iter()
        .copied()
        .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()));
    if closest.is_some_and(|c| (c.1 - target).abs() <= 1e-9) {
        return (closest, false);
    }
    let Some(&[(mut lo, mut vlo), (mut hi, _)]) = pts
        .windows(2)
        .find(|w| (w[0].1 - target) * (w[1].1 - target) <= 0.0)
    else {
        return (closest, false);
    };
    let mut best = closest.expect("bracket implies samples");
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let Some((vm, _)) = vertical_value(m, Some(mid), grid) else {
            break;
        };
        if (vm - target).abs() < (best.1 - target).abs() {
            best = (mid, vm);
        }
        if (vm - target).abs() <= 1e-9 {
            break;
        }
        if (vlo - target) * (vm - target) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            vlo = vm;
        }
    }
    (Some(best), true)
}

fn max_of(v: &[f64]) -> Option<f64> {
    v.last().copied()
}

/// Checks the profit relations between the perspectives on a finished sweep.
pub fn check_relations(s: &SweepResult, tol: f64) -> VerificationReport {
    let mut r = VerificationReport::new("market_relations", &[], GridMeta::new(&s.grid, 0.0));
    let (h, u, v) = (max_of(&s.horizontal), max_of(&s.uneven), s.vertical);

    // Firm 2 independent of firm 1: all three perspectives agree.
    if s.hierarchical {
        let c = match (h, u, v) {
            (Some(h), Some(u), Some(v)) => {
                let res = (h - u).abs().max((u - v).abs());
                Condition::new("hierarchical_chain", Verdict::from_bool(res <= tol))
                    .residual(res)
                    .witness(Some(vec![h, u, v]))
            }
            _ => Condition::new("hierarchical_chain", Verdict::False).note("a perspective has no solution"),
        };
        r.push(c);
    } else {
        r.push(
            Condition::new("hierarchical_chain", Verdict::NotApplicable)
                .note("firm 2's problem depends on firm 1 through its profit or the shared budget"),
        );
    }

    let in_b: Vec<&B1Sample> = s.samples.iter().filter(|x| x.in_b).collect();
    if in_b.is_empty() {
        r.push(Condition::new("eq15", Verdict::NotApplicable).note("no b1 sweep"));
    } else {
        let mut worst = (0.0_f64, None::<Vec<f64>>);
        let mut ok = true;
        for x in &in_b {
            let res = match (max_of(&x.horizontal), x.uneven, x.vertical) {
                (Some(h), Some(u), Some(v)) => (h - u).abs().max((u - v).abs()),
                _ => f64::INFINITY,
            };
            ok &= res <= tol;
            if res > worst.0 || worst.1.is_none() {
                worst = (res, Some(vec![x.b1]));
            }
        }
        let mut c = Condition::new("eq15", Verdict::from_bool(ok))
            .residual(worst.0)
            .note(format!("{} of {} samples in B", in_b.len(), s.samples.len()));
        if !ok {
            c = c.counterexample(worst.1);
        }
        r.push(c);
    }

    match v {
        Some(v) if u.is_none() => {
            // The chain presumes an uneven equilibrium; only its outer ends remain comparable.
            let sh = h.unwrap_or(f64::NEG_INFINITY);
            let res = (sh - v).max(0.0);
            let c = if res <= tol {
                Condition::new("eq16", Verdict::NotApplicable)
                    .note(format!("premise not met: no uneven equilibrium; sup H {} <= V {}", fmt_num(sh), fmt_num(v)))
            } else {
                Condition::new("eq16", Verdict::False).note("sup H exceeds V and no uneven equilibrium exists")
            };
            r.push(c.residual(res).witness(Some(vec![sh, v])));
        }
        Some(v) => {
            let (sh, su) = (h.unwrap_or(f64::NEG_INFINITY), u.unwrap_or(f64::NEG_INFINITY));
            let res = (sh - su).max(su - v).max(0.0);
            let mut c = Condition::new("eq16", Verdict::from_bool(res <= tol))
                .residual(res)
                .witness(Some(vec![sh, su, v]));
            if h.is_none() {
                c = c.note("the horizontal equilibrium set is empty; its supremum is taken as -inf");
            }
            r.push(c);
        }
        None => r.push(Condition::new("eq16", Verdict::False).note("vertical model has no solution")),
    }

    match (v, s.membership) {
        (Some(v), Some((b1, vb))) if !in_b.is_empty() => {
            let res = (vb - v).abs();
            let mut c = Condition::new("prop2_membership", Verdict::from_bool(res <= tol))
                .residual(res)
                .witness(Some(vec![b1, vb]));
            if s.membership_by_bisection {
                c = c.note("b1 located by bisection between sweep samples");
            }
            r.push(c);
        }
        _ if in_b.is_empty() => r.push(Condition::new("prop2_membership", Verdict::NotApplicable).note("no b1 sweep")),
        _ => r.push(Condition::new("prop2_membership", Verdict::False).note("no parameterized vertical value")),
    }

    if in_b.is_empty() {
        r.push(Condition::new("prop3", Verdict::NotApplicable).note("no b1 sweep"));
    } else {
        let slack = in_b
            .iter()
            .map(|x| (x.b1, x.budget_slack.unwrap_or(f64::INFINITY)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty");
        if slack.1 > s.grid.feas_tol {
            r.push(
                Condition::new("prop3", Verdict::NotApplicable)
                    .counterexample(Some(vec![slack.0]))
                    .note(format!(
                        "premise not met: budget slack {} at b1 = {}",
                        fmt_num(slack.1),
                        fmt_num(slack.0)
                    )),
            );
        } else {
            let sup_u = in_b.iter().filter_map(|x| x.uneven).fold(f64::NEG_INFINITY, f64::max);
            let c = match v {
                Some(v) => {
                    let res = (sup_u - v).abs();
                    Condition::new("prop3", Verdict::from_bool(res <= tol))
                        .residual(res)
                        .witness(Some(vec![sup_u, v]))
                }
                None => Condition::new("prop3", Verdict::False).note("vertical model has no solution"),
            };
            r.push(c);
        }
    }
    r
}

fn dot_diff(g: &[f64], z: &[f64], q: &[f64]) -> f64 {
    g.iter().zip(z.iter().zip(q)).map(|(g, (z, q))| g * (z - q)).sum()
}

/// Variational check of an easy vertical solution over
/// `T = {q1 ∈ X¹, q2 ∈ X², a1 + a2 <= b}`: both `∇Π1(q̂)·(q - q̂)` and
/// `∇_{q2}Π2(q̂)·(q2 - q̂2)` must be `<= tol` on the grid points of `T`.
pub fn vi_easy_check(m: &MarketModel, q: &[f64], grid: &GridSpec, tol: f64) -> Result<VerificationReport, MarketError> {
    grid.validate()?;
    m.validate()?;
    if q.len() != m.dim() {
        return Err(MarketError::Invalid(format!("point has {} coordinates, expected {}", q.len(), m.dim())));
    }
    let mut r = VerificationReport::new("vi_easy", q, GridMeta::new(grid, DEFAULT_RADIUS));
    let bounds: Vec<Interval> = m.x1.iter().chain(&m.x2).copied().collect();
    let violation = |z: &[f64]| -> f64 {
        let mut v = bounds.iter().zip(z).map(|(b, &c)| b.violation(c)).fold(0.0, f64::max);
        if let Some(bud) = &m.budget {
            let spent = bud.a1.eval(z).and_then(|a1| Ok(a1 + bud.a2.eval(z)?));
            v = v.max(spent.map_or(f64::INFINITY, |s| s - bud.b));
        }
        v
    };

    let infeas = violation(q);
    let in_t = infeas <= grid.feas_tol;
    let mut c = Condition::new("in_t", Verdict::from_bool(in_t)).residual(infeas.max(0.0));
    if !in_t {
        c = c.note(format!("candidate violates T by {}", fmt_num(infeas)));
    }
    r.push(c);
    if !in_t {
        for name in ["vi_leader", "vi_follower", "easy_solution"] {
            r.push(Condition::new(name, Verdict::NotApplicable));
        }
        return Ok(r);
    }

    let eval_all = |es: &[Expr]| -> Option<Vec<f64>> { es.iter().map(|e| e.eval(q).ok()).collect() };
    let g1 = eval_all(&grad_expr(&m.pi1, &m.space));
    let g2 = eval_all(&grad_expr(&m.pi2, &m.space)[m.n1..]);
    let (Some(g1), Some(g2)) = (g1, g2) else {
        return Err(MarketError::Invalid("profit gradient undefined at the candidate".into()));
    };
    let feas = grid.grid_feas_tol();
    let n1 = m.n1;
    let mut both = true;
    for (name, grad, part) in [("vi_leader", &g1, 0..m.dim()), ("vi_follower", &g2, n1..m.dim())] {
        let s = grid_search(&bounds, grid, |z| {
            if violation(z) > feas {
                return None;
            }
            Some((-dot_diff(grad, &z[part.clone()], &q[part.clone()]), ()))
        });
        let (worst, at) = s.samples.first().map_or((0.0, None), |x| (-x.value, Some(x.point.clone())));
        let ok = worst <= tol;
        both &= ok;
        let mut c = Condition::new(name, Verdict::from_bool(ok)).residual(worst.max(0.0));
        if !ok {
            if let Some(z) = &at {
                let dir: Vec<f64> = z.iter().zip(q).map(|(a, b)| a - b).collect();
                c = c.note(format!("violating direction {}", fmt_point(&dir)));
            }
            c = c.counterexample(at);
        }
        r.push(c);
    }

    if both {
        let p = m.vertical(None);
        let c = match Verifier::new(&p, *grid, DEFAULT_RADIUS).check_easy_solution(q) {
            Ok(e) => Condition::new("easy_solution", e.verdict("easy"))
                .note("check_easy_solution on the vertical model"),
            Err(err) => Condition::new("easy_solution", Verdict::False).note(err.to_string()),
        };
        r.push(c);
    } else {
        r.push(Condition::new("easy_solution", Verdict::NotApplicable));
    }
    Ok(r)
}
