use serde::{Deserialize, Serialize};

use super::GridSpec;
use crate::expr::Expr;
use crate::model::Interval;

const OUTER_ROUNDS: usize = 20;
const INNER_ITERS: usize = 2000;
const MIN_STEP: f64 = 1e-9;

/// Minimize `objective` over `vars` in `bounds` subject to `constraints <= 0`.
/// Variables outside `vars` stay fixed at their start values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalProblem {
    pub objective: Expr,
    pub vars: Vec<usize>,
    pub bounds: Vec<Interval>,
    pub constraints: Vec<Expr>,
}

struct Penalized<'a> {
    lp: &'a LocalProblem,
    grad_obj: Vec<Expr>,
    grad_con: Vec<Vec<Expr>>,
}

impl Penalized<'_> {
    fn value(&self, p: &[f64], mu: f64) -> Option<f64> {
        let mut v = self.lp.objective.eval(p).ok()?;
        for c in &self.lp.constraints {
            let r = c.eval(p).ok()?.max(0.0);
            v += mu * r * r;
        }
        v.is_finite().then_some(v)
    }

    fn gradient(&self, p: &[f64], mu: f64) -> Option<Vec<f64>> {
        let mut g: Vec<f64> = self.grad_obj.iter().map(|d| d.eval(p)).collect::<Result<_, _>>().ok()?;
        for (c, dc) in self.lp.constraints.iter().zip(&self.grad_con) {
            let r = c.eval(p).ok()?;
            if r > 0.0 {
                for (gk, d) in g.iter_mut().zip(dc) {
                    *gk += 2.0 * mu * r * d.eval(p).ok()?;
                }
            }
        }
        Some(g)
    }
}

fn violation(lp: &LocalProblem, p: &[f64]) -> f64 {
    let mut v = lp
        .vars
        .iter()
        .zip(&lp.bounds)
        .map(|(&i, b)| b.violation(p[i]))
        .fold(0.0, f64::max);
    for c in &lp.constraints {
        v = v.max(c.eval(p).unwrap_or(f64::INFINITY));
    }
    v
}

/// Projected gradient descent on a quadratic penalty whose weight starts at
/// 10 and doubles each outer round. Returns `start` unless the result is
/// feasible within `feas_tol` and no worse than `start` by more than `opt_tol`.
pub fn refine_local(lp: &LocalProblem, start: &[f64], grid: &GridSpec) -> Vec<f64> {
    let pen = Penalized {
        lp,
        grad_obj: lp.vars.iter().map(|&i| lp.objective.derivative(i)).collect(),
        grad_con: lp
            .constraints
            .iter()
            .map(|c| lp.vars.iter().map(|&i| c.derivative(i)).collect())
            .collect(),
    };
    let project = |p: &mut [f64]| {
        for (&i, b) in lp.vars.iter().zip(&lp.bounds) {
            p[i] = p[i].clamp(b.lo, b.hi);
        }
    };
    let mut x = start.to_vec();
    project(&mut x);
    let mut mu = 10.0;
    for _ in 0..OUTER_ROUNDS {
        let mut t = 1.0;
        for _ in 0..INNER_ITERS {
            let (Some(fx), Some(g)) = (pen.value(&x, mu), pen.gradient(&x, mu)) else {
                break;
            };
            let mut accepted = false;
            let mut moved = 0.0;
            // Armijo backtracking along the projected path.
            while t > 1e-16 {
                let mut y = x.clone();
                for (&i, gk) in lp.vars.iter().zip(&g) {
                    y[i] -= t * gk;
                }
                project(&mut y);
                let d2: f64 = lp.vars.iter().map(|&i| (y[i] - x[i]).powi(2)).sum();
                if let Some(fy) = pen.value(&y, mu) {
                    if fy <= fx - 1e-4 * d2 / t {
                        moved = d2.sqrt();
                        x = y;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted || moved < MIN_STEP {
                break;
            }
            t = (t * 2.0).min(1.0);
        }
        mu *= 2.0;
    }
    let start_value = lp.objective.eval(start).unwrap_or(f64::INFINITY);
    let value = lp.objective.eval(&x).unwrap_or(f64::INFINITY);
    if violation(lp, &x) <= grid.feas_tol && value <= start_value + grid.opt_tol {
        x
    } else {
        start.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, VarSpace};

    fn problem(obj: &str, cons: &[&str]) -> LocalProblem {
        let s = VarSpace::new([("x", 1), ("y", 1)]).unwrap();
        LocalProblem {
            objective: parse_expr(obj, &s).unwrap(),
            vars: vec![0, 1],
            bounds: vec![Interval::new(-2.0, 2.0); 2],
            constraints: cons.iter().map(|c| parse_expr(c, &s).unwrap()).collect(),
        }
    }

    #[test]
    fn halfspace_projection() {
        let lp = problem("x^2 + y^2", &["1 - x"]);
        let z = refine_local(&lp, &[1.01, 0.02], &GridSpec::default());
        assert!((z[0] - 1.0).abs() < 1e-6 && z[1].abs() < 1e-6, "{z:?}");
    }

    #[test]
    fn reduced_branch_of_example_five() {
        let lp = problem("x^2 + y^2", &["2*x + y - 2", "2 - 2*x - y"]);
        let z = refine_local(&lp, &[0.78, 0.44], &GridSpec::default());
        assert!((z[0] - 0.8).abs() < 1e-4 && (z[1] - 0.4).abs() < 1e-4, "{z:?}");
    }

    #[test]
    fn local_minimizer_is_kept() {
        let lp = problem("(x - 0.5)^2 + (y + 0.25)^2", &[]);
        let z = refine_local(&lp, &[0.5, -0.25], &GridSpec::default());
        assert_eq!(z, [0.5, -0.25]);
    }
}
