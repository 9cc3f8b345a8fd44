use super::Expr;

impl Expr {
    /// Symbolic partial derivative with respect to variable `var`.
    pub fn derivative(&self, var: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => Expr::neg(a.derivative(var)),
            Expr::Add(a, b) => Expr::add(a.derivative(var), b.derivative(var)),
            Expr::Sub(a, b) => Expr::sub(a.derivative(var), b.derivative(var)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.derivative(var), (**b).clone()),
                Expr::mul((**a).clone(), b.derivative(var)),
            ),
            Expr::Div(a, b) => {
                let da = a.derivative(var);
                let db = b.derivative(var);
                if db.is_zero() {
                    return Expr::div(da, (**b).clone());
                }
                Expr::div(
                    Expr::sub(Expr::mul(da, (**b).clone()), Expr::mul((**a).clone(), db)),
                    Expr::pow((**b).clone(), 2),
                )
            }
            Expr::Pow(a, n) => {
                if *n == 0 {
                    return Expr::Const(0.0);
                }
                Expr::mul(
                    Expr::mul(Expr::Const(*n as f64), Expr::pow((**a).clone(), n - 1)),
                    a.derivative(var),
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::expr::{grad_expr, parse_expr, VarSpace};

    #[test]
    fn polynomial_gradient() {
        let s = VarSpace::new([("x", 1), ("y", 1)]).unwrap();
        let g = grad_expr(&parse_expr("x^2 + y^2", &s).unwrap(), &s);
        assert_eq!(g[0].render(&s), "2*x");
        assert_eq!(g[1].render(&s), "2*y");

        let c = grad_expr(&parse_expr("5", &s).unwrap(), &s);
        assert!(c.iter().all(|d| d.is_zero()));
    }

    #[test]
    fn reduced_branch_is_stationary_at_four_fifths() {
        let s = VarSpace::new([("x", 1)]).unwrap();
        let e = parse_expr("5*x^2 - 8*x + 4", &s).unwrap();
        let d = e.derivative(0).eval(&[0.8]).unwrap();
        assert!(d.abs() < 1e-12);
        let h = 1e-6;
        let fd = (e.eval(&[0.8 + h]).unwrap() - e.eval(&[0.8 - h]).unwrap()) / (2.0 * h);
        assert!(fd.abs() < 1e-6);
    }

    #[test]
    fn quotient_rule() {
        let s = VarSpace::new([("x", 1), ("y", 1)]).unwrap();
        let e = parse_expr("x/(1 + y^2)", &s).unwrap();
        let dy = e.derivative(1).eval(&[2.0, 1.0]).unwrap();
        assert!((dy - (-2.0 * 2.0 * 1.0 / 4.0)).abs() < 1e-12);
        let dx = e.derivative(0).eval(&[2.0, 1.0]).unwrap();
        assert!((dx - 0.5).abs() < 1e-12);
    }
}
