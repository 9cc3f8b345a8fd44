//! Symbolic scalar expressions over a [`VarSpace`].
//!
//! Every objective and constraint in the crate is an [`Expr`]: a polynomial or
//! rational tree built from constants, variables, negation, the four binary
//! operators and non-negative integer powers. Expressions are immutable and
//! evaluation is pure, so they are shared freely across grid-search threads.

mod diff;
mod parse;
mod space;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::parse_expr;
pub use space::{Block, VarSpace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at column {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown identifier `{name}` at column {position}")]
    UnknownIdentifier { name: String, position: usize },
    #[error("exponent at column {position} must be a non-negative integer literal")]
    NonIntegerExponent { position: usize },
    #[error("invalid variable space: {0}")]
    InvalidSpace(String),
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("variable #{0} is not assigned")]
    MissingVariable(usize),
}

/// Expression tree. Variables are indices into the owning [`VarSpace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn var(index: usize) -> Self {
        Expr::Var(index)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 1.0)
    }

    // Constant-folding constructors. They never fold a division by zero.

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => *inner,
            a => Expr::Neg(Box::new(a)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
            (a, b) if a.is_zero() => b,
            (a, b) if b.is_zero() => a,
            (a, b) => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
            (a, b) if b.is_zero() => a,
            (a, b) if a.is_zero() => Expr::neg(b),
            (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
            (a, b) if a.is_zero() || b.is_zero() => Expr::Const(0.0),
            (a, b) if a.is_one() => b,
            (a, b) if b.is_one() => a,
            (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) if y != 0.0 => Expr::Const(x / y),
            (a, b) if b.is_one() => a,
            (a, b) => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(a: Expr, n: u32) -> Expr {
        match (a, n) {
            (_, 0) => Expr::Const(1.0),
            (a, 1) => a,
            (Expr::Const(c), n) => Expr::Const(c.powi(n as i32)),
            (a, n) => Expr::Pow(Box::new(a), n),
        }
    }

    /// Evaluates at `point`, indexed like the owning space.
    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => *point.get(*i).ok_or(EvalError::MissingVariable(*i))?,
            Expr::Neg(a) => -a.eval(point)?,
            Expr::Add(a, b) => a.eval(point)? + b.eval(point)?,
            Expr::Sub(a, b) => a.eval(point)? - b.eval(point)?,
            Expr::Mul(a, b) => a.eval(point)? * b.eval(point)?,
            Expr::Div(a, b) => {
                let num = a.eval(point)?;
                let den = b.eval(point)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                num / den
            }
            Expr::Pow(a, n) => a.eval(point)?.powi(*n as i32),
        })
    }

    /// Evaluates against a name → value assignment.
    pub fn eval_named(
        &self,
        space: &VarSpace,
        assignment: &std::collections::HashMap<String, f64>,
    ) -> Result<f64, EvalError> {
        let mut point = vec![f64::NAN; space.dim()];
        let mut assigned = vec![false; space.dim()];
        for (name, v) in assignment {
            if let Some(i) = space.index_of(name) {
                point[i] = *v;
                assigned[i] = true;
            }
        }
        if let Some(i) = self.variables().into_iter().find(|&i| !assigned.get(i).copied().unwrap_or(false)) {
            return Err(EvalError::MissingVariable(i));
        }
        self.eval(&point)
    }

    /// Indices of all variables occurring in the tree.
    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(i) => {
                out.insert(*i);
            }
            Expr::Neg(a) | Expr::Pow(a, _) => a.collect_vars(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// True if any variable index in `range` occurs syntactically.
    pub fn depends_on(&self, range: std::ops::Range<usize>) -> bool {
        self.variables().iter().any(|i| range.contains(i))
    }

    pub fn has_division(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Div(..) => true,
            Expr::Neg(a) | Expr::Pow(a, _) => a.has_division(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => a.has_division() || b.has_division(),
        }
    }

    /// Renames variables through `map`, keeping the tree shape.
    pub fn remap(&self, map: &impl Fn(usize) -> usize) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => Expr::Var(map(*i)),
            Expr::Neg(a) => Expr::Neg(Box::new(a.remap(map))),
            Expr::Add(a, b) => Expr::Add(Box::new(a.remap(map)), Box::new(b.remap(map))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(a.remap(map)), Box::new(b.remap(map))),
            Expr::Mul(a, b) => Expr::Mul(Box::new(a.remap(map)), Box::new(b.remap(map))),
            Expr::Div(a, b) => Expr::Div(Box::new(a.remap(map)), Box::new(b.remap(map))),
            Expr::Pow(a, n) => Expr::Pow(Box::new(a.remap(map)), *n),
        }
    }

    /// Renders in the parser's grammar using the scalar names of `space`.
    pub fn render(&self, space: &VarSpace) -> String {
        let mut out = String::new();
        self.render_into(space, &mut out);
        out
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Const(c) if c.is_sign_negative() => 3,
            Expr::Pow(..) => 4,
            Expr::Const(_) | Expr::Var(_) => 5,
        }
    }

    fn render_child(&self, space: &VarSpace, out: &mut String, min_prec: u8) {
        if self.precedence() < min_prec {
            out.push('(');
            self.render_into(space, out);
            out.push(')');
        } else {
            self.render_into(space, out);
        }
    }

    fn render_into(&self, space: &VarSpace, out: &mut String) {
        match self {
            Expr::Const(c) => {
                let _ = write!(out, "{c}");
            }
            Expr::Var(i) => out.push_str(space.name(*i)),
            Expr::Neg(a) => {
                out.push('-');
                a.render_child(space, out, 3);
            }
            Expr::Add(a, b) => {
                a.render_child(space, out, 1);
                out.push_str(" + ");
                b.render_child(space, out, 2);
            }
            Expr::Sub(a, b) => {
                a.render_child(space, out, 1);
                out.push_str(" - ");
                b.render_child(space, out, 2);
            }
            Expr::Mul(a, b) => {
                a.render_child(space, out, 2);
                out.push('*');
                b.render_child(space, out, 3);
            }
            Expr::Div(a, b) => {
                a.render_child(space, out, 2);
                out.push('/');
                b.render_child(space, out, 3);
            }
            Expr::Pow(a, n) => {
                a.render_child(space, out, 5);
                let _ = write!(out, "^{n}");
            }
        }
    }
}

/// Evaluates `e` against a name → value assignment over `space`.
pub fn eval_expr(
    e: &Expr,
    space: &VarSpace,
    assignment: &std::collections::HashMap<String, f64>,
) -> Result<f64, EvalError> {
    e.eval_named(space, assignment)
}

/// Symbolic gradient with respect to every scalar of `space`, in block order.
pub fn grad_expr(e: &Expr, space: &VarSpace) -> Vec<Expr> {
    (0..space.dim()).map(|i| e.derivative(i)).collect()
}
