use std::collections::BTreeMap;
use std::path::Path;

use super::{BilevelProblem, ConstraintSet, Interval, ModelError};
use crate::expr::{parse_expr, Expr};

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Dims,
    Upper,
    Lower,
    Box,
}

/// Reads and validates a `.blp` problem file.
pub fn load_problem(path: impl AsRef<Path>) -> Result<BilevelProblem, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut p = parse_problem(&text)?;
    p.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    Ok(p)
}

pub(crate) fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

pub(crate) fn section_of(line: &str) -> Option<&str> {
    line.strip_prefix('[')?.strip_suffix(']').map(str::trim)
}

/// Parses one `[box]` line of the form `name in [lo, hi]`.
pub(crate) fn parse_box_line(line: &str, lineno: usize) -> Result<(String, Interval), ModelError> {
    let err = |message: String| ModelError::Parse { line: lineno, message };
    let (name, rest) = line
        .split_once(char::is_whitespace)
        .ok_or_else(|| err(format!("expected `<var> in [lo, hi]`, found `{line}`")))?;
    let rest = rest.trim_start();
    let rest = rest
        .strip_prefix("in")
        .ok_or_else(|| err(format!("expected `in` after `{name}`")))?
        .trim();
    let inner = rest
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| err(format!("expected `[lo, hi]`, found `{rest}`")))?;
    let (lo, hi) = inner
        .split_once(',')
        .ok_or_else(|| err(format!("expected `lo, hi`, found `{inner}`")))?;
    let num = |s: &str| -> Result<f64, ModelError> {
        let v: f64 = s.trim().parse().map_err(|_| err(format!("malformed bound `{}`", s.trim())))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(err(format!("search box bounds must be finite, found `{}`", s.trim())))
        }
    };
    let iv = Interval::new(num(lo)?, num(hi)?);
    if iv.lo > iv.hi {
        return Err(err(format!("empty search box [{}, {}]", iv.lo, iv.hi)));
    }
    Ok((name.to_string(), iv))
}

/// Parses problem-file text. See the README for the format.
pub fn parse_problem(text: &str) -> Result<BilevelProblem, ModelError> {
    // First pass: dimensions, since every expression needs the layout.
    let mut dims: BTreeMap<String, usize> = BTreeMap::new();
    let mut section = Section::None;
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        if let Some(name) = section_of(line) {
            section = if name == "dims" { Section::Dims } else { Section::None };
            continue;
        }
        if section != Section::Dims {
            continue;
        }
        for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            let (k, v) = tok.split_once('=').ok_or_else(|| ModelError::Parse {
                line: i + 1,
                message: format!("expected `key=value` in [dims], found `{tok}`"),
            })?;
            let v: usize = v.trim().parse().map_err(|_| ModelError::Parse {
                line: i + 1,
                message: format!("dimension `{k}` must be a positive integer"),
            })?;
            if !matches!(k.trim(), "n1" | "n2" | "ny" | "nw") {
                return Err(ModelError::Parse {
                    line: i + 1,
                    message: format!("unknown dimension key `{k}`"),
                });
            }
            dims.insert(k.trim().to_string(), v);
        }
    }
    let n1 = *dims.get("n1").ok_or_else(|| ModelError::Invalid("missing n1 in [dims]".into()))?;
    let n2 = dims.get("n2").copied();
    let ny = dims.get("ny").copied().or(n2);
    let nw = dims.get("nw").copied().or(n2);
    let (ny, nw) = match (ny, nw) {
        (Some(y), Some(w)) => (y, w),
        _ => return Err(ModelError::Invalid("missing n2 in [dims]".into())),
    };
    if ny != nw {
        return Err(ModelError::DimensionMismatch { y: ny, w: nw });
    }
    if n1 == 0 || ny == 0 {
        return Err(ModelError::Invalid("dimensions must be at least 1".into()));
    }
    let n2 = ny;
    let space = BilevelProblem::layout(n1, n2);

    let mut upper_objective: Option<Expr> = None;
    let mut lower_objective: Option<Expr> = None;
    let mut upper_constraints = Vec::new();
    let mut u_constraints = Vec::new();
    let mut g_constraints = Vec::new();
    let mut boxes: BTreeMap<String, (Interval, usize)> = BTreeMap::new();

    section = Section::None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        if let Some(name) = section_of(line) {
            section = match name {
                "dims" => Section::Dims,
                "upper" => Section::Upper,
                "lower" => Section::Lower,
                "box" => Section::Box,
                other => {
                    return Err(ModelError::Parse {
                        line: lineno,
                        message: format!("unknown section [{other}]"),
                    })
                }
            };
            continue;
        }
        let expr = |s: &str| parse_expr(s.trim(), &space).map_err(|source| ModelError::Expr { line: lineno, source });
        match section {
            Section::Dims => {}
            Section::None => {
                return Err(ModelError::Parse {
                    line: lineno,
                    message: "content before the first section header".into(),
                })
            }
            Section::Box => {
                let (name, iv) = parse_box_line(line, lineno)?;
                if space.index_of(&name).is_none() {
                    return Err(ModelError::Parse {
                        line: lineno,
                        message: format!("unknown variable `{name}` in [box]"),
                    });
                }
                boxes.insert(name, (iv, lineno));
            }
            Section::Upper | Section::Lower => {
                let (key, value) = line.split_once('=').ok_or_else(|| ModelError::Parse {
                    line: lineno,
                    message: format!("expected `key = expression`, found `{line}`"),
                })?;
                let key = key.trim();
                let slot_err = |what: &str| ModelError::Parse {
                    line: lineno,
                    message: format!("duplicate {what}"),
                };
                let e = expr(value)?;
                let check = |allowed: &[&str], what: &str| -> Result<(), ModelError> {
                    for v in e.variables() {
                        let name = space.name(v);
                        let block = space
                            .blocks()
                            .iter()
                            .find(|b| space.block_range(&b.name).is_some_and(|r| r.contains(&v)))
                            .map(|b| b.name.as_str())
                            .unwrap_or("");
                        if !allowed.contains(&block) {
                            return Err(ModelError::Parse {
                                line: lineno,
                                message: format!("{what} may not reference `{name}`"),
                            });
                        }
                    }
                    Ok(())
                };
                match (section, key) {
                    (Section::Upper, "objective") => {
                        check(&["x", "y"], "upper objective")?;
                        if upper_objective.replace(e).is_some() {
                            return Err(slot_err("upper objective"));
                        }
                    }
                    (Section::Upper, "constraint") => {
                        check(&["x"], "upper constraint")?;
                        upper_constraints.push(e);
                    }
                    (Section::Lower, "objective") => {
                        check(&["x", "w"], "lower objective")?;
                        if lower_objective.replace(e).is_some() {
                            return Err(slot_err("lower objective"));
                        }
                    }
                    (Section::Lower, "uconstraint") => {
                        check(&["w"], "uconstraint")?;
                        u_constraints.push(e);
                    }
                    (Section::Lower, "gconstraint") => {
                        check(&["x", "w"], "gconstraint")?;
                        g_constraints.push(e);
                    }
                    (_, other) => {
                        return Err(ModelError::Parse {
                            line: lineno,
                            message: format!("unknown key `{other}`"),
                        })
                    }
                }
            }
        }
    }

    let upper_objective = upper_objective.ok_or_else(|| ModelError::Invalid("missing upper objective".into()))?;
    let lower_objective = lower_objective.ok_or_else(|| ModelError::Invalid("missing lower objective".into()))?;

    let mut x_bounds = Vec::with_capacity(n1);
    for i in 0..n1 {
        let name = space.name(i);
        let (iv, _) = boxes.get(name).ok_or_else(|| ModelError::MissingBox(name.to_string()))?;
        x_bounds.push(*iv);
    }
    // y and w share one box; either name may carry it.
    let mut w_bounds = Vec::with_capacity(n2);
    for k in 0..n2 {
        let y_name = space.name(n1 + k);
        let w_name = space.name(n1 + n2 + k);
        let iv = match (boxes.get(y_name), boxes.get(w_name)) {
            (Some((a, _)), Some((b, line))) if a != b => {
                return Err(ModelError::Parse {
                    line: *line,
                    message: format!("boxes for `{y_name}` and `{w_name}` differ"),
                })
            }
            (_, Some((b, _))) => *b,
            (Some((a, _)), None) => *a,
            (None, None) => return Err(ModelError::MissingBox(w_name.to_string())),
        };
        w_bounds.push(iv);
    }

    let problem = BilevelProblem {
        name: None,
        n1,
        n2,
        upper_set: ConstraintSet::new((0..n1).collect(), x_bounds, upper_constraints),
        lower_set: ConstraintSet::new((n1 + n2..n1 + 2 * n2).collect(), w_bounds, u_constraints),
        upper_objective,
        lower_objective,
        coupling: g_constraints,
        space: space.clone(),
    };
    problem.validate()?;
    Ok(problem)
}
