use std::collections::BTreeMap;
use std::path::Path;

use super::{Budget, MarketError, MarketModel};
use crate::expr::{parse_expr, Expr};
use crate::model::{parse_box_line, section_of, strip_comment, Interval, ModelError};

/// Reads a `.mkt` market file.
pub fn load_market(path: impl AsRef<Path>) -> Result<MarketModel, MarketError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut m = parse_market(&text)?;
    m.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    Ok(m)
}

fn perr(line: usize, message: impl Into<String>) -> MarketError {
    MarketError::Model(ModelError::Parse { line, message: message.into() })
}

/// Parses market text. Profits come either as `pi1`/`pi2` or as inverse
/// demand and cost (`p1`, `c1`, `p2`, `c2`); `p1` is repeated once per good
/// of firm 1 when `n1 > 1`.
pub fn parse_market(text: &str) -> Result<MarketModel, MarketError> {
    let mut dims = (1usize, 1usize);
    let mut in_dims = false;
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if let Some(name) = section_of(line) {
            in_dims = name == "dims";
            continue;
        }
        if !in_dims || line.is_empty() {
            continue;
        }
        for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| perr(i + 1, format!("expected `key=value`, found `{tok}`")))?;
            let v: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| perr(i + 1, format!("dimension `{k}` must be a positive integer")))?;
            match k.trim() {
                "n1" => dims.0 = v,
                "n2" => dims.1 = v,
                other => return Err(perr(i + 1, format!("unknown dimension key `{other}`"))),
            }
        }
    }
    let (n1, n2) = dims;
    let space = MarketModel::market_space(n1, n2);

    let mut section = "";
    let mut exprs: BTreeMap<&str, Vec<(usize, Expr)>> = BTreeMap::new();
    let mut b: Option<f64> = None;
    let mut boxes: BTreeMap<String, Interval> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        if let Some(name) = section_of(line) {
            section = match name {
                "dims" => "dims",
                "market" => "market",
                "box" => "box",
                other => return Err(perr(lineno, format!("unknown section [{other}]"))),
            };
            continue;
        }
        match section {
            "dims" => {}
            "market" => {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| perr(lineno, format!("expected `key = value`, found `{line}`")))?;
                let k = k.trim();
                let key = match k {
                    "pi1" | "pi2" | "p1" | "p2" | "c1" | "c2" | "a1" | "a2" => k,
                    "b" => {
                        let v: f64 = v.trim().parse().map_err(|_| perr(lineno, "b must be a number"))?;
                        b = Some(v);
                        continue;
                    }
                    other => return Err(perr(lineno, format!("unknown market key `{other}`"))),
                };
                let e = parse_expr(v.trim(), &space)
                    .map_err(|source| MarketError::Model(ModelError::Expr { line: lineno, source }))?;
                exprs.entry(key).or_default().push((lineno, e));
            }
            "box" => {
                let (name, iv) = parse_box_line(line, lineno)?;
                if space.index_of(&name).is_none() {
                    return Err(perr(lineno, format!("unknown variable `{name}` in [box]")));
                }
                boxes.insert(name, iv);
            }
            _ => return Err(perr(lineno, "content before the first section")),
        }
    }

    let single = |key: &str| -> Result<Option<Expr>, MarketError> {
        match exprs.get(key).map(Vec::as_slice) {
            None => Ok(None),
            Some([(_, e)]) => Ok(Some(e.clone())),
            Some([_, (line, _), ..]) => Err(perr(*line, format!("`{key}` given more than once"))),
            Some([]) => Ok(None),
        }
    };
    let block = |nu: usize| if nu == 1 { 0..n1 } else { n1..n1 + n2 };
    let profit = |nu: usize| -> Result<Expr, MarketError> {
        let (pi, p, c) = (format!("pi{nu}"), format!("p{nu}"), format!("c{nu}"));
        if let Some(e) = single(&pi)? {
            if exprs.contains_key(p.as_str()) || exprs.contains_key(c.as_str()) {
                return Err(MarketError::Invalid(format!("give either {pi} or {p}/{c}, not both")));
            }
            return Ok(e);
        }
        let prices = exprs
            .get(p.as_str())
            .ok_or_else(|| MarketError::Invalid(format!("missing {pi} (or {p}/{c})")))?;
        let goods = block(nu);
        if prices.len() != goods.len() {
            return Err(MarketError::Invalid(format!(
                "{p} needs {} component(s), found {}",
                goods.len(),
                prices.len()
            )));
        }
        let revenue = prices
            .iter()
            .zip(goods)
            .map(|((_, pe), q)| Expr::mul(pe.clone(), Expr::var(q)))
            .reduce(Expr::add)
            .expect("at least one good");
        Ok(match single(&c)? {
            Some(cost) => Expr::sub(revenue, cost),
            None => revenue,
        })
    };
    let pi1 = profit(1)?;
    let pi2 = profit(2)?;

    let budget = match (single("a1")?, single("a2")?, b) {
        (Some(a1), Some(a2), Some(b)) => Some(Budget { a1, a2, b }),
        (None, None, None) => None,
        _ => return Err(MarketError::Invalid("a budget needs all of a1, a2 and b".into())),
    };

    let mut bounds = Vec::with_capacity(n1 + n2);
    for name in space.names() {
        bounds.push(*boxes.get(name).ok_or_else(|| ModelError::MissingBox(name.clone()))?);
    }
    let x2 = bounds.split_off(n1);
    let m = MarketModel {
        name: None,
        n1,
        n2,
        space,
        pi1,
        pi2,
        x1: bounds,
        x2,
        budget,
    };
    m.validate()?;
    Ok(m)
}
