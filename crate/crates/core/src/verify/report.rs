use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::solve::GridSpec;

pub const CERTIFICATE_NOTE: &str =
    "universal verdicts are epsilon-certificates over the sampled search box, not proofs over the continuum";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    True,
    False,
    NotApplicable,
}

impl Verdict {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Verdict::True
        } else {
            Verdict::False
        }
    }

    pub fn is_true(self) -> bool {
        self == Verdict::True
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::True => "true",
            Verdict::False => "false",
            Verdict::NotApplicable => "not_applicable",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub verdict: Verdict,
    /// Largest residual seen; `None` when nothing was measured.
    pub max_residual: Option<f64>,
    pub witness: Option<Vec<f64>>,
    pub counterexample: Option<Vec<f64>>,
    pub note: Option<String>,
}

impl Condition {
    pub fn new(name: &str, verdict: Verdict) -> Self {
        Self {
            name: name.to_string(),
            verdict,
            max_residual: None,
            witness: None,
            counterexample: None,
            note: None,
        }
    }

    pub fn residual(mut self, r: f64) -> Self {
        self.max_residual = r.is_finite().then_some(r);
        self
    }

    pub fn witness(mut self, p: Option<Vec<f64>>) -> Self {
        self.witness = p;
        self
    }

    pub fn counterexample(mut self, p: Option<Vec<f64>>) -> Self {
        self.counterexample = p;
        self
    }

    pub fn note(mut self, n: impl Into<String>) -> Self {
        self.note = Some(n.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub points: usize,
    pub rounds: usize,
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub radius: f64,
    pub certificate: String,
}

impl GridMeta {
    pub fn new(grid: &GridSpec, radius: f64) -> Self {
        Self {
            points: grid.points,
            rounds: grid.rounds,
            feas_tol: grid.feas_tol,
            opt_tol: grid.opt_tol,
            radius,
            certificate: CERTIFICATE_NOTE.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub point: Vec<f64>,
    pub conditions: Vec<Condition>,
    pub grid: GridMeta,
}

impl VerificationReport {
    pub fn new(check: &str, point: &[f64], grid: GridMeta) -> Self {
        Self {
            check: check.to_string(),
            point: point.to_vec(),
            conditions: Vec::new(),
            grid,
        }
    }

    pub fn push(&mut self, c: Condition) {
        self.conditions.push(c);
    }

    pub fn get(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn verdict(&self, name: &str) -> Verdict {
        self.get(name).map_or(Verdict::NotApplicable, |c| c.verdict)
    }

    /// No condition is false.
    pub fn all_true(&self) -> bool {
        self.conditions.iter().all(|c| c.verdict != Verdict::False)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `key: value` blocks, one per condition.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "check: {}", self.check);
        let _ = writeln!(out, "point: {}", fmt_point(&self.point));
        for c in &self.conditions {
            let _ = writeln!(out);
            let _ = writeln!(out, "condition: {}", c.name);
            let _ = writeln!(out, "verdict: {}", c.verdict.as_str());
            if let Some(r) = c.max_residual {
                let _ = writeln!(out, "max_residual: {}", fmt_num(r));
            }
            if let Some(w) = &c.witness {
                let _ = writeln!(out, "witness: {}", fmt_point(w));
            }
            if let Some(w) = &c.counterexample {
                let _ = writeln!(out, "counterexample: {}", fmt_point(w));
            }
            if let Some(n) = &c.note {
                let _ = writeln!(out, "note: {n}");
            }
        }
        let g = &self.grid;
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "grid: points={} rounds={} feas_tol={} opt_tol={} radius={}",
            g.points, g.rounds, g.feas_tol, g.opt_tol, g.radius
        );
        let _ = writeln!(out, "certificate: {}", g.certificate);
        out
    }
}

/// Fixed-precision number formatting shared by text and CSV output.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let s = format!("{v:.9}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

pub fn fmt_point(p: &[f64]) -> String {
    let parts: Vec<String> = p.iter().map(|v| fmt_num(*v)).collect();
    format!("({})", parts.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(0.8000000000000003), "0.8");
        assert_eq!(fmt_num(-2.0000000000000052e-12), "0");
        assert_eq!(fmt_num(16.0), "16");
        assert_eq!(fmt_point(&[1.0, -0.5]), "(1, -0.5)");
    }

    #[test]
    fn json_round_trip() {
        let mut r = VerificationReport::new("demo", &[1.0, 0.0], GridMeta::new(&GridSpec::default(), 0.1));
        r.push(Condition::new("a", Verdict::True).residual(0.0));
        r.push(Condition::new("b", Verdict::False).counterexample(Some(vec![0.0, 0.5])).note("x"));
        r.push(Condition::new("c", Verdict::NotApplicable).residual(f64::INFINITY));
        let back: VerificationReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(!r.all_true());
        assert!(r.to_text().contains("condition: b\nverdict: false\ncounterexample: (0, 0.5)\nnote: x\n"));
    }
}
