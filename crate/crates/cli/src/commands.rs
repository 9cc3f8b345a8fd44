use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;

use bilevel_core::market::{check_relations, compare_models, load_market, sweep_b1, vi_easy_check};
use bilevel_core::model::{
    classify_problem, load_problem, probe_solution_map, reformulate, BilevelProblem, GnepMode, GnepProblem,
};
use bilevel_core::solve::{alternating_br, enumerate_equilibria_grid, solve_sbp_grid, solve_two_stage, SolutionSet};
use bilevel_core::verify::{
    active_set, check_gnep_equilibrium, fmt_num, fmt_point, Condition, GridMeta, VerificationReport, Verdict,
    Verifier,
};

use crate::{Cli, Command, Format};

pub struct Output {
    pub report: String,
    pub all_true: bool,
}

impl Output {
    fn ok(report: String) -> Self {
        Self { report, all_true: true }
    }
}

const SBP_CONDITIONS: [&str; 5] = ["feasible", "global", "strong-local", "joint-local", "obp-local"];

pub fn run(cli: &Cli) -> Result<Output> {
    let opts = &cli.opts;
    let grid = opts.grid();
    grid.validate()?;
    let fmt = opts.format;
    match &cli.command {
        Command::SolveSbp { file } => {
            let p = problem(file)?;
            let s = solve_sbp_grid(&p, &grid)?;
            let meta = GridMeta::new(&grid, opts.radius);
            Ok(Output::ok(match fmt {
                Format::Json => pretty(json!({
                    "command": "solve-sbp",
                    "problem": p.name,
                    "solution": s.best_point(),
                    "value": s.best(),
                    "argmin": s.set,
                    "lower_infeasible_x": s.lower_infeasible_x,
                    "grid": meta,
                })),
                Format::Csv => solution_csv(&s.set, &["x", "y"], p.n1),
                Format::Text => {
                    let mut out = header("solve-sbp", &p);
                    let _ = writeln!(out, "solution: {}", fmt_point(s.best_point()));
                    let _ = writeln!(out, "value: {}", fmt_num(s.best()));
                    set_summary(&mut out, &s.set);
                    let _ = writeln!(out, "lower_infeasible_x: {}", s.lower_infeasible_x);
                    grid_lines(&mut out, &meta);
                    out
                }
            }))
        }
        Command::SolveGnep { file, mode } => {
            let p = problem(file)?;
            let g = reformulate(&p, *mode)?;
            let eq = enumerate_equilibria_grid(&g, &grid);
            let vars = g.active_vars();
            let project = |pt: &[f64]| -> Vec<f64> { vars.iter().map(|&i| pt[i]).collect() };
            let meta = GridMeta::new(&grid, opts.radius);
            Ok(Output::ok(match fmt {
                Format::Json => pretty(json!({
                    "command": "solve-gnep",
                    "problem": p.name,
                    "mode": mode,
                    "variables": vars.iter().map(|&i| g.space.name(i)).collect::<Vec<_>>(),
                    "equilibria": eq,
                    "grid": meta,
                })),
                Format::Csv => {
                    let names: Vec<&str> = vars.iter().map(|&i| g.space.name(i)).collect();
                    let mut out = format!("{},leader_value,follower_value\n", names.join(","));
                    for c in &eq {
                        let coords: Vec<String> = project(&c.point).into_iter().map(fmt_num).collect();
                        let (lv, fv) = player_values(&g, &c.point);
                        let _ = writeln!(out, "{},{},{}", coords.join(","), fmt_num(lv), fmt_num(fv));
                    }
                    out
                }
                Format::Text => {
                    let mut out = header("solve-gnep", &p);
                    let _ = writeln!(out, "mode: {}", mode.as_str());
                    let names: Vec<&str> = vars.iter().map(|&i| g.space.name(i)).collect();
                    let _ = writeln!(out, "variables: ({})", names.join(", "));
                    let _ = writeln!(out, "equilibria: {}", eq.len());
                    for c in &eq {
                        let _ = writeln!(out, "equilibrium: {}", fmt_point(&project(&c.point)));
                    }
                    grid_lines(&mut out, &meta);
                    out
                }
            }))
        }
        Command::SolveTwoStage { file } => {
            let p = problem(file)?;
            let r = solve_two_stage(&p, &grid)?;
            let meta = GridMeta::new(&grid, opts.radius);
            Ok(Output::ok(match fmt {
                Format::Json => pretty(json!({
                    "command": "solve-two-stage",
                    "problem": p.name,
                    "result": r,
                    "grid": meta,
                })),
                Format::Csv => solution_csv(&r.leader, &["x", "y"], p.n1),
                Format::Text => {
                    let mut out = header("solve-two-stage", &p);
                    let _ = writeln!(out, "premise: {}", r.premise);
                    let _ = writeln!(out, "premise_holds: {}", r.premise_holds);
                    let _ = writeln!(out, "stage1_x: {}", fmt_point(&r.stage1_x));
                    let _ = writeln!(out, "follower_point: {}", fmt_point(&r.follower_point));
                    let _ = writeln!(out, "follower_value: {}", fmt_num(r.follower_value));
                    let _ = writeln!(out, "point: {}", fmt_point(&r.point));
                    if let Some(v) = r.leader.best {
                        let _ = writeln!(out, "value: {}", fmt_num(v));
                    }
                    set_summary(&mut out, &r.leader);
                    grid_lines(&mut out, &meta);
                    out
                }
            }))
        }
        Command::Alternate { file, start, max_iters } => {
            let p = problem(file)?;
            let g = reformulate(&p, GnepMode::Uneven)?;
            if start.len() != p.dim() {
                bail!("--start needs {} coordinates, got {}", p.dim(), start.len());
            }
            let meta = GridMeta::new(&grid, opts.radius);
            let outcome = alternating_br(&g, start, *max_iters, &grid);
            let all_true = outcome.is_ok();
            let report = match (fmt, &outcome) {
                (Format::Json, Ok(c)) => pretty(json!({"command": "alternate", "converged": true, "candidate": c, "grid": meta})),
                (Format::Json, Err(n)) => {
                    pretty(json!({"command": "alternate", "converged": false, "failure": n, "grid": meta}))
                }
                (_, Ok(c)) => {
                    let mut out = header("alternate", &p);
                    let _ = writeln!(out, "converged: true");
                    let _ = writeln!(out, "point: {}", fmt_point(&c.point));
                    let _ = writeln!(out, "equilibrium: {}", c.verdict);
                    grid_lines(&mut out, &meta);
                    out
                }
                (_, Err(n)) => {
                    let mut out = header("alternate", &p);
                    let _ = writeln!(out, "converged: false");
                    let _ = writeln!(out, "iterations: {}", n.iterations);
                    let _ = writeln!(out, "reason: {}", n.reason);
                    for t in &n.tail {
                        let _ = writeln!(out, "iterate: {}", fmt_point(t));
                    }
                    grid_lines(&mut out, &meta);
                    out
                }
            };
            Ok(Output { report, all_true })
        }
        Command::Verify { file, point, checks } => {
            let p = problem(file)?;
            let reports = verify(&p, point, checks, cli)?;
            let all_true = reports.iter().all(VerificationReport::all_true);
            let report = match fmt {
                Format::Json => serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n",
                Format::Csv => {
                    let mut out = String::from("check,condition,verdict,max_residual\n");
                    for r in &reports {
                        for c in &r.conditions {
                            let _ = writeln!(
                                out,
                                "{},{},{},{}",
                                r.check,
                                c.name,
                                c.verdict.as_str(),
                                c.max_residual.map(fmt_num).unwrap_or_default()
                            );
                        }
                    }
                    out
                }
                Format::Text => reports.iter().map(VerificationReport::to_text).collect::<Vec<_>>().join("\n"),
            };
            Ok(Output { report, all_true })
        }
        Command::Classify { file, probe } => {
            let p = problem(file)?;
            let class = classify_problem(&p);
            let pr = probe.then(|| probe_solution_map(&p, 5, &grid));
            Ok(Output::ok(match fmt {
                Format::Json => pretty(json!({"command": "classify", "problem": p.name, "class": class, "probe": pr})),
                _ => {
                    let mut out = header("classify", &p);
                    let _ = writeln!(out, "g_independent_of_x: {}", class.g_independent_of_x);
                    let _ = writeln!(out, "lower_independent_of_x: {}", class.lower_independent_of_x);
                    let _ = writeln!(out, "feasible_map_fixed: {}", class.feasible_map_fixed);
                    let _ = writeln!(out, "solution_map_fixed_syntactic: {}", class.solution_map_fixed_syntactic);
                    if let Some(pr) = &pr {
                        let _ = writeln!(out, "probe_samples: {}", pr.samples.len());
                        let _ = writeln!(out, "probe_max_distance: {}", fmt_num(pr.max_distance));
                        let _ = writeln!(out, "probe_tolerance: {}", fmt_num(pr.tolerance));
                        let _ = writeln!(out, "solution_map_probably_fixed: {}", pr.probably_fixed);
                    }
                    out
                }
            }))
        }
        Command::Reformulate { file, mode } => {
            let p = problem(file)?;
            let g = reformulate(&p, *mode)?;
            Ok(Output::ok(match fmt {
                Format::Json => pretty(json!(g)),
                _ => g.render(),
            }))
        }
        Command::MarketSweep { file, samples, tol } => {
            let m = load_market(file).with_context(|| format!("loading {}", file.display()))?;
            let s = if m.budget.is_some() {
                sweep_b1(&m, *samples, &grid)?
            } else {
                compare_models(&m, &grid)?
            };
            let rel = check_relations(&s, *tol);
            let all_true = rel.all_true();
            let report = match fmt {
                Format::Json => pretty(json!({"command": "market-sweep", "sweep": s, "relations": rel})),
                Format::Csv => {
                    let mut out = s.to_csv();
                    for c in &rel.conditions {
                        let _ = writeln!(out, "# {}: {}", c.name, c.verdict.as_str());
                    }
                    out
                }
                Format::Text => {
                    let mut out = String::new();
                    let _ = writeln!(out, "command: market-sweep");
                    if let Some(n) = &s.name {
                        let _ = writeln!(out, "market: {n}");
                    }
                    let list = |v: &[f64]| v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(", ");
                    let _ = writeln!(out, "pi1_horizontal: [{}]", list(&s.horizontal));
                    let _ = writeln!(out, "pi1_uneven: [{}]", list(&s.uneven));
                    let _ = writeln!(out, "pi1_vertical: {}", s.vertical.map(fmt_num).unwrap_or_default());
                    if !s.samples.is_empty() {
                        let _ = writeln!(out);
                        out.push_str(&s.to_csv());
                    }
                    let _ = writeln!(out);
                    out.push_str(&rel.to_text());
                    out
                }
            };
            Ok(Output { report, all_true })
        }
        Command::ViCheck { file, point, tol } => {
            let m = load_market(file).with_context(|| format!("loading {}", file.display()))?;
            let r = vi_easy_check(&m, point, &grid, *tol)?;
            Ok(Output {
                all_true: r.all_true(),
                report: match fmt {
                    Format::Json => r.to_json() + "\n",
                    _ => r.to_text(),
                },
            })
        }
    }
}

fn problem(file: &Path) -> Result<BilevelProblem> {
    load_problem(file).with_context(|| format!("loading {}", file.display()))
}

fn pretty(v: serde_json::Value) -> String {
    serde_json::to_string_pretty(&v).expect("json serializes") + "\n"
}

fn header(command: &str, p: &BilevelProblem) -> String {
    let mut out = format!("command: {command}\n");
    if let Some(n) = &p.name {
        let _ = writeln!(out, "problem: {n}");
    }
    out
}

fn set_summary(out: &mut String, s: &SolutionSet) {
    let _ = writeln!(out, "argmin_points: {}", s.points.len());
    let _ = writeln!(out, "truncated: {}", s.truncated);
    let _ = writeln!(out, "evaluations: {}", s.evaluations);
}

fn grid_lines(out: &mut String, g: &GridMeta) {
    let _ = writeln!(
        out,
        "grid: points={} rounds={} feas_tol={} opt_tol={} radius={}",
        g.points, g.rounds, g.feas_tol, g.opt_tol, g.radius
    );
    let _ = writeln!(out, "certificate: {}", g.certificate);
}

fn solution_csv(s: &SolutionSet, blocks: &[&str], n1: usize) -> String {
    let dim = s.points.first().map_or(0, Vec::len);
    let names: Vec<String> = (0..dim)
        .map(|i| {
            let (b, k, n) = if i < n1 { (blocks[0], i, n1) } else { (blocks[1], i - n1, dim - n1) };
            if n == 1 {
                b.to_string()
            } else {
                format!("{b}{}", k + 1)
            }
        })
        .collect();
    let mut out = format!("{},value\n", names.join(","));
    for (pt, v) in s.points.iter().zip(&s.values) {
        let coords: Vec<String> = pt.iter().map(|x| fmt_num(*x)).collect();
        let _ = writeln!(out, "{},{}", coords.join(","), fmt_num(*v));
    }
    out
}

fn player_values(g: &GnepProblem, point: &[f64]) -> (f64, f64) {
    (
        g.leader.objective.eval(point).unwrap_or(f64::NAN),
        g.follower.objective.eval(point).unwrap_or(f64::NAN),
    )
}

fn verify(p: &BilevelProblem, point: &[f64], checks: &[String], cli: &Cli) -> Result<Vec<VerificationReport>> {
    let grid = cli.opts.grid();
    let radius = cli.opts.radius;
    let (n1, n2) = (p.n1, p.n2);
    let (xy, triple) = if point.len() == n1 + n2 {
        let mut t = point.to_vec();
        t.extend_from_slice(&point[n1..]);
        (point.to_vec(), t)
    } else if point.len() == n1 + 2 * n2 {
        (point[..n1 + n2].to_vec(), point.to_vec())
    } else {
        bail!(
            "--point needs {} coordinates (x, y) or {} (x, y, w), got {}",
            n1 + n2,
            n1 + 2 * n2,
            point.len()
        );
    };
    let v = Verifier::new(p, grid, radius);
    let mut reports = Vec::new();
    let mut sbp_wanted: Vec<&str> = Vec::new();
    let mut uneven: Option<GnepProblem> = None;
    let mut game = || -> Result<GnepProblem> {
        if uneven.is_none() {
            uneven = Some(reformulate(p, GnepMode::Uneven)?);
        }
        Ok(uneven.clone().expect("set above"))
    };
    for check in checks {
        match check.trim() {
            "equilibrium" => reports.push(check_gnep_equilibrium(&game()?, &triple, &grid, radius)),
            "thm1" => reports.push(v.check_thm1(&game()?, &triple)?),
            "thm3" => reports.push(v.check_thm3(&game()?, &triple)?),
            "easy" => reports.push(v.check_easy_solution(&xy)?),
            "sbp" => sbp_wanted.extend(SBP_CONDITIONS),
            c @ ("feasible" | "global" | "strong-local" | "joint-local" | "obp-local") => sbp_wanted.push(c),
            "active-set" => {
                let (x, rest) = triple.split_at(n1);
                let a = active_set(p, x, &rest[n2..], grid.feas_tol);
                let mut r = VerificationReport::new("active_set", &triple, GridMeta::new(&grid, radius));
                let list = |v: &[usize]| v.iter().map(|i| format!("g{i}")).collect::<Vec<_>>().join(", ");
                r.push(
                    Condition::new("feasible_w", Verdict::from_bool(a.violated.is_empty()))
                        .residual(a.values.iter().copied().fold(0.0, f64::max))
                        .note(format!("active: {{{}}} violated: {{{}}}", list(&a.indices), list(&a.violated))),
                );
                reports.push(r);
            }
            other => bail!(
                "unknown check `{other}` (expected equilibrium, thm1, thm3, sbp, feasible, global, strong-local, \
                 joint-local, obp-local, easy or active-set)"
            ),
        }
    }
    if !sbp_wanted.is_empty() {
        let mut r = v.check_sbp_point(&xy)?;
        let keep: Vec<String> = sbp_wanted.iter().map(|c| c.replace('-', "_")).collect();
        r.conditions.retain(|c| c.name == "feasible" || keep.contains(&c.name));
        reports.insert(0, r);
    }
    Ok(reports)
}
