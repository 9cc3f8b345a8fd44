use std::path::PathBuf;

use proptest::prelude::*;

use bilevel_core::expr::{grad_expr, parse_expr, Expr, VarSpace};
use bilevel_core::market::{check_relations, compare_models, load_market, vi_easy_check};
use bilevel_core::model::{classify_problem, load_problem, parse_problem, reformulate, BilevelProblem, GnepMode};
use bilevel_core::solve::{
    alternating_br, enumerate_equilibria_grid, solve_lower, solve_sbp_grid, solve_two_stage, GridSpec,
};
use bilevel_core::verify::{check_gnep_equilibrium, Verdict, Verifier, DEFAULT_RADIUS};

fn corpus(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name)
}

fn problem(name: &str) -> BilevelProblem {
    load_problem(corpus(name)).expect("corpus file loads")
}

fn grid() -> GridSpec {
    GridSpec::default()
}

fn small_grid() -> GridSpec {
    GridSpec { points: 41, rounds: 2, ..GridSpec::default() }
}

fn space3() -> VarSpace {
    VarSpace::new([("a", 1), ("b", 1), ("c", 1)]).unwrap()
}

fn expr_strategy() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-8i32..=8).prop_map(|c| Expr::constant(f64::from(c) * 0.25)),
        (0usize..3).prop_map(Expr::var),
    ];
    leaf.prop_recursive(4, 32, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::sub(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
            inner.clone().prop_map(Expr::neg),
            (inner, 0u32..4).prop_map(|(a, n)| Expr::pow(a, n)),
        ]
    })
}

fn point3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, 3)
}

fn coef() -> impl Strategy<Value = f64> {
    (-4i32..=4).prop_map(|c| f64::from(c) * 0.5)
}

/// Text of a one-dimensional bilevel problem with quadratic data.
fn instance_strategy() -> impl Strategy<Value = String> {
    (prop::collection::vec(coef(), 11), any::<bool>()).prop_map(|(c, with_g)| {
        let mut text = format!(
            "[dims]\nn1=1 n2=1\n[upper]\nobjective = {}*x^2 + {}*y^2 + {}*x*y + {}*x + {}*y\n\
             [lower]\nobjective = {}*w^2 + {}*x*w + {}*w\n",
            c[0],
            c[1],
            c[2],
            c[3],
            c[4],
            c[5].abs() + 0.5,
            c[6],
            c[7]
        );
        if with_g {
            text.push_str(&format!("gconstraint = {}*w + {}\n", c[8], c[9]));
        }
        text.push_str("[box]\nx in [-1, 1]\nw in [-1, 1]\n");
        text
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gradient_matches_central_difference(e in expr_strategy(), p in point3()) {
        let grad = grad_expr(&e, &space3());
        let h = 1e-6;
        for (i, g) in grad.iter().enumerate() {
            let sym = g.eval(&p).unwrap();
            let (mut up, mut down) = (p.clone(), p.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (e.eval(&up).unwrap() - e.eval(&down).unwrap()) / (2.0 * h);
            prop_assert!(
                (sym - fd).abs() <= 1e-5 * (1.0 + sym.abs()),
                "component {i}: symbolic {sym}, difference {fd}"
            );
        }
    }

    #[test]
    fn render_then_parse_evaluates_identically(
        e in expr_strategy(),
        pts in prop::collection::vec(point3(), 100),
    ) {
        let s = space3();
        let text = e.render(&s);
        let back = parse_expr(&text, &s).unwrap();
        for p in &pts {
            let (a, b) = (e.eval(p).unwrap(), back.eval(p).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "`{text}` at {p:?}: {a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uneven_follower_is_the_lower_level(text in instance_strategy()) {
        let p = parse_problem(&text).unwrap();
        let g = reformulate(&p, GnepMode::Uneven).unwrap();
        prop_assert_eq!(&g.follower.objective, &p.lower_objective);
        prop_assert_eq!(&g.follower.private, &p.lower_set.constraints);
        prop_assert_eq!(&g.follower.coupling, &p.coupling);
        prop_assert_eq!(&g.follower.bounds[..], p.w_bounds());
        prop_assert_eq!(g.follower.vars, p.w_range().collect::<Vec<_>>());
    }

    #[test]
    fn x_in_coupling_clears_the_stackelberg_flag(text in instance_strategy(), c in 1i32..4) {
        let p = parse_problem(&text).unwrap();
        let with_x = text.replace("[box]", &format!("gconstraint = {c}*x - 5\n[box]"));
        let q = parse_problem(&with_x).unwrap();
        prop_assert!(classify_problem(&p).g_independent_of_x);
        prop_assert!(!classify_problem(&q).g_independent_of_x);
    }

    #[test]
    fn value_coupling_is_tight_when_y_equals_w(text in instance_strategy(), x in -1.0f64..1.0, v in -1.0f64..1.0) {
        let p = parse_problem(&text).unwrap();
        let g = reformulate(&p, GnepMode::Uneven).unwrap();
        let point = p.compose(&[x], &[v], &[v]);
        for c in &g.leader.coupling {
            prop_assert_eq!(c.eval(&point).unwrap(), 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn refining_never_raises_phi(x in -1.0f64..1.0, which in 0usize..3) {
        let p = problem(["ex2.blp", "ex5.blp", "ex6.blp"][which]);
        let coarse = GridSpec { points: 21, rounds: 0, ..grid() };
        let mut prev = solve_lower(&p, &[x], &coarse).best;
        for rounds in 1..=3 {
            let cur = solve_lower(&p, &[x], &GridSpec { rounds, ..coarse }).best;
            if let (Some(a), Some(b)) = (prev, cur) {
                prop_assert!(b <= a + coarse.opt_tol, "rounds {rounds}: {b} after {a}");
            }
            prev = cur;
        }
    }

    #[test]
    fn strong_local_implies_weaker_local_notions(x in -0.5f64..1.5, y in -0.5f64..1.5, which in 0usize..3) {
        let p = problem(["ex5.blp", "ex6.blp", "ex1.blp"][which]);
        let v = Verifier::new(&p, small_grid(), DEFAULT_RADIUS);
        for xy in [[x, y], [1.0, 0.0], [0.0, 1.0]] {
            let Ok(r) = v.check_sbp_point(&xy) else { continue };
            if r.verdict("strong_local").is_true() {
                prop_assert!(r.verdict("joint_local").is_true(), "joint_local at {xy:?}");
                prop_assert!(r.verdict("obp_local").is_true(), "obp_local at {xy:?}");
            }
        }
    }

    #[test]
    fn alternating_output_is_an_equilibrium(x in -1.0f64..1.0, y in -1.0f64..1.0, w in -1.0f64..1.0) {
        let p = problem("ex1.blp");
        let g = reformulate(&p, GnepMode::Uneven).unwrap();
        if let Ok(c) = alternating_br(&g, &[x, y, w], 50, &grid()) {
            let r = check_gnep_equilibrium(&g, &c.point, &grid(), DEFAULT_RADIUS);
            prop_assert!(r.all_true(), "{:?}", c.point);
        }
    }
}

const ONE_DIM: [&str; 5] = ["ex1.blp", "ex2.blp", "ex4.blp", "ex5.blp", "ex6.blp"];

#[test]
fn two_stage_agrees_with_sbp_when_its_premise_holds() {
    let mut checked = 0;
    for name in ["ex1.blp", "ex2.blp", "ex3.blp", "ex4.blp", "ex5.blp", "ex6.blp", "ex7.blp"] {
        let p = problem(name);
        let Ok(t) = solve_two_stage(&p, &grid()) else { continue };
        if !t.premise_holds {
            continue;
        }
        let s = solve_sbp_grid(&p, &grid()).unwrap();
        let ts = t.leader.best.unwrap();
        let bound = 2.0 * grid().opt_tol + 1e-4;
        assert!((ts - s.best()).abs() <= bound, "{name}: two-stage {ts}, sbp {}", s.best());
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn enumerated_equilibria_verify_and_are_sbp_feasible() {
    for name in ONE_DIM {
        let p = problem(name);
        let g = reformulate(&p, GnepMode::Uneven).unwrap();
        let v = Verifier::new(&p, grid(), DEFAULT_RADIUS);
        for c in enumerate_equilibria_grid(&g, &grid()).iter().take(8) {
            let r = check_gnep_equilibrium(&g, &c.point, &grid(), DEFAULT_RADIUS);
            assert!(r.all_true(), "{name}: {:?}", c.point);
            let (x, rest) = c.point.split_at(p.n1);
            let y = &rest[..p.n2];
            let lower = v.lower(x);
            let phi = lower.best.unwrap();
            assert!(p.upper_violation(x).unwrap() <= grid().feas_tol, "{name}: x infeasible");
            assert!(p.lower_violation(x, y).unwrap() <= grid().feas_tol, "{name}: y infeasible");
            assert!(p.lower_value(x, y).unwrap() - phi <= grid().opt_tol, "{name}: y not optimal");
        }
    }
}

#[test]
fn easy_solutions_are_global_and_equilibria() {
    for (name, xy) in [("ex3.blp", vec![0.5, 0.0, 0.5]), ("ex6.blp", vec![-1.0, 1.0])] {
        let p = problem(name);
        let v = Verifier::new(&p, grid(), DEFAULT_RADIUS);
        let easy = v.check_easy_solution(&xy).unwrap();
        assert!(easy.verdict("easy").is_true(), "{name}: not easy");
        let sbp = v.check_sbp_point(&xy).unwrap();
        assert!(sbp.verdict("global").is_true(), "{name}: not global");
        let g = reformulate(&p, GnepMode::Uneven).unwrap();
        let (x, y) = xy.split_at(p.n1);
        let triple = p.compose(x, y, y);
        let r = check_gnep_equilibrium(&g, &triple, &grid(), DEFAULT_RADIUS);
        assert!(r.all_true(), "{name}: (x, y, y) not an equilibrium");
    }
}

#[test]
fn global_solution_need_not_be_an_equilibrium() {
    let p = problem("ex2.blp");
    let v = Verifier::new(&p, grid(), DEFAULT_RADIUS);
    assert!(v.check_sbp_point(&[0.5, 0.5]).unwrap().verdict("global").is_true());
    let g = reformulate(&p, GnepMode::Uneven).unwrap();
    let r = check_gnep_equilibrium(&g, &[0.5, 0.5, 0.5], &grid(), DEFAULT_RADIUS);
    assert!(!r.all_true());
    assert_eq!(r.verdict("leader_optimality"), Verdict::False);
}

#[test]
fn vi_easy_points_pass_the_easy_check() {
    let m = load_market(corpus("market2_easy.mkt")).unwrap();
    let r = vi_easy_check(&m, &[4.0, 4.0], &grid(), 1e-6).unwrap();
    assert!(r.all_true(), "{r:?}");
    let v = m.vertical(None);
    let e = Verifier::new(&v, grid(), DEFAULT_RADIUS).check_easy_solution(&[4.0, 4.0]).unwrap();
    assert!(e.verdict("easy").is_true());
}

#[test]
fn profit_ordering_holds_without_a_budget() {
    for name in ["market2.mkt", "market1_nobudget.mkt"] {
        let m = load_market(corpus(name)).unwrap();
        let s = compare_models(&m, &grid()).unwrap();
        let rel = check_relations(&s, 1e-3);
        assert_ne!(rel.verdict("eq16"), Verdict::False, "{name}: {rel:?}");
    }
    let m = load_market(corpus("market1_nobudget.mkt")).unwrap();
    let rel = check_relations(&compare_models(&m, &grid()).unwrap(), 1e-3);
    assert!(rel.verdict("eq16").is_true(), "{rel:?}");
}
