mod common;

use dyadic_core::lattice::{dyadic_sequence, tree_oracle};
use dyadic_core::verify::{exit_code, run_suite, summarize, write_report, CheckResult, Status, Suite};
use dyadic_core::{Basket, PayoffSpec};

fn all_na(results: &[CheckResult], needle: &str) {
    assert!(!results.is_empty());
    for r in results {
        assert_eq!(r.status, Status::NotApplicable, "{}", r.check);
        let note = r.note.as_deref().unwrap_or_default();
        assert!(note.contains(needle), "{}: {note}", r.check);
    }
}

#[test]
fn quadratic_suites_need_upward_chains() {
    let cfg = common::two_sided();
    for suite in [Suite::HigherOrder, Suite::Convergence] {
        all_na(&run_suite(suite, &cfg).unwrap(), "negative increment");
    }
    let l1 = run_suite(Suite::FirstOrderL1, &cfg).unwrap();
    let (scaling, bound): (Vec<_>, Vec<_>) = l1.into_iter().partition(|r| r.check.contains("scaling"));
    all_na(&bound, "negative increment");
    all_na(&scaling, "no measurement");
}

#[test]
fn maxput_needs_a_box() {
    all_na(&run_suite(Suite::MaxPut, &common::two_sided()).unwrap(), "no box");
}

#[test]
fn put_only_suites_on_a_call() {
    let mut cfg = common::vanilla();
    cfg.payoff = PayoffSpec::call(1.0, Basket::Exp1D).unwrap();
    all_na(&run_suite(Suite::FirstOrderLinf, &cfg).unwrap(), "put");
    all_na(&run_suite(Suite::LowerBound, &cfg).unwrap(), "put");
    all_na(&run_suite(Suite::Convergence, &cfg).unwrap(), "put");
}

#[test]
fn lower_bound_needs_a_downward_increment() {
    all_na(&run_suite(Suite::LowerBound, &common::vanilla()).unwrap(), "≤ 0");
}

#[test]
fn lower_bound_window_must_reach_off_the_exercise_region() {
    let mut cfg = common::two_sided();
    cfg.window.0 = vec![0.5];
    all_na(&run_suite(Suite::LowerBound, &cfg).unwrap(), "window");
}

#[test]
fn upward_chain_with_zero_step_has_no_first_order_gap() {
    // 0 is both a ≤ 0 and a ≥ 0 increment, yet the put never moves into
    // the money, so the g∨0 difference vanishes identically.
    let cfg = common::maxput();
    let res = run_suite(Suite::LowerBound, &cfg).unwrap();
    assert_eq!(res.len(), 2);
    for r in &res {
        assert_eq!(r.measured, Some(0.0));
        assert_eq!(r.status, Status::Fail);
        assert!(r.bound.unwrap() > 0.0);
    }
}

#[test]
fn convergence_values_match_tree() {
    let cfg = common::two_sided();
    let x = vec![vec![-0.1], vec![0.0], vec![0.07]];
    let table = dyadic_sequence(&cfg.chain, &cfg.payoff, cfg.r, cfg.horizon, (0, 3), &x).unwrap();
    for (li, &n) in table.levels.iter().enumerate() {
        for (pi, p) in x.iter().enumerate() {
            let want = tree_oracle(&cfg.chain, &cfg.payoff, cfg.r, cfg.horizon, 1 << n, p).unwrap();
            assert!((table.values[li][pi] - want).abs() <= 1e-12, "n={n} x={p:?}");
        }
    }
}

#[test]
fn vanilla_convergence_passes_and_reports() {
    let cfg = common::vanilla();
    let res = run_suite(Suite::Convergence, &cfg).unwrap();
    assert_eq!(res.len(), 6);
    assert!(res.iter().all(|r| r.status == Status::Pass));
    for r in &res {
        assert!(r.params.contains_key("closed_form"));
    }
    assert_eq!(exit_code(&res), 0);

    let dir = tempfile::tempdir().unwrap();
    write_report(&res, dir.path()).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["summary"]["pass"], 6);
    assert_eq!(json["checks"].as_array().unwrap().len(), 6);
    let text = std::fs::read_to_string(dir.path().join("checks.txt")).unwrap();
    assert!(text.contains("convergence[M=1,N=3]"));
}

#[test]
fn failures_drive_the_exit_code() {
    let res = run_suite(Suite::LowerBound, &common::maxput()).unwrap();
    let s = summarize(&res);
    assert_eq!((s.pass, s.fail), (0, 2));
    assert_eq!(exit_code(&res), 1);
}
