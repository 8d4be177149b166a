mod support;

use ipmn_core::stats::{ols_fit, t_two_sided_p};
use support::stats::{check_problem, close, two_sided};

#[test]
fn ols_stepwise_and_welch_match_brute_force() {
    let bad: Vec<String> = (0..50).flat_map(|s| check_problem(s, 1e-8)).collect();
    assert!(bad.is_empty(), "{} mismatches:\n{}", bad.len(), bad.join("\n"));
}

#[test]
fn t_distribution_tail_matches_statrs() {
    for dof in [1.0, 2.5, 7.0, 30.0, 250.0] {
        for t in [0.0, 0.3, 1.0, 2.2, 5.0, 12.0] {
            let (a, b) = (t_two_sided_p(t, dof), two_sided(t, dof));
            assert!(close(a, b, 1e-10), "t {t} dof {dof}: {a} vs {b}");
        }
    }
}

#[test]
fn constant_predictor_is_rank_deficient() {
    let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0]).collect();
    let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
    assert!(matches!(ols_fit(&rows, &y), Err(ipmn_core::Error::RankDeficient)));
}
