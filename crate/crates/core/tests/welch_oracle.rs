mod oracles;

use iftrack_core::analysis::stats::{student_t_two_sided, welch_test};
use oracles::{t_two_sided_oracle, welch_cases, welch_oracle, WELCH_FROZEN_P};

#[test]
fn oracle_reproduces_frozen_fixtures() {
    for ((a, b), &frozen) in welch_cases().iter().zip(WELCH_FROZEN_P.iter()) {
        let (_, _, p) = welch_oracle(a, b);
        assert!((p - frozen).abs() < 1e-12, "oracle drifted: {p} vs {frozen}");
    }
}

#[test]
fn welch_matches_frozen_fixtures() {
    for (k, ((a, b), &frozen)) in welch_cases().iter().zip(WELCH_FROZEN_P.iter()).enumerate() {
        let r = welch_test(a, b).unwrap();
        let (t, nu, _) = welch_oracle(a, b);
        assert!((r.statistic - t).abs() < 1e-12, "case {k}: t");
        assert!((r.df.unwrap() - nu).abs() < 1e-9, "case {k}: df");
        assert!((r.p - frozen).abs() < 1e-6, "case {k}: p {} vs {}", r.p, frozen);
    }
}

#[test]
fn t_tail_matches_quadrature_on_a_sweep() {
    for &nu in &[1.0, 1.5, 2.7, 5.0, 13.3, 40.0, 250.0] {
        for &t in &[0.0, 0.3, 1.0, 2.2, 4.5, 9.0] {
            let a = student_t_two_sided(t, nu);
            let b = t_two_sided_oracle(t, nu);
            assert!((a - b).abs() < 1e-9, "nu={nu} t={t}: {a} vs {b}");
        }
    }
}
