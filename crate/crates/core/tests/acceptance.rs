//! One test per acceptance criterion. Each prints its measured values and
//! threshold; run with `--nocapture` to see them on success.

use diaggeo::verify::{run_suite, CriterionResult};

fn check(suite: &str) {
    let report = run_suite(suite).unwrap_or_else(|e| panic!("{suite}: {e}"));
    let c: &CriterionResult = &report.criteria[0];
    println!("{}", c.line());
    assert!(c.pass, "{}", c.line());
}

#[test]
fn c01_fd_oracle_hessian_diagonal() {
    check("fd-oracle");
}

#[test]
fn c02_full_two_layer_hessian_blocks() {
    check("hessian-blocks");
}

#[test]
fn c03_loss_equivalence() {
    check("loss-equivalence");
}

#[test]
fn c04_rmed_routes_agree() {
    check("rmed-routes");
}

#[test]
fn c05_sgdm_adam_gap_across_d() {
    check("rmed-gap");
}

#[test]
fn c06_gaussian_ratio_oracle() {
    check("gaussian-oracle");
}

#[test]
fn c07_first_phase_closed_form() {
    check("first-phase");
}

#[test]
fn c08_adam_sign_descent() {
    check("sign-descent");
}

#[test]
fn c09_matched_loss_ordering() {
    check("matched-loss");
}

#[test]
fn c10_low_rank_diagnostics() {
    check("low-rank");
}

#[test]
fn c11_r_diag_trend() {
    check("rdiag");
}

#[test]
fn c12_alignment_ordering() {
    check("alignment");
}

#[test]
fn c13_determinism() {
    check("determinism");
}
