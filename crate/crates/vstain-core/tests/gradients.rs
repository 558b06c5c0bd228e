//! Finite-difference verification of every loss term's analytic
//! gradients on miniature networks.

mod common;

#[test]
fn every_loss_term_matches_central_finite_differences() {
    let results = common::run_all_gradient_checks().expect("all gradient checks pass");
    assert_eq!(results.len(), 10);
    for r in &results {
        assert!(
            r.params <= 500,
            "{} uses {} params, over the miniature budget",
            r.name,
            r.params
        );
        assert!(
            r.report.max_rel_err <= 1e-3,
            "{}: max relative error {:.3e} at {}[{}]",
            r.name,
            r.report.max_rel_err,
            r.report.worst_param,
            r.report.worst_index
        );
        assert!(r.report.checked > 0);
    }
}
