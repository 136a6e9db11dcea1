use add_core::orchestrator::{gradient_suite, FAMILIES};

#[test]
fn every_loss_matches_central_differences() {
    let reports = gradient_suite(20, 2024, 1e-3).unwrap();
    assert_eq!(reports.len(), FAMILIES.len());
    for r in &reports {
        assert_eq!(r.instances, 20);
        assert!(r.passed(), "{} worst relative error {:.3e}", r.name, r.worst);
    }
}
