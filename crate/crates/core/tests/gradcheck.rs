#[path = "support/gradient.rs"]
mod gradient;

use gradient::{model_suite, op_suite, TOLERANCE};

#[test]
fn every_graph_op_matches_finite_differences() {
    let mut failures = Vec::new();
    for r in op_suite() {
        println!("{:<24} {} instances  max rel err {:.3e}", r.name, r.instances, r.max_rel_err);
        if !(r.max_rel_err < TOLERANCE) {
            failures.push(r.name);
        }
    }
    assert!(failures.is_empty(), "gradient mismatch in {failures:?}");
}

#[test]
fn every_model_matches_finite_differences() {
    for r in model_suite() {
        println!("{:<40} {} instances  max rel err {:.3e}", r.name, r.instances, r.max_rel_err);
        assert!(r.max_rel_err < TOLERANCE, "{}: {}", r.name, r.max_rel_err);
    }
}
