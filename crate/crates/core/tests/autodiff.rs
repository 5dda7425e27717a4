mod common;

use shlm_core::tensor::check_gradient;

#[test]
fn every_op_matches_central_differences() {
    for seed in 0..10 {
        for case in common::op_cases(seed) {
            let r = check_gradient(&case.loss, &case.point, &case.shape, 1e-5).unwrap();
            assert!(r.max_rel_error <= 1e-4, "{} seed {seed}: {r:?}", case.name);
        }
    }
}

#[test]
fn hvp_matches_exact_quadratic_hessian() {
    for seed in 0..10 {
        let err = common::hvp_rel_error(seed, 6).unwrap();
        assert!(err <= 1e-3, "seed {seed}: {err}");
    }
}
