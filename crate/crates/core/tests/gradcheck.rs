#[path = "support/gradcheck.rs"]
mod gradcheck;

use gradcheck::{check_instance, ALL_KINDS};
use jdebate::rng::seeded;

#[test]
fn every_layer_kind_matches_finite_differences() {
    for kind in ALL_KINDS {
        let mut rng = seeded(100);
        for _ in 0..20 {
            let err = check_instance(kind, 4, &mut rng);
            assert!(err < 1e-3, "{kind:?}: max relative error {err}");
        }
    }
}

#[test]
fn wider_instances_also_match() {
    for kind in ALL_KINDS {
        let mut rng = seeded(5);
        let err = check_instance(kind, 9, &mut rng);
        assert!(err < 1e-3, "{kind:?}: max relative error {err}");
    }
}
