mod common;

use common::gradcheck::check;
use t2boot::mlp::LossKind;

#[test]
fn backprop_matches_finite_differences() {
    for kind in [LossKind::CrossEntropy, LossKind::Mse] {
        let w = check(kind);
        assert!(w.checked > 100);
        assert_eq!(w.failed, 0, "{kind:?}: {} of {} entries off, worst rel {}", w.failed, w.checked, w.max_rel);
    }
}
