mod common;

use common::geometry::{backprojection_error, reference_facade, yaw_residual};
use isac_recon::prep::pca_align;
use proptest::prelude::*;

#[test]
fn reference_facade_is_already_aligned() {
    let (_, _, yaw) = pca_align(&reference_facade(3));
    assert_eq!(yaw, 0.0);
}

#[test]
fn pca_align_undoes_injected_yaw() {
    for yaw in [5.0, 17.0, 40.0] {
        for seed in [1, 2] {
            let r = yaw_residual(yaw, seed);
            assert!(r < 1e-4, "yaw {yaw}: residual {r}");
            let r = yaw_residual(-yaw, seed);
            assert!(r < 1e-4, "yaw -{yaw}: residual {r}");
        }
    }
}

#[test]
fn back_projection_lands_on_planted_scatterers() {
    let e = backprojection_error(12, 21);
    assert!(e < 0.1, "worst back-projection error {e} m");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alignment_is_heading_invariant(yaw in -170.0f64..170.0, seed in 0u64..4) {
        prop_assert!(yaw_residual(yaw, seed) < 1e-6);
    }
}
