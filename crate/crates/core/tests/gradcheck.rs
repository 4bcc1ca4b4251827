mod common;

use common::gradcheck::{cases, worst, TOLERANCE};

#[test]
fn every_layer_and_loss_matches_finite_differences() {
    let mut failures = Vec::new();
    for case in cases() {
        let err = worst(&case);
        eprintln!("{:<14} {err:.2e}", case.name);
        if !(err < TOLERANCE) {
            failures.push(format!("{}: {err:.3e}", case.name));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn a_wrong_gradient_is_detected() {
    use common::gradcheck::{check, random};
    use isac_recon::numkit::ParamStore;
    use rand::SeedableRng;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut s = ParamStore::new();
    let x = s.add("x", random(&[4], -1.0, 1.0, &mut rng));
    let ids = [x];
    // value Σx², Jacobian x instead of 2x
    let err = check(&s, &ids, &mut rng, &|ctx| {
        let t = ctx.graph.value(ctx.p(x)).clone();
        let v = t.data().iter().map(|a| a * a).sum();
        ctx.graph.precomputed_scalar(ctx.p(x), v, t).unwrap()
    });
    assert!((err - 0.5).abs() < 1e-6, "{err}");
}
