use odflow::root::{approximate_stochastic_root, RootOptions};
use odflow::testkit::random_dense_stochastic;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn recovers_random_roots() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..20 {
        let n = rng.random_range(2..=5);
        let p = [2, 3, 4][case % 3];
        let h = random_dense_stochastic(&mut rng, n);
        let m = h.pow(p);
        let r = approximate_stochastic_root(&m, p, &RootOptions::default()).unwrap();
        assert!(r.iterations <= 10_000);
        assert!(r.residual <= 1e-5, "case {case}: n={n} p={p} residual {}", r.residual);
        assert!(r.h.is_column_stochastic(1e-12));
        assert!(r.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }
}
