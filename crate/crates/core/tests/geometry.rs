use proptest::prelude::*;
use spdgeom::manifold::{self, dist_riem, dist_thompson, ManifoldPoint, Transport};
use spdgeom::optim::{Evaluated, KarcherProblem, Problem};
use spdgeom::random::{random_spd, random_sym, rng};
use spdgeom::spd::{geodesic, geometric_mean};
use spdgeom::SpdMatrix;

fn spd_triple(seed: u64, d: usize) -> (SpdMatrix, SpdMatrix, SpdMatrix) {
    let mut r = rng(seed);
    (random_spd(&mut r, d), random_spd(&mut r, d), random_spd(&mut r, d))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn distances_are_metrics(seed in any::<u64>(), d in 1usize..7) {
        let (a, b, c) = spd_triple(seed, d);
        for dist in [dist_thompson, dist_riem] {
            let ab = dist(&a, &b).unwrap();
            prop_assert!(dist(&a, &a).unwrap() < 1e-9);
            prop_assert!(ab >= 0.0);
            prop_assert!(rel(ab, dist(&b, &a).unwrap()) < 1e-9);
            let via = dist(&a, &c).unwrap() + dist(&c, &b).unwrap();
            prop_assert!(ab <= via + 1e-9 * via.max(1.0));
        }
        // the Thompson metric is the operator norm, the Riemannian one the Frobenius norm
        let dt = dist_thompson(&a, &b).unwrap();
        let dr = dist_riem(&a, &b).unwrap();
        prop_assert!(dt <= dr + 1e-9 && dr <= (d as f64).sqrt() * dt + 1e-9);
    }

    #[test]
    fn geodesic_splits_distance(seed in any::<u64>(), d in 1usize..7, t in 0.0f64..1.0) {
        let (a, b, _) = spd_triple(seed, d);
        let g = geodesic(&a, &b, t).unwrap();
        let total = dist_riem(&a, &b).unwrap();
        prop_assert!(rel(dist_riem(&a, &g).unwrap(), t * total) < 1e-8);
        prop_assert!(rel(dist_riem(&g, &b).unwrap(), (1.0 - t) * total) < 1e-8);
        let m = geometric_mean(&a, &b).unwrap();
        prop_assert!(dist_thompson(&m, &geometric_mean(&b, &a).unwrap()).unwrap() < 1e-8);
    }

    #[test]
    fn transport_is_an_isometry(seed in any::<u64>(), d in 1usize..7) {
        let (a, b, _) = spd_triple(seed, d);
        let mut r = rng(seed ^ 0x55);
        let (eta, xi) = (random_sym(&mut r, d, 1.0), random_sym(&mut r, d, 1.0));
        let (x, y) = (ManifoldPoint::new(a), ManifoldPoint::new(b));
        let tr = Transport::between(&x, &y).unwrap();
        let before = manifold::inner(&x, &eta, &xi).unwrap();
        let after = manifold::inner(&y, &tr.apply(&eta), &tr.apply(&xi)).unwrap();
        prop_assert!((before - after).abs() <= 1e-8 * before.abs().max(1.0));
        let back = tr.apply_inv(&tr.apply(&eta));
        prop_assert!((back.as_matrix() - eta.as_matrix()).norm() <= 1e-8 * eta.as_matrix().norm().max(1.0));
    }

    #[test]
    fn log_map_inverts_retraction(seed in any::<u64>(), d in 1usize..6) {
        let (a, b, _) = spd_triple(seed, d);
        let x = ManifoldPoint::new(a);
        let v = manifold::log_map(&x, &b).unwrap();
        let back = manifold::retract(&x, &v).unwrap();
        prop_assert!(dist_thompson(&back, &b).unwrap() < 1e-8);
    }
}

#[test]
fn riemannian_gradient_matches_central_differences() {
    let mut r = rng(11);
    let mats: Vec<_> = (0..4).map(|_| random_spd(&mut r, 5)).collect();
    let p = KarcherProblem::new(mats, vec![0.25; 4]).unwrap();
    for _ in 0..10 {
        let x0 = random_spd(&mut r, 5);
        let xi = random_sym(&mut r, 5, 1.0);
        let eval = Evaluated::new(&p, x0.clone()).unwrap();
        let x = ManifoldPoint::new(x0);
        let slope = manifold::inner(&x, &eval.rgrad(), &xi).unwrap();
        let h = 1e-5;
        let f = |s: f64| p.cost(&ManifoldPoint::new(manifold::retract(&x, &xi.scale(s)).unwrap())).unwrap();
        let fd = (f(h) - f(-h)) / (2.0 * h);
        assert!((fd - slope).abs() <= 1e-5 * slope.abs().max(1.0), "fd {fd} vs {slope}");
    }
}
