use fbm_grushin::fbm::{covariance, factorized_covariance, HurstParam, KhInverse};
use fbm_grushin::fraccalc::{compute_constants, frac_integral, SampledFn, Side, TimeGrid};
use fbm_grushin::harness::{map_samples, Simulator};
use fbm_grushin::models::{catalog_lookup, ModelSpec, Theorem};
use fbm_grushin::weights::DirectionVector;
use proptest::prelude::*;

fn grid(n: usize) -> TimeGrid {
    TimeGrid::new(1.0, n).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn covariance_is_symmetric_and_factorizes(h in 0.5f64..0.95, t in 0.05f64..2.0, s in 0.05f64..2.0) {
        let hp = HurstParam::new(h).unwrap();
        let r = covariance(hp, t, s).unwrap();
        prop_assert_eq!(r, covariance(hp, s, t).unwrap());
        prop_assert!(r.abs() <= (t * s).powf(h) + 1e-15);
        let c = compute_constants(h).unwrap();
        let f = factorized_covariance(&c, t, s).unwrap();
        prop_assert!((f - r).abs() <= 1e-8 * r.abs().max(1e-3));
    }

    #[test]
    fn frac_integral_is_linear(alpha in 0.1f64..1.0, a in -3.0f64..3.0, b in -3.0f64..3.0, k in 0.5f64..4.0) {
        let g = grid(64);
        let f1 = SampledFn::from_fn(g, |t| (k * t).sin());
        let f2 = SampledFn::from_fn(g, |t| t * t);
        let combo = SampledFn::from_fn(g, |t| a * (k * t).sin() + b * t * t);
        let i1 = frac_integral(&f1, alpha, Side::Left).unwrap();
        let i2 = frac_integral(&f2, alpha, Side::Left).unwrap();
        let ic = frac_integral(&combo, alpha, Side::Left).unwrap();
        for j in 0..g.len() {
            prop_assert!((ic.values[j] - a * i1.values[j] - b * i2.values[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn kh_inverse_is_causal(h in 0.55f64..0.95, cut in 1usize..63, bump in -5.0f64..5.0) {
        let g = grid(64);
        let c = compute_constants(h).unwrap();
        let op = KhInverse::new(&c, g);
        let base: Vec<f64> = g.nodes().iter().map(|t| t.cos()).collect();
        let mut changed = base.clone();
        for v in &mut changed[cut + 1..] {
            *v += bump;
        }
        let a = op.apply(&base).unwrap();
        let b = op.apply(&changed).unwrap();
        for j in 0..=cut {
            prop_assert_eq!(a.value(j), b.value(j));
        }
    }

    #[test]
    fn catalog_directional_derivative_matches_difference(a in 1.5f64..3.0, b in -1.0f64..1.0, x in -2.0f64..2.0, y in -2.0f64..2.0, v1 in -1.0f64..1.0, v2 in -1.0f64..1.0) {
        let sigma = catalog_lookup("sine-affine", &[a, b, 0.7, -0.4], (2, 2), 2).unwrap();
        let p = [x, y];
        let v = [v1, v2];
        let eps = 1e-6;
        let plus = sigma.eval(&[x + eps * v1, y + eps * v2]);
        let minus = sigma.eval(&[x - eps * v1, y - eps * v2]);
        let fd = (plus - minus) / (2.0 * eps);
        let exact = sigma.dir_deriv(&p, &v);
        prop_assert!((fd - exact).amax() < 1e-7);
    }

    #[test]
    fn map_samples_ignores_worker_count(n in 1usize..200, workers in 1usize..9) {
        let f = |i: u64| Ok::<f64, ()>((i as f64).sqrt());
        prop_assert_eq!(map_samples(n, 1, f), map_samples(n, workers, f));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn weights_are_linear_and_scale_free_in_direction(
        u1 in -2.0f64..2.0, u2 in -2.0f64..2.0, w1 in -2.0f64..2.0, w2 in -2.0f64..2.0,
        a in -3.0f64..3.0, b in -3.0f64..3.0, index in 0u64..1000,
    ) {
        let sigma = catalog_lookup("sine-affine", &[2.0, 1.0, 1.0], (1, 1), 1).unwrap();
        let model = ModelSpec::grushin(sigma, vec![0.3], vec![0.0], HurstParam::new(0.75).unwrap(), grid(64)).unwrap();
        let sim = Simulator::new(model, None).unwrap();
        let s = sim.sample(3, index).unwrap();
        let u = DirectionVector::new(vec![u1], vec![u2]).unwrap();
        let w = DirectionVector::new(vec![w1], vec![w2]).unwrap();
        let c = DirectionVector::new(vec![a * u1 + b * w1], vec![a * u2 + b * w2]).unwrap();
        for theorem in [Theorem::M, Theorem::MTilde] {
            let weight = |d: &DirectionVector| sim.engine().weight(theorem, &sim.model, &s.solution, &s.paths, &s.wiener, d).unwrap().total;
            let (wu, ww, wc) = (weight(&u), weight(&w), weight(&c));
            prop_assert!((wc - a * wu - b * ww).abs() <= 1e-11 * (1.0 + wc.abs() + (a * wu).abs() + (b * ww).abs()));
        }
    }
}
