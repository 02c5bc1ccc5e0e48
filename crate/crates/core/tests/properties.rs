use proptest::prelude::*;
use wulff_lab::config::RunConfig;
use wulff_lab::geom::{self, Point};
use wulff_lab::isoperimetry::{quotient, wulff_sector};
use wulff_lab::{ConeSpec, NormSpec, WeightSpec};

fn norm_strategy() -> impl Strategy<Value = NormSpec> {
    prop_oneof![
        Just(NormSpec::euclidean()),
        (0.3f64..3.0, 0.3f64..3.0, -0.5f64..0.5).prop_map(|(a, b, c)| {
            let off = c * (a * b).sqrt();
            NormSpec::ellipse([[a, off], [off, b]]).unwrap()
        }),
        (1.2f64..6.0, 0.01f64..0.2).prop_map(|(q, d)| NormSpec::smoothed_q(q, d).unwrap()),
    ]
}

fn point() -> impl Strategy<Value = Point> {
    (-5.0f64..5.0, -5.0f64..5.0).prop_filter("away from origin", |(x, y)| x.hypot(*y) > 1e-3).prop_map(|(x, y)| [x, y])
}

proptest! {
    #[test]
    fn norm_is_positively_homogeneous(norm in norm_strategy(), x in point(), t in 0.01f64..50.0) {
        let h = norm.eval(x);
        prop_assert!((norm.eval(geom::scale(x, t)) - t * h).abs() <= 1e-10 * t * h);
        prop_assert!((norm.dual(geom::scale(x, t)) - t * norm.dual(x)).abs() <= 1e-8 * t * norm.dual(x));
    }

    #[test]
    fn norm_triangle_inequality(norm in norm_strategy(), x in point(), y in point()) {
        prop_assert!(norm.eval(geom::add(x, y)) <= norm.eval(x) + norm.eval(y) + 1e-10);
    }

    #[test]
    fn dual_pairing_is_attained_by_the_gradient(norm in norm_strategy(), xi in point()) {
        // ∇H(ξ) lies on the unit sphere of H₀.
        let g = norm.grad(xi).unwrap();
        prop_assert!((norm.dual(g) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quotient_is_scale_invariant(norm in norm_strategy(), r in 0.1f64..10.0) {
        let cone = ConeSpec::quadrant();
        let w = WeightSpec::monomial(1.0, 0.5).unwrap();
        let a = quotient(&norm, &w, &cone, &wulff_sector(&norm, &cone, [0.0, 0.0], 1.0, 1024).unwrap()).unwrap();
        let b = quotient(&norm, &w, &cone, &wulff_sector(&norm, &cone, [0.0, 0.0], r, 1024).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a);
    }

    #[test]
    fn run_config_round_trips(h in 0.01f64..0.25, seed in any::<u64>(), n_levels in 10usize..100) {
        let text = format!(r#"{{
            "problem": {{"p": 2, "norm": {{"kind": "euclidean"}}, "weight": {{"kind": "constant"}},
                        "cone": {{"kind": "full_plane"}}, "R": 1, "f": {{"law": {{"kind": "constant", "c0": 1}}}}}},
            "mesh": {{"h": {h}}}, "diagnostics": {{"n_levels": {n_levels}}}, "seed": {seed}
        }}"#);
        let cfg = RunConfig::from_json(&text).unwrap();
        let again = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(&cfg, &again);
        prop_assert_eq!(cfg.fingerprint(), again.fingerprint());
    }
}
