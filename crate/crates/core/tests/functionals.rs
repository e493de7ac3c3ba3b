use proptest::prelude::*;

use superbrownian::functional::default_bump;
use superbrownian::{
    pathwise_representation_error, vderiv, vderiv2, vderiv_fd, AtomicMeasure, FunctionalSpec, MeasurePath, Point,
    SimParams, SimulatedEnsemble, TestFunctionSpec, TimeGrid, UFunctional, UIntegrandSpec,
};

fn gauss(c: f64, w: f64) -> TestFunctionSpec {
    TestFunctionSpec::Gaussian { center: vec![c], width: w, amplitude: 1.0 }
}

fn path(n: u64, dt: f64, seed: u64) -> MeasurePath<f64> {
    let m = AtomicMeasure::from_atoms(1, [(Point::scalar(0.0), 1.0)]).unwrap();
    SimulatedEnsemble::new(m, SimParams::new(n, 1, TimeGrid::new(0.5, dt).unwrap(), seed).unwrap(), 1)
        .replicate(0)
        .unwrap()
}

fn u_spec(activation: f64) -> FunctionalSpec {
    FunctionalSpec::U(UIntegrandSpec { gamma: Default::default(), activation, h: gauss(0.2, 0.9) })
}

#[test]
fn squared_pairing_second_derivative() {
    // F = <ω(t), h>²: 𝒟_y 𝒟_x F = 2 h(x) h(y)
    let p = path(100, 0.005, 1);
    let f = FunctionalSpec::Squared { h: gauss(0.0, 1.0) }.build::<f64>().unwrap();
    let h = |x: f64| (-x * x / 2.0).exp();
    for (t, x, y) in [(30, 0.1, -0.4), (100, 1.2, 0.3)] {
        let d2 = vderiv2(f.as_ref(), t, &p.full(), &Point::scalar(x), &Point::scalar(y)).unwrap();
        assert!((d2 - 2.0 * h(x) * h(y)).abs() < 1e-6, "{d2}");
    }
}

#[test]
fn representation_error_shrinks_with_resolution() {
    let f = UFunctional::new(
        UIntegrandSpec { gamma: Default::default(), activation: 0.1, h: gauss(0.0, 1.0) }.build().unwrap(),
    );
    let median = |n: u64, dt: f64| {
        let mut e: Vec<f64> =
            (0..15).map(|s| pathwise_representation_error(&f, &path(n, dt, 100 + s)).unwrap()).collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e[7]
    };
    let (coarse, fine) = (median(40, 0.01), median(640, 0.0025));
    assert!(fine < 0.6 * coarse, "{coarse} -> {fine}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn u_functional_is_affine_in_the_bump(t in 1usize..100, x in -3.0f64..3.0, seed in 0u64..1000) {
        let p = path(60, 0.005, seed);
        let f = u_spec(0.1).build::<f64>().unwrap();
        let omega = p.full();
        let d = vderiv_fd(f.as_ref(), t, &omega, &Point::scalar(x), default_bump(&omega, t)).unwrap();
        let want = if t > 20 { (-(x - 0.2f64).powi(2) / (2.0 * 0.81)).exp() } else { 0.0 };
        prop_assert!((d - want).abs() < 1e-10, "{} vs {}", d, want);
        prop_assert!((vderiv(f.as_ref(), t, &omega, &Point::scalar(x)).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn functionals_ignore_the_future(t in 1usize..60, seed in 0u64..1000) {
        // a path and its truncation agree up to t, so F(t, ·) must agree
        let p = path(60, 0.005, seed);
        let cut = p.truncate(60).unwrap();
        let specs = [
            u_spec(0.05),
            FunctionalSpec::Squared { h: gauss(0.0, 1.0) },
            FunctionalSpec::Linear { h: gauss(1.0, 0.5) },
        ];
        for s in specs {
            let f = s.build::<f64>().unwrap();
            prop_assert_eq!(f.evaluate(t, &p.full()).unwrap(), f.evaluate(t, &cut.full()).unwrap());
        }
    }

    #[test]
    fn linear_pairing_derivative_is_h(t in 1usize..100, x in -3.0f64..3.0) {
        let p = path(60, 0.005, 3);
        let f = FunctionalSpec::Linear { h: gauss(0.0, 1.0) }.build::<f64>().unwrap();
        let omega = p.full();
        let d = vderiv_fd(f.as_ref(), t, &omega, &Point::scalar(x), default_bump(&omega, t)).unwrap();
        prop_assert!((d - (-x * x / 2.0).exp()).abs() < 1e-10);
    }
}
