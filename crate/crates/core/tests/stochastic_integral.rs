#![allow(clippy::needless_range_loop)]

use std::sync::Arc;

use proptest::prelude::*;

use superbrownian::harness::format::{decode_event_log, encode_event_log, read_event_log, write_event_log};
use superbrownian::{
    covariation, integrate_path, integrate_paths, AtomicMeasure, BranchEventLog, Ensemble, IntegrandTerm, MeasurePath,
    Point, PredictableIntegrand, PredictableWeight, SimParams, SimulatedEnsemble, SpaceFactor, StoppedPath,
    TestFunctionSpec, TimeGrid, UIntegrandSpec,
};

fn ensemble(n: u64, horizon: f64, replicates: usize, seed: u64) -> SimulatedEnsemble<f64> {
    let m = AtomicMeasure::from_atoms(1, [(Point::scalar(0.0), 1.0)]).unwrap();
    SimulatedEnsemble::new(m, SimParams::new(n, 1, TimeGrid::new(horizon, 0.005).unwrap(), seed).unwrap(), replicates)
}

fn gaussian_integrand(activation: f64, center: f64) -> PredictableIntegrand<f64> {
    let spec = UIntegrandSpec {
        gamma: Default::default(),
        activation,
        h: TestFunctionSpec::Gaussian { center: vec![center], width: 1.0, amplitude: 1.0 },
    };
    PredictableIntegrand::from(&spec.build::<f64>().unwrap())
}

#[test]
fn unit_integrand_recovers_mass_increments() {
    let ens = ensemble(80, 0.5, 5, 1);
    let one = PredictableIntegrand::constant(1.0);
    ens.map_paths(|p| {
        let i = integrate_path(&one, p)?;
        for (k, v) in i.iter().enumerate() {
            assert!((v - (p.state(k).total_mass() - 1.0)).abs() < 1e-12);
        }
        Ok(())
    })
    .unwrap();
}

#[test]
fn isometry_for_constant_and_gaussian_integrands() {
    let ens = ensemble(100, 0.5, 400, 2);
    for phi in [PredictableIntegrand::constant(1.0), gaussian_integrand(0.1, 0.3)] {
        let c = covariation(&phi, &phi, &ens).unwrap();
        assert!(c.consistent(4.0), "{c:?}");
    }
}

#[test]
fn orthogonal_windows_are_uncorrelated() {
    // increments after t_m are orthogonal to anything known at t_m
    let ens = ensemble(100, 0.5, 400, 3);
    let early = PredictableIntegrand::constant(1.0);
    let late = gaussian_integrand(0.25, 0.0);
    let out = ens
        .map_paths(|p| {
            let v = integrate_paths(&[&early, &late], p)?;
            let k = p.grid().steps();
            let m = 50;
            Ok(v[0][m] * (v[1][k] - v[1][m]))
        })
        .unwrap();
    let e = superbrownian::Estimate::of(out.values);
    assert!(e.within(0.0, 4.0), "{e:?}");
}

/// Weight at segment k equal to the sign of the mass increment over that
/// same segment: anticipates the future.
#[derive(Debug)]
struct Peeking;

impl PredictableWeight<f64> for Peeking {
    fn value(&self, path: &StoppedPath<'_, f64>, segment: usize) -> superbrownian::Result<f64> {
        let next = path.base().state(segment + 1).total_mass();
        Ok((next - path.state(segment).total_mass()).signum())
    }
}

#[test]
fn peeking_integrand_breaks_martingale_property() {
    let peek = PredictableIntegrand::from_terms(vec![IntegrandTerm {
        coefficient: 1.0,
        weight: Arc::new(Peeking),
        space: SpaceFactor::Constant(1.0),
    }]);
    let ens = ensemble(100, 0.5, 50, 4);
    let out = ens.map_paths(|p| Ok(integrate_path(&peek, p)?[p.grid().steps()])).unwrap();
    // Σ |ΔZ_k| > 0 on every surviving path, so the mean is far from zero
    let e = superbrownian::Estimate::of(out.values.iter().copied());
    assert!(out.values.iter().all(|v| *v >= 0.0));
    assert!(e.mean > 10.0 * e.se, "{e:?}");
}

#[test]
fn large_event_log_round_trips_byte_identically() {
    let mut log = BranchEventLog::with_capacity(2, 1e-3, 10.0, 100_000);
    for i in 0..100_000u32 {
        let t = (i + 1) as f64 * 1e-4;
        let x = [(i as f64).sin(), (i as f64 * 0.37).cos()];
        log.push(t, &x, if i % 3 == 0 { -1 } else { 1 }).unwrap();
    }
    let bytes = encode_event_log(&log).unwrap();
    assert_eq!(bytes.len(), 32 + 100_000 * (8 + 16 + 1));
    let back: BranchEventLog<f64> = decode_event_log(&bytes).unwrap();
    assert_eq!(encode_event_log(&back).unwrap(), bytes);
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("big.sbmx");
    write_event_log(&file, &log).unwrap();
    assert_eq!(std::fs::read(&file).unwrap(), bytes);
    let read: BranchEventLog<f64> = read_event_log(&file).unwrap();
    assert_eq!(read.times(), log.times());
    assert_eq!(read.signs(), log.signs());
    assert_eq!(read.flat_positions(), log.flat_positions());
}

#[test]
fn empty_log_round_trips() {
    let log: BranchEventLog<f64> = BranchEventLog::new(3, 0.5, 2.0);
    let back: BranchEventLog<f64> = decode_event_log(&encode_event_log(&log).unwrap()).unwrap();
    assert_eq!(back.len(), 0);
    assert_eq!(back.dim(), 3);
    assert_eq!(back.horizon(), 2.0);
}

fn one_path() -> MeasurePath<f64> {
    ensemble(60, 0.4, 1, 5).replicate(0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn integral_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, c1 in -1.0f64..1.0, c2 in -1.0f64..1.0) {
        let path = one_path();
        let phi = gaussian_integrand(0.1, c1);
        let psi = gaussian_integrand(0.2, c2);
        let combo = phi.scaled(a).plus(&psi.scaled(b));
        let v = integrate_paths(&[&phi, &psi, &combo], &path).unwrap();
        for k in 0..v[0].len() {
            prop_assert!((v[2][k] - (a * v[0][k] + b * v[1][k])).abs() < 1e-10);
        }
    }

    #[test]
    fn integral_is_constant_before_activation(a in 1usize..79) {
        let path = one_path();
        let t = path.grid().time(a);
        let phi = gaussian_integrand(t, 0.0);
        let v = integrate_path(&phi, &path).unwrap();
        prop_assert!(v[..=a].iter().all(|x| *x == 0.0));
    }
}
