use superbrownian::representation::{projection_samples, represent, residual_from_samples};
use superbrownian::{
    fit, AtomicMeasure, Basis, BoundedMap, ExperimentConfig, GammaSpec, Point, ProjectionSample, SimParams,
    SimulatedEnsemble, TargetMartingale, TargetSpec, TestFunctionSpec, TimeGrid, UIntegrandSpec,
};

fn gauss(c: f64, w: f64) -> TestFunctionSpec {
    TestFunctionSpec::Gaussian { center: vec![c], width: w, amplitude: 1.0 }
}

fn specs() -> Vec<UIntegrandSpec> {
    let mut cfg = ExperimentConfig::smoke();
    cfg.horizon = 0.5;
    cfg.step = 0.005;
    cfg.default_suite().basis
}

fn ensemble(replicates: usize, seed: u64) -> SimulatedEnsemble<f64> {
    let m = AtomicMeasure::from_atoms(1, [(Point::scalar(0.0), 1.0)]).unwrap();
    SimulatedEnsemble::new(m, SimParams::new(150, 1, TimeGrid::new(0.5, 0.005).unwrap(), seed).unwrap(), replicates)
}

fn samples(target: &TargetMartingale<f64>, basis: &Basis<f64>, replicates: usize) -> Vec<ProjectionSample<f64>> {
    projection_samples(target, basis, &ensemble(replicates, 17)).unwrap()
}

#[test]
fn planted_target_is_recovered() {
    let specs = specs();
    let basis = Basis::from_specs(&specs).unwrap();
    let target = TargetSpec::Planted { coefficients: vec![2.0, 0.0, 0.5, 0.0], integrands: specs }.build().unwrap();
    let (fit_ens, hold) = ensemble(400, 23).split_half();
    let report = represent(&target, &basis, &fit_ens, &hold, None).unwrap();
    let c = &report.solution.coefficients;
    for (j, want) in [2.0, 0.0, 0.5, 0.0].iter().enumerate() {
        assert!(
            (c[j] - want).abs() <= 4.0 * report.coefficient_se[j],
            "c[{j}] = {} ± {}",
            c[j],
            report.coefficient_se[j]
        );
    }
    assert!(report.residual.relative < 0.1, "{:?}", report.residual);
    assert!(report.adjoint.iter().all(|a| a.consistent(4.0)));
}

#[test]
fn nested_bases_never_lose_energy() {
    // in-sample ‖∇̂Y‖² = bᵀA⁻¹b grows with the basis (Schur complement)
    let specs = specs();
    let target = TargetMartingale::SquaredPairing(gauss(0.0, 1.0).build().unwrap());
    let full = Basis::from_specs(&specs).unwrap();
    let s = samples(&target, &full, 120);
    let mut last = 0.0;
    for n in 1..=full.len() {
        let sub: Vec<ProjectionSample<f64>> = s
            .iter()
            .map(|p| ProjectionSample {
                target: p.target,
                integrals: p.integrals[..n].to_vec(),
                quadrature: p.quadrature[..n].iter().map(|r| r[..n].to_vec()).collect(),
            })
            .collect();
        let sol = fit(&sub, Some(0.0)).unwrap();
        let energy = sol.norm_squared(&sub).mean;
        assert!(energy >= last * (1.0 - 1e-10), "basis {n}: {energy} < {last}");
        last = energy;
    }
}

#[test]
fn fitted_integrand_does_not_depend_on_the_spanning_set() {
    // two bases spanning the same space give the same fitted integral
    let target = TargetMartingale::TerminalPairing(gauss(0.5, 0.8).build().unwrap());
    let a = vec![
        UIntegrandSpec { gamma: GammaSpec::default(), activation: 0.0, h: gauss(0.0, 1.0) },
        UIntegrandSpec { gamma: GammaSpec::default(), activation: 0.0, h: gauss(0.6, 0.6) },
    ];
    let mut b = a.clone();
    b[0].gamma.map = BoundedMap::Constant { value: -3.0 };
    b[1].gamma.map = BoundedMap::Constant { value: 0.5 };
    let ba = Basis::from_specs(&a).unwrap();
    let bb = Basis::from_specs(&b).unwrap();
    let sa = samples(&target, &ba, 60);
    let sb = samples(&target, &bb, 60);
    let ca = fit(&sa, Some(0.0)).unwrap();
    let cb = fit(&sb, Some(0.0)).unwrap();
    for (pa, pb) in sa.iter().zip(&sb) {
        let ya: f64 = pa.integrals.iter().zip(&ca.coefficients).map(|(z, c)| z * c).sum();
        let yb: f64 = pb.integrals.iter().zip(&cb.coefficients).map(|(z, c)| z * c).sum();
        assert!((ya - yb).abs() <= 1e-8 * (1.0 + ya.abs()), "{ya} vs {yb}");
    }
}

#[test]
fn zero_martingale_has_zero_gradient() {
    let specs = specs();
    let basis = Basis::from_specs(&specs).unwrap();
    let target = TargetSpec::Planted { coefficients: vec![0.0; 4], integrands: specs }.build().unwrap();
    let s = samples(&target, &basis, 40);
    let sol = fit(&s, None).unwrap();
    assert!(sol.coefficients.iter().all(|c| *c == 0.0));
    assert_eq!(residual_from_samples(&s, &sol).unwrap().relative, 0.0);
}

#[test]
fn deterministic_target_has_zero_gradient() {
    // terminal pairing with a null test function is constant
    let basis = Basis::from_specs(&specs()).unwrap();
    let h = TestFunctionSpec::Gaussian { center: vec![0.0], width: 1.0, amplitude: 0.0 };
    let s = samples(&TargetMartingale::TerminalPairing(h.build().unwrap()), &basis, 20);
    assert!(fit(&s, None).unwrap().coefficients.iter().all(|c| c.abs() < 1e-12));
}
