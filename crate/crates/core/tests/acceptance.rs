//! Acceptance suite at desk scale: d = 1, m = δ₀, N = 2000, Δt = 10⁻³,
//! R = 1000, statistical gates at 3 SE. Prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.
//!
//! One streamed pass over the N = 2000 ensemble (simulated to T = 2 and
//! truncated to T = 1 for everything except extinction) feeds criteria
//! 1–7, 9 and 10; criterion 6 adds an N = 500 ensemble, criterion 8 a
//! coarse (N/4, 2Δt) ensemble of 100 paths, criterion 11 two small harness
//! runs.

use std::fmt::Write as _;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use superbrownian::functional::{default_bump, pathwise_representation_error, vderiv_fd};
use superbrownian::harness::run::run;
use superbrownian::representation::{
    adjoint_basis_element, chi_square_95, coefficient_covariance, integration_by_parts, mahalanobis,
    residual_from_samples, solve,
};
use superbrownian::simulator::martingale_problem_path;
use superbrownian::{
    gram_matrix, integrate_paths, integrate_u_closed_form, quadrature_matrix, rhs_vector, AtomicMeasure, Error,
    Estimate, ExperimentConfig, MeasurePath, Point, PredictableIntegrand, ProjectionSample, SimParams,
    TestFunctionSpec, TimeGrid, UFunctional, UIntegrand, UIntegrandSpec,
};

const SEED: u64 = 271_828;
const N: u64 = 2000;
const DT: f64 = 1e-3;
const R: usize = 1000;
const K: f64 = 3.0;
const T1: usize = 1000;
const T2: usize = 2000;
const MP_CHECKPOINTS: [usize; 5] = [200, 400, 600, 800, 1000];
const PROBE_PATHS: usize = 10;
const PROBES_PER_PATH: usize = 10;
const REPRESENTATION_PATHS: usize = 100;

struct Suite {
    initial: AtomicMeasure<f64>,
    specs: Vec<UIntegrandSpec>,
    basis: Vec<UIntegrand<f64>>,
    integrands: Vec<PredictableIntegrand<f64>>,
    phis: Vec<superbrownian::SchwartzTestFunction<f64>>,
}

impl Suite {
    fn new() -> Self {
        let mut cfg = ExperimentConfig::smoke();
        cfg.horizon = 1.0;
        cfg.step = DT;
        let cfg = cfg.default_suite();
        let basis: Vec<UIntegrand<f64>> = cfg.basis.iter().map(|s| s.build().unwrap()).collect();
        let phis = [(0.0, 1.0), (0.5, 0.7)]
            .iter()
            .map(|&(c, w)| TestFunctionSpec::Gaussian { center: vec![c], width: w, amplitude: 1.0 }.build().unwrap())
            .collect();
        Self {
            initial: AtomicMeasure::from_atoms(1, [(Point::scalar(0.0), 1.0)]).unwrap(),
            integrands: basis.iter().map(PredictableIntegrand::from).collect(),
            specs: cfg.basis,
            basis,
            phis,
        }
    }
}

/// Direct evaluation of `Γ(ω) 1_{(a,T]}(t) h(x)` from its config description, without the
/// library's functional machinery.
fn u_derivative_oracle(spec: &UIntegrandSpec, path: &MeasurePath<f64>, t: usize, x: f64) -> f64 {
    let gauss = |s: &TestFunctionSpec, y: f64| match s {
        TestFunctionSpec::Gaussian { center, width, amplitude } => {
            amplitude * (-(y - center[0]).powi(2) / (2.0 * width * width)).exp()
        }
        _ => unreachable!("suite uses Gaussians"),
    };
    let a = (spec.activation / DT).round() as usize;
    if t <= a {
        return 0.0;
    }
    let gamma = match (&spec.gamma.inner, spec.gamma.map) {
        (_, superbrownian::BoundedMap::Constant { value }) => value,
        (Some(k), superbrownian::BoundedMap::Tanh { scale }) => {
            let idx = (spec.gamma.time / DT).round() as usize;
            let pairing: f64 = path.state(idx).atoms().map(|(y, w)| w * gauss(k, y[0])).sum();
            (scale * pairing).tanh()
        }
        other => unreachable!("suite has no Γ of the form {other:?}"),
    };
    gamma * gauss(&spec.h, x)
}

struct MainSample {
    /// `Z_t` at t = 0.25, 0.5, 1, 2.
    mass: [f64; 4],
    heat: f64,
    /// Per test function: `M(t)(φ)` at the checkpoints and `∫⟨X,φ²⟩ds`.
    mp: Vec<([f64; 5], f64)>,
    projection: ProjectionSample<f64>,
    /// `(U_i − I_i)²`: martingale-problem integral against event-sum integral.
    defect: Vec<f64>,
    /// `(functional, vderiv_fd, oracle)`.
    probes: Vec<(usize, f64, f64)>,
    /// Pathwise representation error of the Γ ≡ 1 functionals.
    pathwise: Option<[f64; 2]>,
}

fn projection_from(
    integrands: &[PredictableIntegrand<f64>],
    path: &MeasurePath<f64>,
) -> superbrownian::Result<ProjectionSample<f64>> {
    let refs: Vec<&PredictableIntegrand<f64>> = integrands.iter().collect();
    let steps = path.grid().steps();
    let integrals = integrate_paths(&refs, path)?.into_iter().map(|v| v[steps]).collect();
    let quadrature = quadrature_matrix(&refs, path, steps)?;
    Ok(ProjectionSample { target: 0.0, integrals, quadrature })
}

fn main_sample(suite: &Suite, replicate: usize, full: &MeasurePath<f64>) -> superbrownian::Result<MainSample> {
    let z = |k: usize| full.state(k).total_mass();
    let mass = [z(250), z(500), z(T1), z(T2)];
    let path = full.truncate(T1)?;
    let heat = path.state(T1).atoms().map(|(x, w)| w * (-x[0] * x[0] / 2.0).exp()).sum();
    let mp = suite
        .phis
        .iter()
        .map(|phi| {
            let (m, qv) = martingale_problem_path(&path, phi)?;
            Ok((MP_CHECKPOINTS.map(|k| m[k]), qv))
        })
        .collect::<superbrownian::Result<_>>()?;
    let projection = projection_from(&suite.integrands, &path)?;
    let defect = suite
        .basis
        .iter()
        .zip(&projection.integrals)
        .map(|(u, i)| Ok((integrate_u_closed_form(u, &path, 1.0)? - i).powi(2)))
        .collect::<superbrownian::Result<_>>()?;

    let mut probes = Vec::new();
    if replicate < PROBE_PATHS {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0xface);
        rng.set_stream(replicate as u64);
        let omega = path.full();
        for p in 0..PROBES_PER_PATH {
            let j = p % suite.basis.len();
            let t = rng.random_range(1..=T1);
            let x = rng.random_range(-3.0..3.0);
            let f = UFunctional::new(suite.basis[j].clone());
            let fd = vderiv_fd(&f, t, &omega, &Point::scalar(x), default_bump(&omega, t))?;
            probes.push((j, fd, u_derivative_oracle(&suite.specs[j], &path, t, x)));
        }
    }
    let pathwise = if replicate < REPRESENTATION_PATHS { Some(pathwise_pair(suite, &path)?) } else { None };
    Ok(MainSample { mass, heat, mp, projection, defect, probes, pathwise })
}

/// The two Γ ≡ 1 basis elements are 0 and 2.
fn pathwise_pair(suite: &Suite, path: &MeasurePath<f64>) -> superbrownian::Result<[f64; 2]> {
    let e = |j: usize| pathwise_representation_error(&UFunctional::new(suite.basis[j].clone()), path);
    Ok([e(0)?, e(2)?])
}

/// Replicates in order, skipping any that hit the population cap.
fn stream<S: Send>(
    n: u64,
    dt: f64,
    horizon: f64,
    replicates: usize,
    seed: u64,
    suite: &Suite,
    f: impl Fn(usize, &MeasurePath<f64>) -> superbrownian::Result<S> + Sync,
) -> (Vec<S>, usize) {
    let grid = TimeGrid::new(horizon, dt).unwrap();
    let params = SimParams::new(n, 1, grid, seed).unwrap();
    let out: Vec<Option<S>> = (0..replicates)
        .into_par_iter()
        .map(|i| match superbrownian::simulate_replicate(&suite.initial, &params, i as u64) {
            Ok(p) => Some(f(i, &p).expect("per-path computation")),
            Err(Error::PopulationCap { .. }) => None,
            Err(e) => panic!("simulation failed: {e}"),
        })
        .collect();
    let capped = out.iter().filter(|o| o.is_none()).count();
    (out.into_iter().flatten().collect(), capped)
}

struct Line {
    pass: bool,
    text: String,
}

fn line(id: usize, name: &str, pass: bool, detail: String) -> Line {
    Line { pass, text: format!("{} {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" }) }
}

fn est(xs: impl IntoIterator<Item = f64>) -> Estimate<f64> {
    Estimate::of(xs)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// `Var[Z_t]` from the log-Laplace equation `v' = −v²/2`, `v(0) = λ`:
/// `log 𝔼 e^{−λ Z_t} = −Z₀ v(t, λ)`, differentiated twice at λ = 0.
fn variance_oracle(z0: f64, t: f64) -> f64 {
    let h = 1e-3;
    let kappa = |lambda: f64| -z0 * log_laplace(lambda, t);
    (kappa(h) - 2.0 * kappa(0.0) + kappa(-h)) / (h * h)
}

/// RK4 on `v' = −v²/2`, with steps keeping `h v` small.
fn log_laplace(lambda: f64, t: f64) -> f64 {
    let f = |v: f64| -0.5 * v * v;
    let (mut s, mut v) = (0.0, lambda);
    while s < t {
        let h = (1e-3f64).min(1e-3 / v.abs().max(1e-12)).min(t - s);
        let k1 = f(v);
        let k2 = f(v + 0.5 * h * k1);
        let k3 = f(v + 0.5 * h * k2);
        let k4 = f(v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        s += h;
    }
    v
}

/// `P(Z_t = 0) = lim_{λ→∞} exp(−Z₀ v(t, λ))`.
fn extinction_oracle(z0: f64, t: f64) -> f64 {
    (-z0 * log_laplace(1e6, t)).exp()
}

/// `∫ p_t(x) e^{−x²/2} dx` by composite Simpson on [−15, 15].
fn heat_oracle(t: f64) -> f64 {
    let n = 30_000;
    let (a, b) = (-15.0, 15.0);
    let h = (b - a) / n as f64;
    let f = |x: f64| (-x * x / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt() * (-x * x / 2.0).exp();
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn main() -> ExitCode {
    let clock = Instant::now();
    let suite = Suite::new();
    let mut lines = Vec::new();

    let (main, capped_main) = stream(N, DT, 2.0, R, SEED, &suite, |i, p| main_sample(&suite, i, p));
    let after_main = clock.elapsed().as_secs_f64();

    // 1
    let mut ok = true;
    let mut detail = String::new();
    for (c, t) in [0.25, 0.5, 1.0].iter().enumerate() {
        let e = est(main.iter().map(|s| s.mass[c]));
        ok &= e.within(1.0, K);
        write!(detail, "Z_{t} = {:.4} ± {:.4}; ", e.mean, e.se).unwrap();
    }
    lines.push(line(1, "mass conserved in mean", ok, detail + "target 1 within 3 SE"));

    // 2
    let z1: Vec<f64> = main.iter().map(|s| s.mass[2]).collect();
    let var = superbrownian::MomentAccumulator::from_iter(z1.iter().copied()).variance();
    let target = variance_oracle(1.0, 1.0);
    lines.push(line(
        2,
        "total-mass variance",
        (var - target).abs() <= 0.1 * target,
        format!("Var[Z_1] = {var:.4}, oracle {target:.4}, tolerance 10%"),
    ));

    // 3
    let p0 = main.iter().filter(|s| s.mass[3] == 0.0).count() as f64 / main.len() as f64;
    let target = extinction_oracle(1.0, 2.0);
    lines.push(line(
        3,
        "extinction probability",
        (p0 - target).abs() <= 0.03,
        format!("P(Z_2 = 0) = {p0:.4}, oracle {target:.4}, tolerance 0.03"),
    ));

    // 4
    let heat = est(main.iter().map(|s| s.heat));
    let target = heat_oracle(1.0);
    lines.push(line(
        4,
        "heat-semigroup mean",
        heat.within(target, K),
        format!("E<X_1, e^(-x²/2)> = {:.4} ± {:.4}, oracle {target:.6}", heat.mean, heat.se),
    ));

    // 5
    let mut ok = true;
    let mut detail = String::new();
    for f in 0..suite.phis.len() {
        let mut worst: f64 = 0.0;
        for c in 0..5 {
            let e = est(main.iter().map(|s| s.mp[f].0[c]));
            ok &= e.within(0.0, K);
            worst = worst.max(e.z_score(0.0).abs());
        }
        let sq = est(main.iter().map(|s| s.mp[f].0[4].powi(2)));
        let qv = est(main.iter().map(|s| s.mp[f].1));
        let qv_ok = (sq.mean - qv.mean).abs() <= K * (sq.se + qv.se);
        ok &= qv_ok;
        write!(
            detail,
            "φ{f}: max |z| {worst:.2}, E M_T² = {:.4} vs E∫<X,φ²> = {:.4} (tol {:.4}); ",
            sq.mean,
            qv.mean,
            K * (sq.se + qv.se)
        )
        .unwrap();
    }
    lines.push(line(5, "martingale problem", ok, detail));

    // 6
    let (coarse, capped_coarse) = stream(500, DT, 1.0, R, SEED + 1, &suite, |_, p| {
        let proj = projection_from(&suite.integrands, p)?;
        let defect = suite
            .basis
            .iter()
            .zip(&proj.integrals)
            .map(|(u, i)| Ok((integrate_u_closed_form(u, p, 1.0)? - i).powi(2)))
            .collect::<superbrownian::Result<Vec<f64>>>()?;
        Ok((proj, defect))
    });
    let mut ok = true;
    let mut detail = String::new();
    for i in 0..suite.basis.len() {
        let lhs = est(main.iter().map(|s| s.projection.integrals[i].powi(2)));
        let rhs = est(main.iter().map(|s| s.projection.quadrature[i][i]));
        let iso_ok = (lhs.mean - rhs.mean).abs() <= K * (lhs.se + rhs.se);
        let coarse_gap = {
            let l = est(coarse.iter().map(|s| s.0.integrals[i].powi(2)));
            let r = est(coarse.iter().map(|s| s.0.quadrature[i][i]));
            l.mean - r.mean
        };
        let d_fine = est(main.iter().map(|s| s.defect[i]));
        let d_coarse = est(coarse.iter().map(|s| s.1[i]));
        let trend_ok = d_fine.mean < d_coarse.mean;
        ok &= iso_ok && trend_ok;
        write!(
            detail,
            "φ{i}: |I|² {:.4} vs ‖φ‖² {:.4} (tol {:.4}), event-sum gap N=500 {:+.4} N=2000 {:+.4}, \
             motion defect {:.2e} → {:.2e}; ",
            lhs.mean,
            rhs.mean,
            K * (lhs.se + rhs.se),
            coarse_gap,
            lhs.mean - rhs.mean,
            d_coarse.mean,
            d_fine.mean
        )
        .unwrap();
    }
    lines.push(line(6, "isometry", ok, detail));

    // 7
    let probes: Vec<&(usize, f64, f64)> = main.iter().flat_map(|s| &s.probes).collect();
    let worst = probes.iter().map(|(_, fd, o)| (fd - o).abs()).fold(0.0, f64::max);
    let functionals = {
        let mut f: Vec<usize> = probes.iter().map(|p| p.0).collect();
        f.dedup();
        f.sort();
        f.dedup();
        f.len()
    };
    lines.push(line(
        7,
        "vertical derivative exactness",
        worst < 1e-10 && probes.len() == PROBE_PATHS * PROBES_PER_PATH,
        format!("{} probes over {functionals} U-functionals, max |fd − oracle| = {worst:.2e}", probes.len()),
    ));

    // 8
    let (coarse8, _) =
        stream(N / 4, 2.0 * DT, 1.0, REPRESENTATION_PATHS, SEED + 2, &suite, |_, p| pathwise_pair(&suite, p));
    let fine8: Vec<[f64; 2]> = main.iter().filter_map(|s| s.pathwise).collect();
    let mut ok = fine8.len() >= REPRESENTATION_PATHS - capped_main;
    let mut detail = String::new();
    for (slot, j) in [(0, 0), (1, 2)] {
        let m_coarse = median(coarse8.iter().map(|v| v[slot]).collect());
        let m_fine = median(fine8.iter().map(|v| v[slot]).collect());
        let drop = 1.0 - m_fine / m_coarse;
        ok &= drop >= 0.35;
        write!(detail, "φ{j}: median sup-error {m_coarse:.3e} → {m_fine:.3e} ({:.0}% drop); ", 100.0 * drop).unwrap();
    }
    lines.push(line(8, "pathwise representation convergence", ok, detail + "need ≥ 35%"));

    // 9 and 10: fit on the first half, score on the second
    let half = main.len() / 2;
    let planted = [2.0, 0.0, 0.5, 0.0];
    let with_target = |range: &[MainSample], c: &[f64]| -> Vec<ProjectionSample<f64>> {
        range
            .iter()
            .map(|s| {
                let mut p = s.projection.clone();
                p.target = p.integrals.iter().zip(c).map(|(z, c)| z * c).sum();
                p
            })
            .collect()
    };
    let fit_gal = |samples: &[ProjectionSample<f64>]| {
        solve(&gram_matrix(samples).unwrap().mean, &rhs_vector(samples).unwrap().mean, None).unwrap()
    };
    let fit = with_target(&main[..half], &planted);
    let hold = with_target(&main[half..], &planted);
    let sol = fit_gal(&fit);
    let cov = coefficient_covariance(&fit, &sol).unwrap();
    let d2 = mahalanobis(&sol.coefficients, &planted, &cov).unwrap();
    let q95 = chi_square_95(planted.len());
    let res = residual_from_samples(&hold, &sol).unwrap();
    lines.push(line(
        9,
        "Galerkin plant-and-recover",
        d2 <= q95 && res.relative < 0.05,
        format!(
            "c = {:?}, Mahalanobis {d2:.3} vs χ²₄(0.95) {q95:.3}, holdout relative residual {:.2e}, condition {:.1}",
            sol.coefficients.iter().map(|c| (c * 1e4).round() / 1e4).collect::<Vec<_>>(),
            res.relative,
            sol.condition
        ),
    ));

    let n = suite.basis.len();
    let unit = |j: usize| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let mut ok = true;
    let mut worst_z: f64 = 0.0;
    let mut fitted = Vec::new();
    for j in 0..n {
        let sol = fit_gal(&with_target(&main[..half], &unit(j)));
        let hold = with_target(&main[half..], &unit(j));
        for i in 0..n {
            let a = adjoint_basis_element(&hold, &sol, i).unwrap();
            ok &= a.consistent(K);
            worst_z = worst_z.max(a.gap() / a.combined_se());
        }
        fitted.push(sol.coefficients);
    }
    let hold = with_target(&main[half..], &planted);
    for a in 0..n {
        for b in a..n {
            let ya: Vec<f64> = hold.iter().map(|s| s.integrals[a]).collect();
            let yb: Vec<f64> = hold.iter().map(|s| s.integrals[b]).collect();
            let r = integration_by_parts(&ya, &yb, &hold, &fitted[a], &fitted[b]).unwrap();
            ok &= r.consistent(K);
            worst_z = worst_z.max(r.gap() / r.combined_se());
        }
    }
    lines.push(line(
        10,
        "adjoint and integration by parts",
        ok,
        format!(
            "{} adjoint and {} integration-by-parts gaps, worst gap/combined SE = {worst_z:.2}",
            n * n,
            n * (n + 1) / 2
        ),
    ));

    // 11
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::smoke();
    cfg.horizon = 0.5;
    cfg.step = 5e-3;
    cfg.resolution = 200;
    cfg.replicates = 16;
    cfg.seed = SEED;
    let outs: Vec<_> = [1usize, 4]
        .iter()
        .map(|&threads| {
            let out = dir.path().join(format!("threads{threads}"));
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| run(&cfg, &out)).unwrap();
            out
        })
        .collect();
    let mut compared = 0;
    let mut differing = Vec::new();
    for entry in std::fs::read_dir(&outs[0]).unwrap() {
        let name = entry.unwrap().file_name();
        let name = name.to_string_lossy().into_owned();
        if name.ends_with(".csv") || name == "summary.json" {
            compared += 1;
            if std::fs::read(outs[0].join(&name)).unwrap() != std::fs::read(outs[1].join(&name)).unwrap() {
                differing.push(name);
            }
        }
    }
    lines.push(line(
        11,
        "reproducibility across thread counts",
        differing.is_empty() && compared >= 8,
        format!("{compared} files compared at 1 and 4 threads, differing: {differing:?}"),
    ));

    for l in &lines {
        println!("{}", l.text);
    }
    println!(
        "paths: {} main (capped {capped_main}), {} at N=500 (capped {capped_coarse}), {} coarse; \
         main pass {after_main:.0}s, total {:.0}s",
        main.len(),
        coarse.len(),
        coarse8.len(),
        clock.elapsed().as_secs_f64()
    );
    if lines.iter().all(|l| l.pass) {
        println!("acceptance: all {} criteria passed", lines.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} of {} criteria failed", lines.iter().filter(|l| !l.pass).count(), lines.len());
        ExitCode::FAILURE
    }
}
