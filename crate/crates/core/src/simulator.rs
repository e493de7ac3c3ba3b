//! Critical branching Brownian particles approximating super-Brownian motion
//! with generator `½Δ` and branching constant 1, and the Feller diffusion for
//! its total mass.
//!
//! Each particle carries mass `1/N`, moves as a standard Brownian motion and
//! branches at rate `γN` into 0 or 2 offspring with equal probability.
//! Branching times are drawn exactly (Gillespie); Brownian increments are
//! applied lazily, when a particle branches or a grid state is recorded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;

use crate::ensemble::{nonempty, Ensemble};
use crate::error::{Error, Result};
use crate::harness::stats::{Estimate, MomentAccumulator};
use crate::martingale_measure::{integrate_path, running_trapezoid, BranchEventLog, PredictableIntegrand};
use crate::measure::AtomicMeasure;
use crate::path::{MeasurePath, TimeGrid};
use crate::scalar::Scalar;
use crate::test_functions::{HalfLaplacian, SchwartzTestFunction};

/// Largest admissible `γ Δt`.
pub const MAX_RATE_STEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams<T> {
    /// Particle resolution `N`; each particle has mass `1/N`.
    pub resolution: u64,
    pub dim: usize,
    pub grid: TimeGrid<T>,
    /// `γ`; 1 unless a convergence study overrides it.
    pub branching_rate: T,
    pub seed: u64,
    /// Hard cap on the live particle count.
    pub population_cap: usize,
}

impl<T: Scalar> SimParams<T> {
    pub fn new(resolution: u64, dim: usize, grid: TimeGrid<T>, seed: u64) -> Result<Self> {
        let p = Self {
            resolution,
            dim,
            grid,
            branching_rate: T::one(),
            seed,
            population_cap: (100 * resolution.max(1)) as usize,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::parameter("resolution N must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::parameter("dimension must be at least 1"));
        }
        if !(self.branching_rate > T::zero()) || !self.branching_rate.is_finite() {
            return Err(Error::parameter("branching rate must be positive"));
        }
        if self.branching_rate * self.grid.dt() > T::lit(MAX_RATE_STEP) {
            return Err(Error::parameter(format!(
                "branching rate times step must not exceed {MAX_RATE_STEP}, got {}",
                self.branching_rate * self.grid.dt()
            )));
        }
        if self.population_cap == 0 {
            return Err(Error::parameter("population cap must be positive"));
        }
        Ok(())
    }

    pub fn mass_quantum(&self) -> T {
        T::one() / T::lit(self.resolution as f64)
    }

    /// Generator for replicate `r`: stream `r` of the master seed.
    pub fn rng(&self, replicate: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replicate);
        rng
    }
}

/// How the initial measure was turned into particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitialRounding {
    pub particles: u64,
    /// `true` if every atom mass was a multiple of `1/N` and particles were
    /// placed deterministically.
    pub exact: bool,
    /// Represented mass minus the mass of `m`.
    pub mass_error: f64,
}

/// Particle count and placement used for `m` at resolution `n`.
pub fn initial_rounding<T: Scalar>(m: &AtomicMeasure<T>, n: u64) -> InitialRounding {
    let nn = n as f64;
    let mut exact = true;
    let mut count = 0u64;
    for (_, mass) in m.atoms() {
        let scaled = mass.to_f64_lossy() * nn;
        let r = scaled.round();
        if (scaled - r).abs() > 1e-9 * scaled.max(1.0) {
            exact = false;
        }
        count += r as u64;
    }
    if !exact {
        count = (m.total_mass().to_f64_lossy() * nn).round() as u64;
    }
    InitialRounding { particles: count, exact, mass_error: count as f64 / nn - m.total_mass().to_f64_lossy() }
}

fn initial_particles<T: Scalar>(m: &AtomicMeasure<T>, n: u64, rng: &mut impl Rng) -> Vec<T> {
    let dim = m.dim();
    let r = initial_rounding(m, n);
    let mut positions = Vec::with_capacity(r.particles as usize * dim);
    if r.exact {
        for (x, mass) in m.atoms() {
            let k = (mass.to_f64_lossy() * n as f64).round() as usize;
            for _ in 0..k {
                positions.extend_from_slice(x);
            }
        }
        return positions;
    }
    // multinomial over atoms, proportional to mass
    let total = m.total_mass().to_f64_lossy();
    let cumulative: Vec<f64> = m
        .atoms()
        .scan(0.0, |acc, (_, w)| {
            *acc += w.to_f64_lossy();
            Some(*acc)
        })
        .collect();
    for _ in 0..r.particles {
        let u = rng.random::<f64>() * total;
        let i = cumulative.partition_point(|&c| c <= u).min(m.len() - 1);
        positions.extend_from_slice(m.position(i));
    }
    positions
}

fn gaussian<T: Scalar>(rng: &mut impl Rng, sd: f64) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z * sd)
}

/// One replicate with stream 0 of the master seed.
pub fn simulate<T: Scalar>(m: &AtomicMeasure<T>, p: &SimParams<T>) -> Result<MeasurePath<T>> {
    simulate_replicate(m, p, 0)
}

/// One replicate with stream `replicate` of the master seed.
pub fn simulate_replicate<T: Scalar>(m: &AtomicMeasure<T>, p: &SimParams<T>, replicate: u64) -> Result<MeasurePath<T>> {
    p.validate()?;
    if m.dim() != p.dim {
        return Err(Error::Dimension { expected: p.dim, got: m.dim() });
    }
    let mut rng = p.rng(replicate);
    let dim = p.dim;
    let grid = p.grid;
    let steps = grid.steps();
    let q = p.mass_quantum();
    let rate_per_particle = p.branching_rate.to_f64_lossy() * p.resolution as f64;

    let mut positions = initial_particles(m, p.resolution, &mut rng);
    let mut last: Vec<f64> = vec![0.0; positions.len() / dim];
    let mut states = Vec::with_capacity(steps + 1);
    states.push(AtomicMeasure::uniform(dim, positions.clone(), q)?);
    let mut log = BranchEventLog::with_capacity(dim, q, grid.horizon(), 0);

    let mut now = 0.0f64;
    let mut k = 0usize;
    let mut next_grid = grid.time(1).to_f64_lossy();
    let mut moved = vec![T::zero(); dim];
    while k < steps {
        let n = last.len();
        let event = if n == 0 {
            f64::INFINITY
        } else {
            let e: f64 = Exp1.sample(&mut rng);
            now + e / (rate_per_particle * n as f64)
        };
        while event > next_grid && k < steps {
            for (i, t0) in last.iter_mut().enumerate() {
                let sd = (next_grid - *t0).sqrt();
                for c in &mut positions[i * dim..(i + 1) * dim] {
                    *c += gaussian::<T>(&mut rng, sd);
                }
                *t0 = next_grid;
            }
            k += 1;
            states.push(AtomicMeasure::uniform(dim, positions.clone(), q)?);
            if k < steps {
                next_grid = grid.time(k + 1).to_f64_lossy();
            }
        }
        if k >= steps {
            break;
        }
        now = event;
        let i = rng.random_range(0..n);
        let sd = (now - last[i]).sqrt();
        for (c, slot) in positions[i * dim..(i + 1) * dim].iter_mut().zip(&mut moved) {
            *c += gaussian::<T>(&mut rng, sd);
            *slot = *c;
        }
        last[i] = now;
        let time = T::lit(now);
        if rng.random::<bool>() {
            positions.extend_from_within(i * dim..(i + 1) * dim);
            last.push(now);
            log.push_unchecked(time, &moved, 1);
            if last.len() > p.population_cap {
                return Err(Error::PopulationCap {
                    cap: p.population_cap,
                    time: now,
                    count: last.len(),
                    events: log.len(),
                });
            }
        } else {
            let end = last.len() - 1;
            if i != end {
                for c in 0..dim {
                    positions[i * dim + c] = positions[end * dim + c];
                }
            }
            positions.truncate(end * dim);
            last.swap_remove(i);
            log.push_unchecked(time, &moved, -1);
        }
    }
    MeasurePath::new(grid, states, log)
}

/// Euler–Maruyama path of `dZ = √Z dB` with full truncation, absorbed at 0.
pub fn simulate_total_mass<T: Scalar>(z0: T, grid: &TimeGrid<T>, seed: u64) -> Result<Vec<T>> {
    simulate_total_mass_replicate(z0, grid, seed, 0)
}

pub fn simulate_total_mass_replicate<T: Scalar>(
    z0: T,
    grid: &TimeGrid<T>,
    seed: u64,
    replicate: u64,
) -> Result<Vec<T>> {
    if !(z0 >= T::zero()) || !z0.is_finite() {
        return Err(Error::parameter(format!("initial mass must be finite and >= 0, got {z0}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let dt = grid.dt().to_f64_lossy();
    let sdt = dt.sqrt();
    let mut z = z0.to_f64_lossy();
    let mut out = Vec::with_capacity(grid.steps() + 1);
    out.push(z0);
    for _ in 0..grid.steps() {
        if z > 0.0 {
            let dw: f64 = StandardNormal.sample(&mut rng);
            z = (z + z.max(0.0).sqrt() * sdt * dw).max(0.0);
        }
        out.push(T::lit(z));
    }
    Ok(out)
}

/// Per-path quantities of the martingale problem for one test function.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleProblemSample<T> {
    /// `M(t_k)(φ)` for every grid index.
    pub martingale: Vec<T>,
    /// `∫_0^T ⟨X_s, φ²⟩ ds`.
    pub quadratic_variation: T,
    /// `M(T)(φ) − ∫∫ φ dM_X`: the particle-motion part of `M(φ)` plus the
    /// time-quadrature error; vanishes as `N → ∞`, `Δt → 0`.
    pub motion_part: T,
}

/// `M(t_k)(φ) = ⟨X_t, φ⟩ − ⟨X_0, φ⟩ − ∫_0^t ⟨X_s, ½Δφ⟩ ds` at every grid
/// index, and `∫_0^T ⟨X_s, φ²⟩ ds`.
pub fn martingale_problem_path<T: Scalar>(path: &MeasurePath<T>, phi: &SchwartzTestFunction<T>) -> Result<(Vec<T>, T)> {
    let h = phi.as_ref();
    let hl = HalfLaplacian(h);
    let grid = path.grid();
    let mut pair = Vec::with_capacity(grid.steps() + 1);
    let mut drift = Vec::with_capacity(grid.steps() + 1);
    let mut sq = Vec::with_capacity(grid.steps() + 1);
    for state in path.states() {
        let mut p = crate::scalar::CompensatedSum::new();
        let mut d = crate::scalar::CompensatedSum::new();
        let mut s = crate::scalar::CompensatedSum::new();
        for (i, (x, w)) in state.atoms().enumerate() {
            let v = h.value(x);
            let l = crate::measure::ScalarField::value(&hl, x);
            if !v.is_finite() || !l.is_finite() {
                return Err(Error::NonFiniteAtom { index: i, value: if v.is_finite() { l } else { v }.to_f64_lossy() });
            }
            p.add(w * v);
            d.add(w * l);
            s.add(w * v * v);
        }
        pair.push(p.value());
        drift.push(d.value());
        sq.push(s.value());
    }
    let running = running_trapezoid(&drift, grid.dt());
    let martingale: Vec<T> = (0..pair.len()).map(|k| pair[k] - pair[0] - running[k]).collect();
    let qv = *running_trapezoid(&sq, grid.dt()).last().expect("grid has states");
    Ok((martingale, qv))
}

/// [`martingale_problem_path`] plus the motion part.
pub fn martingale_problem_sample<T: Scalar>(
    path: &MeasurePath<T>,
    phi: &SchwartzTestFunction<T>,
) -> Result<MartingaleProblemSample<T>> {
    let (martingale, qv) = martingale_problem_path(path, phi)?;
    let phi_int = PredictableIntegrand::from(
        &crate::test_functions::UIntegrand::deterministic(T::zero(), phi.clone()).expect("activation at 0"),
    );
    let branching = integrate_path(&phi_int, path)?;
    let last = martingale.len() - 1;
    Ok(MartingaleProblemSample { motion_part: martingale[last] - branching[last], martingale, quadratic_variation: qv })
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleProblemReport<T> {
    pub times: Vec<T>,
    /// Sample mean of `M(t_k)(φ)` with SE, per grid index.
    pub mean: Vec<Estimate<T>>,
    /// Grid index of the largest `|mean|`.
    pub worst_index: usize,
    /// `M(T)(φ)²`.
    pub terminal_square: Estimate<T>,
    /// `∫_0^T ⟨X_s, φ²⟩ ds`.
    pub quadratic_variation: Estimate<T>,
    /// Per-path `M(T)(φ)² − ∫⟨X,φ²⟩`.
    pub gap: Estimate<T>,
    /// Mean square of the motion part.
    pub motion_square: Estimate<T>,
    pub capped: usize,
}

impl<T: Scalar> MartingaleProblemReport<T> {
    pub fn from_samples(times: Vec<T>, samples: &[MartingaleProblemSample<T>], capped: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let k = samples[0].martingale.len();
        let mut per_t = vec![MomentAccumulator::new(); k];
        let mut sq = MomentAccumulator::new();
        let mut qv = MomentAccumulator::new();
        let mut gap = MomentAccumulator::new();
        let mut motion = MomentAccumulator::new();
        for s in samples {
            for (acc, v) in per_t.iter_mut().zip(&s.martingale) {
                acc.push(*v);
            }
            let end = s.martingale[k - 1];
            sq.push(end * end);
            qv.push(s.quadratic_variation);
            gap.push(end * end - s.quadratic_variation);
            motion.push(s.motion_part * s.motion_part);
        }
        let mean: Vec<Estimate<T>> = per_t.iter().map(MomentAccumulator::estimate).collect();
        let worst_index = (0..k)
            .max_by(|&a, &b| mean[a].mean.abs().partial_cmp(&mean[b].mean.abs()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(0);
        Ok(Self {
            times,
            mean,
            worst_index,
            terminal_square: sq.estimate(),
            quadratic_variation: qv.estimate(),
            gap: gap.estimate(),
            motion_square: motion.estimate(),
            capped,
        })
    }

    /// Largest `|mean M(t)(φ)|` over the grid with its SE.
    pub fn max_abs_mean(&self) -> Estimate<T> {
        let e = self.mean[self.worst_index];
        Estimate { mean: e.mean.abs(), ..e }
    }

    /// `|𝔼M(T)(φ)² − 𝔼∫⟨X,φ²⟩| ≤ k (se_lhs + se_rhs)`.
    pub fn qv_consistent(&self, k: T) -> bool {
        (self.terminal_square.mean - self.quadratic_variation.mean).abs()
            <= k * (self.terminal_square.se + self.quadratic_variation.se)
    }
}

pub fn verify_martingale_problem<T: Scalar, E: Ensemble<T> + ?Sized>(
    ensemble: &E,
    phi: &SchwartzTestFunction<T>,
) -> Result<MartingaleProblemReport<T>> {
    let out = nonempty(
        ensemble.map_paths(|p| Ok((p.grid().times().collect::<Vec<T>>(), martingale_problem_sample(p, phi)?)))?,
    )?;
    let times = out.values[0].0.clone();
    if out.values.iter().any(|(t, _)| t.len() != times.len()) {
        return Err(Error::GridMismatch("ensemble paths use different grids".into()));
    }
    let samples: Vec<_> = out.values.into_iter().map(|(_, s)| s).collect();
    MartingaleProblemReport::from_samples(times, &samples, out.capped.len())
}
