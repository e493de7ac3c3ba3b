//! Measure-valued paths on a uniform time grid, stopped paths and the
//! vertical bump `ω_t + ε δ_x 1_{[t,T]}`.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::martingale_measure::BranchEventLog;
use crate::measure::{AtomicMeasure, Point, ScalarField};
use crate::scalar::Scalar;

/// Uniform grid `t_k = k Δt`, `k = 0..=K`, with `K Δt = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    horizon: T,
    steps: usize,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(horizon: T, step: T) -> Result<Self> {
        if !(horizon > T::zero()) || !(step > T::zero()) || !horizon.is_finite() {
            return Err(Error::parameter(format!("grid needs T > 0 and dt > 0 (T = {horizon}, dt = {step})")));
        }
        let ratio = horizon / step;
        let steps = ratio.round();
        if (ratio - steps).abs() > T::lit(1e-6) * steps.max(T::one()) || steps < T::one() {
            return Err(Error::parameter(format!("horizon {horizon} is not a multiple of step {step}")));
        }
        Ok(Self { horizon, steps: steps.to_usize().unwrap_or(0) })
    }

    pub fn with_steps(horizon: T, steps: usize) -> Result<Self> {
        if !(horizon > T::zero()) || steps == 0 {
            return Err(Error::parameter("grid needs T > 0 and at least one step"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    /// Number of steps `K`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> T {
        self.horizon / T::count(self.steps)
    }

    pub fn time(&self, k: usize) -> T {
        if k >= self.steps {
            self.horizon
        } else {
            T::count(k) * self.dt()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = T> + '_ {
        (0..=self.steps).map(move |k| self.time(k))
    }

    /// Grid index of `t`; off-grid times are rejected rather than rounded.
    pub fn index_of(&self, t: T) -> Result<usize> {
        let dt = self.dt();
        let k = (t / dt).round();
        let off = || Error::OffGrid { time: t.to_f64_lossy(), step: dt.to_f64_lossy() };
        if !k.is_finite() || k < T::zero() || k > T::count(self.steps) {
            return Err(off());
        }
        let k = k.to_usize().ok_or_else(off)?;
        if (self.time(k) - t).abs() > T::lit(1e-6) * dt {
            return Err(off());
        }
        Ok(k)
    }

    /// Index `k` of the segment `(t_k, t_{k+1}]` containing `s ∈ (0, T]`.
    pub fn segment_of(&self, s: T) -> usize {
        let guess = (s / self.dt()).ceil().to_usize().unwrap_or(1).clamp(1, self.steps);
        let mut k = guess;
        while k > 1 && self.time(k - 1) >= s {
            k -= 1;
        }
        while k < self.steps && self.time(k) < s {
            k += 1;
        }
        k - 1
    }

    pub fn same_as(&self, other: &Self) -> bool {
        self.steps == other.steps && self.horizon == other.horizon
    }
}

/// A measure-valued path sampled on a grid, together with the branching
/// events that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurePath<T> {
    grid: TimeGrid<T>,
    states: Vec<AtomicMeasure<T>>,
    events: BranchEventLog<T>,
}

impl<T: Scalar> MeasurePath<T> {
    pub fn new(grid: TimeGrid<T>, states: Vec<AtomicMeasure<T>>, events: BranchEventLog<T>) -> Result<Self> {
        if states.len() != grid.steps() + 1 {
            return Err(Error::GridMismatch(format!("{} states for a grid with {} steps", states.len(), grid.steps())));
        }
        let dim = states[0].dim();
        if let Some(s) = states.iter().find(|s| s.dim() != dim) {
            return Err(Error::Dimension { expected: dim, got: s.dim() });
        }
        if events.dim() != dim {
            return Err(Error::Dimension { expected: dim, got: events.dim() });
        }
        if let Some(last) = events.times().last() {
            if *last > grid.horizon() {
                return Err(Error::GridMismatch("event after the horizon".into()));
            }
        }
        Ok(Self { grid, states, events })
    }

    /// Path with an empty event log, e.g. a deterministic test path.
    pub fn without_events(grid: TimeGrid<T>, states: Vec<AtomicMeasure<T>>, mass_quantum: T) -> Result<Self> {
        let dim = states.first().map_or(1, |s| s.dim());
        let log = BranchEventLog::new(dim, mass_quantum, grid.horizon());
        Self::new(grid, states, log)
    }

    /// Path frozen at `m` over the whole horizon.
    pub fn constant(grid: TimeGrid<T>, m: AtomicMeasure<T>) -> Self {
        let dim = m.dim();
        let states = vec![m; grid.steps() + 1];
        let log = BranchEventLog::new(dim, T::one(), grid.horizon());
        Self { grid, states, events: log }
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn state(&self, k: usize) -> &AtomicMeasure<T> {
        &self.states[k]
    }

    pub fn states(&self) -> &[AtomicMeasure<T>] {
        &self.states
    }

    pub fn events(&self) -> &BranchEventLog<T> {
        &self.events
    }

    pub fn into_parts(self) -> (TimeGrid<T>, Vec<AtomicMeasure<T>>, BranchEventLog<T>) {
        (self.grid, self.states, self.events)
    }

    /// Total mass at every grid time.
    pub fn total_masses(&self) -> Vec<T> {
        self.states.iter().map(AtomicMeasure::total_mass).collect()
    }

    /// The path read up to horizon `t_k`: states `0..=k` and events up to `t_k`
    /// on the grid truncated at `k`.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.grid.steps() {
            return Err(Error::parameter(format!("truncation index {k} out of range")));
        }
        let grid = TimeGrid::with_steps(self.grid.time(k), k)?;
        let states = self.states[..=k].to_vec();
        let events = self.events.truncated(self.grid.time(k));
        Self::new(grid, states, events)
    }

    /// `ω_t`: the path frozen from grid time `t` on.
    pub fn stop(&self, t: T) -> Result<StoppedPath<'_, T>> {
        Ok(self.stop_index(self.grid.index_of(t)?))
    }

    pub fn stop_index(&self, k: usize) -> StoppedPath<'_, T> {
        StoppedPath { base: self, stop: k.min(self.grid.steps()), bumps: Vec::new() }
    }

    /// The whole path viewed as stopped at the horizon.
    pub fn full(&self) -> StoppedPath<'_, T> {
        self.stop_index(self.grid.steps())
    }
}

/// `(t, ω_t)` with optional vertical bumps `Σ_j ε_j δ_{x_j} 1_{[t,T]}` applied
/// at the stop time. States are materialized on demand.
#[derive(Debug, Clone)]
pub struct StoppedPath<'a, T> {
    base: &'a MeasurePath<T>,
    stop: usize,
    bumps: Vec<(Point<T>, T)>,
}

impl<'a, T: Scalar> StoppedPath<'a, T> {
    pub fn base(&self) -> &'a MeasurePath<T> {
        self.base
    }

    pub fn grid(&self) -> &'a TimeGrid<T> {
        &self.base.grid
    }

    pub fn stop_index(&self) -> usize {
        self.stop
    }

    pub fn stop_time(&self) -> T {
        self.base.grid.time(self.stop)
    }

    pub fn bumps(&self) -> &[(Point<T>, T)] {
        &self.bumps
    }

    /// `stop(ω_t, u) = ω_{t ∧ u}`; bumps survive only if `u ≥ t`.
    pub fn stop(&self, u: T) -> Result<Self> {
        Ok(self.stop_at(self.base.grid.index_of(u)?))
    }

    pub fn stop_at(&self, u: usize) -> Self {
        if u >= self.stop {
            self.clone()
        } else {
            Self { base: self.base, stop: u, bumps: Vec::new() }
        }
    }

    /// `ω_t + ε δ_x 1_{[t,T]}`.
    pub fn bump(&self, x: &Point<T>, eps: T) -> Result<Self> {
        if !(eps >= T::zero()) || !eps.is_finite() {
            return Err(Error::contract(format!("bump size must be finite and >= 0, got {eps}")));
        }
        if x.dim() != self.base.dim() {
            return Err(Error::Dimension { expected: self.base.dim(), got: x.dim() });
        }
        let mut out = self.clone();
        if eps > T::zero() {
            out.bumps.push((x.clone(), eps));
        }
        Ok(out)
    }

    /// State at grid index `u` (read as `ω(u ∧ t)` plus any bumps).
    pub fn state(&self, u: usize) -> Cow<'a, AtomicMeasure<T>> {
        let raw = &self.base.states[u.min(self.stop)];
        if u < self.stop || self.bumps.is_empty() {
            return Cow::Borrowed(raw);
        }
        let mut m = raw.clone();
        for (x, eps) in &self.bumps {
            m = m.add_atom(x.coords(), *eps).expect("bump validated on construction");
        }
        Cow::Owned(m)
    }

    pub fn state_at(&self, u: T) -> Result<Cow<'a, AtomicMeasure<T>>> {
        Ok(self.state(self.base.grid.index_of(u)?))
    }

    /// `⟨ω(u ∧ t), f⟩` without materializing the bumped state.
    pub fn pair_state<F: ScalarField<T> + ?Sized>(&self, u: usize, f: &F) -> Result<T> {
        self.pair_state_with(u, |x| f.value(x))
    }

    pub fn pair_state_with(&self, u: usize, f: impl Fn(&[T]) -> T) -> Result<T> {
        let raw = self.base.states[u.min(self.stop)].pair_with(&f)?;
        if u < self.stop {
            return Ok(raw);
        }
        Ok(self.bumps.iter().fold(raw, |acc, (x, eps)| acc + *eps * f(x.coords())))
    }

    /// Left limit `⟨ω(u−), f⟩`: the bump jump at the stop time is excluded at
    /// `u = t`. Time integrals use this so a bump on `[t,T]` has no weight in
    /// `∫_a^t`.
    pub fn pair_state_left_with(&self, u: usize, f: impl Fn(&[T]) -> T) -> Result<T> {
        if u <= self.stop {
            self.base.states[u.min(self.stop)].pair_with(&f)
        } else {
            self.pair_state_with(u, f)
        }
    }
}

/// `d_∞((t, ω), (t', ω')) = sup_u d_BL(ω(u ∧ t), ω'(u ∧ t')) + |t − t'|`,
/// with the supremum over grid times.
pub fn d_infty<T: Scalar>(a: &StoppedPath<'_, T>, b: &StoppedPath<'_, T>) -> Result<T> {
    if !a.grid().same_as(b.grid()) {
        return Err(Error::GridMismatch("stopped paths live on different grids".into()));
    }
    let last = a.stop_index().max(b.stop_index());
    let mut sup = T::zero();
    for u in 0..=last {
        let d = a.state(u).bl_distance(&b.state(u))?;
        sup = sup.max(d);
    }
    Ok(sup + (a.stop_time() - b.stop_time()).abs())
}
