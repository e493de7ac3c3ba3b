//! The empirical martingale measure `M_X` of a particle path: its branching
//! event log, stochastic integrals against it, and the covariation
//! `ν(ds, dx) = X(s)(dx) ds` estimated by time-space quadrature.
//!
//! Integrands are predictable step processes: on each grid segment
//! `(t_k, t_{k+1}]` their `ω`-dependence is fixed by the path up to `t_k`.

use std::fmt;
use std::sync::Arc;

use crate::ensemble::{nonempty, Ensemble};
use crate::error::{Error, Result};
use crate::harness::stats::{Estimate, MomentAccumulator};
use crate::measure::ScalarField;
use crate::path::{MeasurePath, StoppedPath};
use crate::scalar::{CompensatedSum, Scalar};
use crate::test_functions::{GammaFunctional, HalfLaplacian, SchwartzTestFunction, UIntegrand};

/// One branching event: a death (`sign = −1`) or a binary split (`+1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchEvent<'a, T> {
    pub time: T,
    pub position: &'a [T],
    pub sign: i8,
}

/// Time-ordered branching events of one path; each carries mass `1/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchEventLog<T> {
    dim: usize,
    mass_quantum: T,
    horizon: T,
    times: Vec<T>,
    positions: Vec<T>,
    signs: Vec<i8>,
}

impl<T: Scalar> BranchEventLog<T> {
    pub fn new(dim: usize, mass_quantum: T, horizon: T) -> Self {
        Self { dim, mass_quantum, horizon, times: Vec::new(), positions: Vec::new(), signs: Vec::new() }
    }

    pub fn with_capacity(dim: usize, mass_quantum: T, horizon: T, events: usize) -> Self {
        Self {
            dim,
            mass_quantum,
            horizon,
            times: Vec::with_capacity(events),
            positions: Vec::with_capacity(events * dim),
            signs: Vec::with_capacity(events),
        }
    }

    pub fn push(&mut self, time: T, position: &[T], sign: i8) -> Result<()> {
        if sign != 1 && sign != -1 {
            return Err(Error::contract(format!("event sign must be ±1, got {sign}")));
        }
        if position.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: position.len() });
        }
        if let Some(&last) = self.times.last() {
            if time < last {
                return Err(Error::contract("event times must be nondecreasing"));
            }
        }
        if !(time > T::zero()) || time > self.horizon {
            return Err(Error::contract(format!("event time {time} outside (0, {}]", self.horizon)));
        }
        self.push_unchecked(time, position, sign);
        Ok(())
    }

    pub(crate) fn push_unchecked(&mut self, time: T, position: &[T], sign: i8) {
        self.times.push(time);
        self.positions.extend_from_slice(position);
        self.signs.push(sign);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mass_quantum(&self) -> T {
        self.mass_quantum
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn flat_positions(&self) -> &[T] {
        &self.positions
    }

    pub fn get(&self, i: usize) -> BranchEvent<'_, T> {
        BranchEvent {
            time: self.times[i],
            position: &self.positions[i * self.dim..(i + 1) * self.dim],
            sign: self.signs[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = BranchEvent<'_, T>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// Events with `time ≤ t`, on horizon `t`.
    pub fn truncated(&self, t: T) -> Self {
        let n = self.times.partition_point(|&s| s <= t);
        Self {
            dim: self.dim,
            mass_quantum: self.mass_quantum,
            horizon: t,
            times: self.times[..n].to_vec(),
            positions: self.positions[..n * self.dim].to_vec(),
            signs: self.signs[..n].to_vec(),
        }
    }

    /// Checks that the running particle count stays nonnegative starting
    /// from `initial_count`.
    pub fn check_nonnegative(&self, initial_count: u64) -> Result<()> {
        let mut count = initial_count as i64;
        for (i, &s) in self.signs.iter().enumerate() {
            count += s as i64;
            if count < 0 {
                return Err(Error::contract(format!("event {i} drives the particle count negative")));
            }
        }
        Ok(())
    }
}

/// The `(ω, s)`-dependent factor of an integrand term.
pub trait PredictableWeight<T: Scalar>: Send + Sync + fmt::Debug {
    /// Value on the segment `(t_k, t_{k+1}]`; `past` is the path stopped at `t_k`.
    fn value(&self, past: &StoppedPath<'_, T>, segment: usize) -> Result<T>;

    /// Values on all segments. Entry `k` may only depend on states `0..=k`.
    fn schedule(&self, path: &MeasurePath<T>) -> Result<Vec<T>> {
        (0..path.grid().steps()).map(|k| self.value(&path.stop_index(k), k)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantWeight<T>(pub T);

impl<T: Scalar> PredictableWeight<T> for ConstantWeight<T> {
    fn value(&self, _past: &StoppedPath<'_, T>, _segment: usize) -> Result<T> {
        Ok(self.0)
    }

    fn schedule(&self, path: &MeasurePath<T>) -> Result<Vec<T>> {
        Ok(vec![self.0; path.grid().steps()])
    }
}

/// `Γ(ω) 1_{(a,T]}(s)`.
#[derive(Debug, Clone)]
pub struct ActivationWindow<T: Scalar> {
    pub gamma: GammaFunctional<T>,
    pub activation: T,
}

impl<T: Scalar> PredictableWeight<T> for ActivationWindow<T> {
    fn value(&self, past: &StoppedPath<'_, T>, segment: usize) -> Result<T> {
        let a = past.grid().index_of(self.activation)?;
        if segment < a {
            Ok(T::zero())
        } else {
            self.gamma.evaluate(past)
        }
    }

    fn schedule(&self, path: &MeasurePath<T>) -> Result<Vec<T>> {
        let grid = path.grid();
        let a = grid.index_of(self.activation)?;
        if a >= grid.steps() {
            return Err(Error::parameter("activation time must lie before the horizon"));
        }
        // Γ reads the path at a' ≤ a, so its value is fixed from segment a on.
        let gamma = self.gamma.evaluate(&path.stop_index(a))?;
        Ok((0..grid.steps()).map(|k| if k < a { T::zero() } else { gamma }).collect())
    }
}

/// Spatial factor `h(x)` of an integrand term.
#[derive(Clone)]
pub enum SpaceFactor<T: Scalar> {
    Constant(T),
    Test(SchwartzTestFunction<T>),
    Field(Arc<dyn ScalarField<T>>),
}

impl<T: Scalar> SpaceFactor<T> {
    pub fn value(&self, x: &[T]) -> T {
        match self {
            SpaceFactor::Constant(c) => *c,
            SpaceFactor::Test(h) => h.value(x),
            SpaceFactor::Field(f) => f.value(x),
        }
    }

    fn same(&self, other: &Self) -> bool {
        match (self, other) {
            (SpaceFactor::Constant(a), SpaceFactor::Constant(b)) => a == b,
            (SpaceFactor::Test(a), SpaceFactor::Test(b)) => Arc::ptr_eq(a, b),
            (SpaceFactor::Field(a), SpaceFactor::Field(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl<T: Scalar> fmt::Debug for SpaceFactor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceFactor::Constant(c) => write!(f, "Constant({c})"),
            SpaceFactor::Test(h) => write!(f, "Test({h:?})"),
            SpaceFactor::Field(_) => write!(f, "Field(..)"),
        }
    }
}

/// One term `c · w(ω, s) · h(x)`.
#[derive(Debug, Clone)]
pub struct IntegrandTerm<T: Scalar> {
    pub coefficient: T,
    pub weight: Arc<dyn PredictableWeight<T>>,
    pub space: SpaceFactor<T>,
}

/// Predictable integrand `φ(ω, s, x) = Σ_j c_j w_j(ω, s) h_j(x)`.
#[derive(Debug, Clone, Default)]
pub struct PredictableIntegrand<T: Scalar> {
    terms: Vec<IntegrandTerm<T>>,
}

impl<T: Scalar> PredictableIntegrand<T> {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    /// `φ ≡ c`.
    pub fn constant(c: T) -> Self {
        Self::from_terms(vec![IntegrandTerm {
            coefficient: T::one(),
            weight: Arc::new(ConstantWeight(c)),
            space: SpaceFactor::Constant(T::one()),
        }])
    }

    pub fn from_terms(terms: Vec<IntegrandTerm<T>>) -> Self {
        Self { terms }
    }

    /// `Σ_i c_i φ_i` over U-integrands.
    pub fn linear_combination(coefficients: &[T], basis: &[UIntegrand<T>]) -> Self {
        let mut out = Self::zero();
        for (c, u) in coefficients.iter().zip(basis) {
            out = out.plus(&Self::from(u).scaled(*c));
        }
        out
    }

    pub fn terms(&self) -> &[IntegrandTerm<T>] {
        &self.terms
    }

    pub fn scaled(&self, c: T) -> Self {
        let terms = self.terms.iter().map(|t| IntegrandTerm { coefficient: t.coefficient * c, ..t.clone() }).collect();
        Self { terms }
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self { terms }
    }

    /// `φ(ω, s, x)` for `s ∈ (0, T]`.
    pub fn value(&self, path: &MeasurePath<T>, s: T, x: &[T]) -> Result<T> {
        let k = path.grid().segment_of(s);
        let past = path.stop_index(k);
        let mut acc = T::zero();
        for t in &self.terms {
            acc += t.coefficient * t.weight.value(&past, k)? * t.space.value(x);
        }
        Ok(acc)
    }

    fn schedules(&self, path: &MeasurePath<T>) -> Result<Vec<Vec<T>>> {
        self.terms
            .iter()
            .map(|t| Ok(t.weight.schedule(path)?.into_iter().map(|w| w * t.coefficient).collect()))
            .collect()
    }
}

impl<T: Scalar> From<&UIntegrand<T>> for PredictableIntegrand<T> {
    fn from(u: &UIntegrand<T>) -> Self {
        Self::from_terms(vec![IntegrandTerm {
            coefficient: T::one(),
            weight: Arc::new(ActivationWindow { gamma: u.gamma().clone(), activation: u.activation() }),
            space: SpaceFactor::Test(u.h().clone()),
        }])
    }
}

/// `∫_0^{t_k} ∫ φ dM_X` for every grid index `k`:
/// `(1/N) Σ_{events e, e.time ≤ t_k} sign(e) φ(ω, e.time, e.position)`.
///
/// Only the branching noise enters; the O(1/N) motion martingale of the
/// particles is not part of `M_X`'s discrete analogue.
pub fn integrate_path<T: Scalar>(phi: &PredictableIntegrand<T>, path: &MeasurePath<T>) -> Result<Vec<T>> {
    Ok(integrate_paths(&[phi], path)?.pop().expect("one integrand"))
}

/// [`integrate_path`] for several integrands in one pass over the events;
/// a space factor shared between terms is evaluated once per event. Each
/// result is bit-identical to integrating that integrand alone.
pub fn integrate_paths<T: Scalar>(phis: &[&PredictableIntegrand<T>], path: &MeasurePath<T>) -> Result<Vec<Vec<T>>> {
    let grid = path.grid();
    let log = path.events();
    let steps = grid.steps();
    let m = phis.len();
    let mut out = vec![vec![T::zero(); steps + 1]; m];
    if log.is_empty() || phis.iter().all(|p| p.terms.is_empty()) {
        return Ok(out);
    }
    let mut fields: Vec<SpaceFactor<T>> = Vec::new();
    let mut term_field: Vec<Vec<usize>> = Vec::with_capacity(m);
    for phi in phis {
        let ids = phi
            .terms
            .iter()
            .map(|t| {
                fields.iter().position(|f| f.same(&t.space)).unwrap_or_else(|| {
                    fields.push(t.space.clone());
                    fields.len() - 1
                })
            })
            .collect();
        term_field.push(ids);
    }
    let schedules: Vec<Vec<Vec<T>>> = phis.iter().map(|p| p.schedules(path)).collect::<Result<_>>()?;
    let mut values: Vec<Option<T>> = vec![None; fields.len()];
    let mut acc = vec![CompensatedSum::new(); m];
    let mut k = 0usize;
    for (i, e) in log.iter().enumerate() {
        let seg = grid.segment_of(e.time);
        while k < seg {
            for (o, a) in out.iter_mut().zip(&acc) {
                o[k + 1] = a.value();
            }
            k += 1;
        }
        values.iter_mut().for_each(|v| *v = None);
        for j in 0..m {
            let mut v = T::zero();
            for (sched, &f) in schedules[j].iter().zip(&term_field[j]) {
                let w = sched[seg];
                if w != T::zero() {
                    v += w * *values[f].get_or_insert_with(|| fields[f].value(e.position));
                }
            }
            if !v.is_finite() {
                return Err(Error::NonFiniteEvent { index: i, time: e.time.to_f64_lossy(), value: v.to_f64_lossy() });
            }
            if e.sign > 0 {
                acc[j].add(v);
            } else {
                acc[j].add(-v);
            }
        }
    }
    while k < steps {
        for (o, a) in out.iter_mut().zip(&acc) {
            o[k + 1] = a.value();
        }
        k += 1;
    }
    let q = log.mass_quantum();
    for o in &mut out {
        o.iter_mut().for_each(|v| *v = *v * q);
    }
    Ok(out)
}

/// `∫_0^t ∫ φ(s, x) M_X(ds, dx)` at grid time `t`.
pub fn integrate<T: Scalar>(phi: &PredictableIntegrand<T>, path: &MeasurePath<T>, t: T) -> Result<T> {
    let k = path.grid().index_of(t)?;
    Ok(integrate_path(phi, path)?[k])
}

/// Closed form of `I_{M_X}(φ_{Γ,a,h})(t)` through the martingale problem:
/// `Γ (⟨X_t,h⟩ − ⟨X_a,h⟩ − ∫_a^t ⟨X_s, ½Δh⟩ ds) 1_{t>a}`, trapezoidal in time.
pub fn integrate_u_closed_form<T: Scalar>(phi: &UIntegrand<T>, path: &MeasurePath<T>, t: T) -> Result<T> {
    let k = path.grid().index_of(t)?;
    u_closed_form(phi, &path.stop_index(k), k)
}

/// Shared by the closed form above and the U-class functional. Reads
/// `path` at grid indices `≤ k`; the drift integral uses left limits so a
/// vertical bump at the stop time carries no time weight.
pub(crate) fn u_closed_form<T: Scalar>(phi: &UIntegrand<T>, path: &StoppedPath<'_, T>, k: usize) -> Result<T> {
    let grid = path.grid();
    let a = grid.index_of(phi.activation())?;
    if k <= a {
        return Ok(T::zero());
    }
    let gamma = phi.gamma().evaluate(path)?;
    let h = phi.h().as_ref();
    let hl = HalfLaplacian(h);
    let at = path.pair_state_with(k, |x| h.value(x))?;
    let aa = path.pair_state_with(a, |x| h.value(x))?;
    let drift: Vec<T> = (a..=k).map(|j| path.pair_state_left_with(j, |x| hl.value(x))).collect::<Result<_>>()?;
    let running = running_trapezoid(&drift, grid.dt());
    Ok(gamma * (at - aa - running[running.len() - 1]))
}

/// Closed form at every grid index in one sweep; bit-identical to
/// [`integrate_u_closed_form`] at each index.
pub fn u_closed_form_path<T: Scalar>(phi: &UIntegrand<T>, path: &MeasurePath<T>) -> Result<Vec<T>> {
    let grid = path.grid();
    let steps = grid.steps();
    let a = grid.index_of(phi.activation())?;
    let mut out = vec![T::zero(); steps + 1];
    if a >= steps {
        return Ok(out);
    }
    let h = phi.h().as_ref();
    let hl = HalfLaplacian(h);
    let full = path.full();
    let gamma = phi.gamma().evaluate(&full)?;
    let pair_h: Vec<T> = (a..=steps).map(|j| full.pair_state_with(j, |x| h.value(x))).collect::<Result<_>>()?;
    let drift: Vec<T> = (a..=steps).map(|j| full.pair_state_left_with(j, |x| hl.value(x))).collect::<Result<_>>()?;
    let running = running_trapezoid(&drift, grid.dt());
    for k in (a + 1)..=steps {
        out[k] = gamma * (pair_h[k - a] - pair_h[0] - running[k - a]);
    }
    Ok(out)
}

/// Running trapezoid `R_j = Σ_{i<j} dt/2 (v_i + v_{i+1})`, `R_0 = 0`.
pub(crate) fn running_trapezoid<T: Scalar>(values: &[T], dt: T) -> Vec<T> {
    let half = T::lit(0.5) * dt;
    let mut acc = CompensatedSum::new();
    let mut out = Vec::with_capacity(values.len());
    out.push(T::zero());
    for w in values.windows(2) {
        acc.add(half * (w[0] + w[1]));
        out.push(acc.value());
    }
    out
}

/// `Q_ij = ∫_0^{t_end} ⟨X_s, φ_i(s) φ_j(s)⟩ ds` for all pairs, by the
/// trapezoid rule on each grid segment with the integrands' segment values.
///
/// Every distinct spatial factor is evaluated once per atom per state.
pub fn quadrature_matrix<T: Scalar>(
    integrands: &[&PredictableIntegrand<T>],
    path: &MeasurePath<T>,
    end: usize,
) -> Result<Vec<Vec<T>>> {
    let m = integrands.len();
    let grid = path.grid();
    let end = end.min(grid.steps());

    // distinct spatial factors, keyed by allocation
    let mut fields: Vec<SpaceFactor<T>> = Vec::new();
    let mut term_field: Vec<Vec<usize>> = Vec::with_capacity(m);
    for phi in integrands {
        let mut ids = Vec::new();
        for t in &phi.terms {
            let pos = fields.iter().position(|f| f.same(&t.space)).unwrap_or_else(|| {
                fields.push(t.space.clone());
                fields.len() - 1
            });
            ids.push(pos);
        }
        term_field.push(ids);
    }
    let schedules: Vec<Vec<Vec<T>>> = integrands.iter().map(|p| p.schedules(path)).collect::<Result<_>>()?;

    // per segment, the weight of each (field) for each integrand
    let nf = fields.len();
    let seg_weight = |i: usize, k: usize, out: &mut [T]| {
        out.iter_mut().for_each(|w| *w = T::zero());
        for (term_idx, &f) in term_field[i].iter().enumerate() {
            out[f] += schedules[i][term_idx][k];
        }
    };
    let active: Vec<bool> = (0..end).map(|k| (0..m).any(|i| schedules[i].iter().any(|s| s[k] != T::zero()))).collect();

    let mut pairings: Vec<Option<Vec<T>>> = vec![None; end + 1];
    let mut values = vec![T::zero(); nf];
    let mut pair_state = |j: usize| -> Result<Vec<T>> {
        let state = path.state(j);
        let mut sums: Vec<CompensatedSum<T>> = vec![CompensatedSum::new(); nf * nf];
        for (i, (x, mass)) in state.atoms().enumerate() {
            for (v, f) in values.iter_mut().zip(&fields) {
                *v = f.value(x);
                if !v.is_finite() {
                    return Err(Error::NonFiniteAtom { index: i, value: v.to_f64_lossy() });
                }
            }
            for a in 0..nf {
                let va = values[a] * mass;
                for b in a..nf {
                    sums[a * nf + b].add(va * values[b]);
                }
            }
        }
        let mut p = vec![T::zero(); nf * nf];
        for a in 0..nf {
            for b in a..nf {
                p[a * nf + b] = sums[a * nf + b].value();
                p[b * nf + a] = p[a * nf + b];
            }
        }
        Ok(p)
    };

    let half = T::lit(0.5) * grid.dt();
    let mut acc: Vec<CompensatedSum<T>> = vec![CompensatedSum::new(); m * m];
    let mut wi = vec![T::zero(); nf];
    let mut wj = vec![T::zero(); nf];
    for k in 0..end {
        if !active[k] {
            continue;
        }
        for j in [k, k + 1] {
            if pairings[j].is_none() {
                pairings[j] = Some(pair_state(j)?);
            }
        }
        let (p0, p1) = (pairings[k].as_ref().unwrap(), pairings[k + 1].as_ref().unwrap());
        for i in 0..m {
            seg_weight(i, k, &mut wi);
            for j in i..m {
                seg_weight(j, k, &mut wj);
                let mut s = T::zero();
                for a in 0..nf {
                    if wi[a] == T::zero() {
                        continue;
                    }
                    for b in 0..nf {
                        if wj[b] != T::zero() {
                            s += wi[a] * wj[b] * (p0[a * nf + b] + p1[a * nf + b]);
                        }
                    }
                }
                acc[i * m + j].add(half * s);
            }
        }
        // states k is no longer needed
        pairings[k] = None;
    }
    let mut q = vec![vec![T::zero(); m]; m];
    for i in 0..m {
        for j in i..m {
            q[i][j] = acc[i * m + j].value();
            q[j][i] = q[i][j];
        }
    }
    Ok(q)
}

/// `∫_0^T ⟨X_s, φ(s) ψ(s)⟩ ds` on one path.
pub fn quadrature<T: Scalar>(
    phi: &PredictableIntegrand<T>,
    psi: &PredictableIntegrand<T>,
    path: &MeasurePath<T>,
) -> Result<T> {
    let q = quadrature_matrix(&[phi, psi], path, path.grid().steps())?;
    Ok(q[0][1])
}

/// `‖φ‖²_{𝓛²(M_X)}` estimate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct L2Norm<T> {
    pub estimate: T,
    pub std_error: T,
}

pub fn l2_norm<T: Scalar, E: Ensemble<T> + ?Sized>(phi: &PredictableIntegrand<T>, ensemble: &E) -> Result<L2Norm<T>> {
    let out = nonempty(ensemble.map_paths(|p| quadrature_matrix(&[phi], p, p.grid().steps()).map(|q| q[0][0]))?)?;
    let est = Estimate::of(out.values);
    Ok(L2Norm { estimate: est.mean.max(T::zero()), std_error: est.se })
}

/// Both sides of `𝔼[I(φ)_T I(ψ)_T] = 𝔼[∫∫ φψ X(s)(dx) ds]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Covariation<T> {
    pub lhs: Estimate<T>,
    pub rhs: Estimate<T>,
    /// Per-path difference `I(φ)I(ψ) − Q(φψ)`.
    pub gap: Estimate<T>,
}

impl<T: Scalar> Covariation<T> {
    /// `|lhs − rhs| ≤ k (se_lhs + se_rhs)`.
    pub fn consistent(&self, k: T) -> bool {
        (self.lhs.mean - self.rhs.mean).abs() <= k * (self.lhs.se + self.rhs.se)
    }
}

/// Per-path samples `(I(φ)_T I(ψ)_T, Q(φψ))`.
pub fn covariation_sample<T: Scalar>(
    phi: &PredictableIntegrand<T>,
    psi: &PredictableIntegrand<T>,
    path: &MeasurePath<T>,
) -> Result<(T, T)> {
    let steps = path.grid().steps();
    let i_phi = integrate_path(phi, path)?[steps];
    let i_psi = integrate_path(psi, path)?[steps];
    Ok((i_phi * i_psi, quadrature(phi, psi, path)?))
}

/// Reduces per-path `(lhs, rhs)` samples in replicate order.
pub fn covariation_from_samples<T: Scalar>(samples: &[(T, T)]) -> Covariation<T> {
    let mut lhs = MomentAccumulator::new();
    let mut rhs = MomentAccumulator::new();
    let mut gap = MomentAccumulator::new();
    for &(l, r) in samples {
        lhs.push(l);
        rhs.push(r);
        gap.push(l - r);
    }
    Covariation { lhs: lhs.estimate(), rhs: rhs.estimate(), gap: gap.estimate() }
}

pub fn covariation<T: Scalar, E: Ensemble<T> + ?Sized>(
    phi: &PredictableIntegrand<T>,
    psi: &PredictableIntegrand<T>,
    ensemble: &E,
) -> Result<Covariation<T>> {
    let out = nonempty(ensemble.map_paths(|p| covariation_sample(phi, psi, p))?)?;
    Ok(covariation_from_samples(&out.values))
}
