//! Finite atomic measures on ℝ^d and their pairings with test functions.
//!
//! A measure is stored as a flat coordinate buffer plus masses. Raw particle
//! configurations carry a single uniform mass quantum, so the mass buffer is
//! only materialized once a non-uniform atom is added.

use std::collections::HashMap;

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use crate::error::{Error, Result};
use crate::scalar::{CompensatedSum, Scalar};

/// A point of ℝ^d with finite coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Point<T>(Vec<T>);

impl<T: Scalar> Point<T> {
    pub fn new(coords: Vec<T>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::parameter("points need dimension >= 1"));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::parameter(format!("non-finite coordinate {c}")));
        }
        Ok(Self(coords))
    }

    pub fn origin(dim: usize) -> Self {
        Self(vec![T::zero(); dim.max(1)])
    }

    /// One-dimensional point.
    pub fn scalar(x: T) -> Self {
        Self(vec![x])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[T] {
        &self.0
    }
}

impl<T> AsRef<[T]> for Point<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

/// Euclidean distance between two coordinate slices of equal length.
pub fn euclidean<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).map(|(a, b)| (*a - *b) * (*a - *b)).fold(T::zero(), |acc, v| acc + v).sqrt()
}

/// Real-valued function on ℝ^d with a declared sup-norm bound.
pub trait ScalarField<T>: Send + Sync {
    fn value(&self, x: &[T]) -> T;

    /// Declared bound on `|f|`; `+∞` when unknown.
    fn sup_bound(&self) -> T
    where
        T: Scalar,
    {
        T::infinity()
    }
}

/// Constant field `x ↦ c`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantField<T>(pub T);

impl<T: Scalar> ScalarField<T> for ConstantField<T> {
    fn value(&self, _x: &[T]) -> T {
        self.0
    }

    fn sup_bound(&self) -> T {
        self.0.abs()
    }
}

/// Closure-backed field with an explicit bound.
pub struct FnField<F, T> {
    f: F,
    bound: T,
}

impl<F, T> FnField<F, T>
where
    F: Fn(&[T]) -> T + Send + Sync,
    T: Scalar,
{
    pub fn new(f: F) -> Self {
        Self { f, bound: T::infinity() }
    }

    pub fn bounded(f: F, bound: T) -> Self {
        Self { f, bound }
    }
}

impl<F, T> ScalarField<T> for FnField<F, T>
where
    F: Fn(&[T]) -> T + Send + Sync,
    T: Scalar,
{
    fn value(&self, x: &[T]) -> T {
        (self.f)(x)
    }

    fn sup_bound(&self) -> T {
        self.bound
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Masses<T> {
    Uniform(T),
    Explicit(Vec<T>),
}

/// Finite atomic measure `Σ_i m_i δ_{x_i}`.
///
/// Atoms sharing a position are kept separate; two measures are considered
/// the same when they pair equally against every test function.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure<T> {
    dim: usize,
    positions: Vec<T>,
    masses: Masses<T>,
}

impl<T: Scalar> AtomicMeasure<T> {
    /// The zero measure on ℝ^dim.
    pub fn zero(dim: usize) -> Self {
        Self { dim: dim.max(1), positions: Vec::new(), masses: Masses::Uniform(T::zero()) }
    }

    /// Unit point mass at `x`.
    pub fn dirac(x: &Point<T>) -> Self {
        Self { dim: x.dim(), positions: x.0.clone(), masses: Masses::Uniform(T::one()) }
    }

    pub fn from_atoms<I>(dim: usize, atoms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Point<T>, T)>,
    {
        let mut positions = Vec::new();
        let mut masses = Vec::new();
        for (x, m) in atoms {
            if x.dim() != dim {
                return Err(Error::Dimension { expected: dim, got: x.dim() });
            }
            if !(m >= T::zero()) || !m.is_finite() {
                return Err(Error::contract(format!("atom mass must be finite and >= 0, got {m}")));
            }
            positions.extend_from_slice(&x.0);
            masses.push(m);
        }
        Ok(Self { dim, positions, masses: Masses::Explicit(masses) })
    }

    /// Atoms at the given flat coordinates, each carrying `mass`.
    pub fn uniform(dim: usize, positions: Vec<T>, mass: T) -> Result<Self> {
        if dim == 0 || !positions.len().is_multiple_of(dim) {
            return Err(Error::parameter("flat coordinate buffer does not match dimension"));
        }
        if !(mass >= T::zero()) || !mass.is_finite() {
            return Err(Error::contract(format!("atom mass must be finite and >= 0, got {mass}")));
        }
        Ok(Self { dim, positions, masses: Masses::Uniform(mass) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored atoms.
    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, i: usize) -> &[T] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mass(&self, i: usize) -> T {
        match &self.masses {
            Masses::Uniform(m) => *m,
            Masses::Explicit(v) => v[i],
        }
    }

    /// The common atom mass when every atom carries the same quantum.
    pub fn uniform_mass(&self) -> Option<T> {
        match &self.masses {
            Masses::Uniform(m) => Some(*m),
            Masses::Explicit(_) => None,
        }
    }

    /// Flat coordinate buffer, `len() * dim()` entries.
    pub fn flat_positions(&self) -> &[T] {
        &self.positions
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[T], T)> + '_ {
        self.positions.chunks_exact(self.dim).enumerate().map(move |(i, x)| (x, self.mass(i)))
    }

    /// `⟨μ, f⟩ = Σ_i m_i f(x_i)`, compensated.
    pub fn pair<F: ScalarField<T> + ?Sized>(&self, f: &F) -> Result<T> {
        self.pair_with(|x| f.value(x))
    }

    /// Pairing against a closure.
    pub fn pair_with(&self, f: impl Fn(&[T]) -> T) -> Result<T> {
        let mut acc = CompensatedSum::new();
        match &self.masses {
            Masses::Uniform(m) => {
                for (i, x) in self.positions.chunks_exact(self.dim).enumerate() {
                    let v = f(x);
                    if !v.is_finite() {
                        return Err(Error::NonFiniteAtom { index: i, value: v.to_f64_lossy() });
                    }
                    acc.add(v);
                }
                Ok(acc.value() * *m)
            }
            Masses::Explicit(ms) => {
                for (i, (x, m)) in self.positions.chunks_exact(self.dim).zip(ms).enumerate() {
                    let v = f(x);
                    if !v.is_finite() {
                        return Err(Error::NonFiniteAtom { index: i, value: v.to_f64_lossy() });
                    }
                    acc.add(*m * v);
                }
                Ok(acc.value())
            }
        }
    }

    /// `μ(ℝ^d)`.
    pub fn total_mass(&self) -> T {
        match &self.masses {
            Masses::Uniform(m) => T::count(self.len()) * *m,
            Masses::Explicit(ms) => crate::scalar::compensated_sum(ms.iter().copied()),
        }
    }

    /// `μ + ε δ_x` as a new measure; `ε` must be nonnegative.
    pub fn add_atom(&self, x: &[T], eps: T) -> Result<Self> {
        if !(eps >= T::zero()) || !eps.is_finite() {
            return Err(Error::contract(format!("bump size must be finite and >= 0, got {eps}")));
        }
        if x.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::parameter("non-finite bump location"));
        }
        let mut out = self.clone();
        if eps == T::zero() {
            return Ok(out);
        }
        out.positions.extend_from_slice(x);
        match &mut out.masses {
            Masses::Uniform(m) if *m == eps || self.is_empty() => {
                out.masses = Masses::Uniform(eps);
            }
            Masses::Uniform(m) => {
                let mut ms = vec![*m; self.len()];
                ms.push(eps);
                out.masses = Masses::Explicit(ms);
            }
            Masses::Explicit(ms) => ms.push(eps),
        }
        Ok(out)
    }

    /// Bounded-Lipschitz distance
    /// `sup { ⟨μ − ν, f⟩ : ‖f‖_∞ ≤ 1, |f(x) − f(y)| ≤ |x − y| ∧ 1 }`,
    /// i.e. with Lipschitz constants taken for the truncated metric
    /// `|x − y| ∧ 1`, so that unit atoms at distance `r` are `r ∧ 1` apart.
    ///
    /// Solved as a linear program over the values of `f` at the union of the
    /// two supports; any feasible assignment extends to ℝ^d with the same
    /// bounds, so the program is exact. Cost is quadratic in the number of
    /// distinct support points.
    pub fn bl_distance(&self, other: &Self) -> Result<T> {
        if self.dim != other.dim {
            return Err(Error::Dimension { expected: self.dim, got: other.dim });
        }
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let mut push = |x: &[T], w: f64| {
            let coords: Vec<f64> = x.iter().map(|c| c.to_f64_lossy() + 0.0).collect();
            let key: Vec<u64> = coords.iter().map(|c| c.to_bits()).collect();
            let slot = *index.entry(key).or_insert_with(|| {
                points.push(coords);
                weights.push(0.0);
                points.len() - 1
            });
            weights[slot] += w;
        };
        for (x, m) in self.atoms() {
            push(x, m.to_f64_lossy());
        }
        for (x, m) in other.atoms() {
            push(x, -m.to_f64_lossy());
        }

        let support: Vec<usize> = (0..points.len()).filter(|&i| weights[i] != 0.0).collect();
        if support.is_empty() {
            return Ok(T::zero());
        }
        if support.len() == 1 {
            return Ok(T::lit(weights[support[0]].abs()));
        }

        let mut lp = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = support.iter().map(|&i| lp.add_var(weights[i], (-1.0, 1.0))).collect();
        for a in 0..support.len() {
            for b in (a + 1)..support.len() {
                let d = euclidean(&points[support[a]], &points[support[b]]).min(1.0);
                lp.add_constraint([(vars[a], 1.0), (vars[b], -1.0)], ComparisonOp::Le, d);
                lp.add_constraint([(vars[b], 1.0), (vars[a], -1.0)], ComparisonOp::Le, d);
            }
        }
        let solution = lp.solve().map_err(|e| Error::LinearProgram(e.to_string()))?;
        Ok(T::lit(solution.objective().max(0.0)))
    }
}
