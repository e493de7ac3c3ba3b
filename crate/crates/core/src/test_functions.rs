//! Smooth rapidly decaying test functions `h` with closed-form `½Δh`, bounded
//! past-measurable weights `Γ`, and the elementary integrands
//! `φ_{Γ,a,h}(ω,t,x) = Γ(ω) h(x) 1_{(a,T]}(t)` built from them.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{Point, ScalarField};
use crate::path::StoppedPath;
use crate::scalar::Scalar;

/// A Schwartz-class function with an analytic half Laplacian.
pub trait TestFunction<T: Scalar>: ScalarField<T> + fmt::Debug {
    fn dim(&self) -> usize;

    /// `½Δh(x)`.
    fn half_laplacian(&self, x: &[T]) -> T;

    /// Declared bound on `|½Δh|`.
    fn half_laplacian_bound(&self) -> T;
}

pub type SchwartzTestFunction<T> = Arc<dyn TestFunction<T>>;

/// `x ↦ ½Δh(x)` as a field.
pub struct HalfLaplacian<'a, T: Scalar>(pub &'a dyn TestFunction<T>);

impl<T: Scalar> ScalarField<T> for HalfLaplacian<'_, T> {
    fn value(&self, x: &[T]) -> T {
        self.0.half_laplacian(x)
    }

    fn sup_bound(&self) -> T {
        self.0.half_laplacian_bound()
    }
}

fn scaled_sq_dist<T: Scalar>(x: &[T], center: &[T], width: T) -> T {
    x.iter().zip(center).map(|(a, c)| ((*a - *c) / width).powi(2)).fold(T::zero(), |s, v| s + v)
}

/// `A exp(−|x−c|²/(2σ²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBump<T> {
    center: Vec<T>,
    width: T,
    amplitude: T,
}

/// Gaussian bump with center `c`, width `σ > 0` and amplitude `A`.
pub fn gaussian_bump<T: Scalar>(center: &Point<T>, width: T, amplitude: T) -> Result<GaussianBump<T>> {
    if !(width > T::zero()) || !width.is_finite() {
        return Err(Error::parameter(format!("gaussian width must be > 0, got {width}")));
    }
    if !amplitude.is_finite() {
        return Err(Error::parameter("gaussian amplitude must be finite"));
    }
    Ok(GaussianBump { center: center.coords().to_vec(), width, amplitude })
}

impl<T: Scalar> GaussianBump<T> {
    pub fn center(&self) -> &[T] {
        &self.center
    }

    pub fn width(&self) -> T {
        self.width
    }

    pub fn amplitude(&self) -> T {
        self.amplitude
    }
}

impl<T: Scalar> ScalarField<T> for GaussianBump<T> {
    fn value(&self, x: &[T]) -> T {
        self.amplitude * (-T::lit(0.5) * scaled_sq_dist(x, &self.center, self.width)).exp()
    }

    fn sup_bound(&self) -> T {
        self.amplitude.abs()
    }
}

impl<T: Scalar> TestFunction<T> for GaussianBump<T> {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn half_laplacian(&self, x: &[T]) -> T {
        let r2 = scaled_sq_dist(x, &self.center, self.width);
        let s2 = self.width * self.width;
        let d = T::count(self.center.len());
        T::lit(0.5) * self.amplitude * (-T::lit(0.5) * r2).exp() * (r2 - d) / s2
    }

    fn half_laplacian_bound(&self) -> T {
        // sup_s e^{-s/2} |s - d| = d for d >= 1
        T::lit(0.5) * self.amplitude.abs() * T::count(self.center.len()) / (self.width * self.width)
    }
}

/// Physicists' Hermite polynomial `H_n(z)`.
fn hermite<T: Scalar>(n: u32, z: T) -> T {
    let two = T::lit(2.0);
    let (mut prev, mut cur) = (T::one(), two * z);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = two * z * cur - two * T::count(k as usize) * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Hermite function `A Π_j H_{n_j}(z_j) e^{−|z|²/2}` with `z = (x − c)/σ`.
///
/// Uses `ψ_n'' = (z² − 2n − 1) ψ_n` for `ψ_n = H_n e^{−z²/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteFunction<T> {
    center: Vec<T>,
    width: T,
    amplitude: T,
    orders: Vec<u32>,
    bound: T,
    hl_bound: T,
}

pub fn hermite_function<T: Scalar>(
    center: &Point<T>,
    width: T,
    amplitude: T,
    orders: &[u32],
) -> Result<HermiteFunction<T>> {
    if !(width > T::zero()) || !width.is_finite() {
        return Err(Error::parameter(format!("hermite width must be > 0, got {width}")));
    }
    if orders.len() != center.dim() {
        return Err(Error::Dimension { expected: center.dim(), got: orders.len() });
    }
    if orders.iter().any(|&n| n > 12) {
        return Err(Error::parameter("hermite order above 12 not supported"));
    }
    // sup of |ψ_n| and |ψ_n''| by a dense scan over the oscillatory region,
    // inflated by 2% to cover the scan spacing.
    let factor_bounds: Vec<(f64, f64)> = orders
        .iter()
        .map(|&n| {
            let reach = (2.0 * n as f64 + 1.0).sqrt() + 8.0;
            let (mut b0, mut b2) = (0.0f64, 0.0f64);
            let steps = 40_000;
            for i in 0..=steps {
                let z = -reach + 2.0 * reach * i as f64 / steps as f64;
                let psi = hermite::<f64>(n, z) * (-0.5 * z * z).exp();
                b0 = b0.max(psi.abs());
                b2 = b2.max((psi * (z * z - 2.0 * n as f64 - 1.0)).abs());
            }
            (b0 * 1.02, b2 * 1.02)
        })
        .collect();
    let prod: f64 = factor_bounds.iter().map(|b| b.0).product();
    let mut hl = 0.0;
    for (j, (b0, b2)) in factor_bounds.iter().enumerate() {
        let _ = b0;
        let others: f64 = factor_bounds.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, b)| b.0).product();
        hl += b2 * others;
    }
    let a = amplitude.abs().to_f64_lossy();
    let s2 = (width * width).to_f64_lossy();
    Ok(HermiteFunction {
        center: center.coords().to_vec(),
        width,
        amplitude,
        orders: orders.to_vec(),
        bound: T::lit(a * prod),
        hl_bound: T::lit(0.5 * a * hl / s2),
    })
}

impl<T: Scalar> HermiteFunction<T> {
    fn factors(&self, x: &[T]) -> (T, T) {
        let mut poly = T::one();
        let mut r2 = T::zero();
        let mut curvature = T::zero();
        for ((xi, ci), &n) in x.iter().zip(&self.center).zip(&self.orders) {
            let z = (*xi - *ci) / self.width;
            poly *= hermite(n, z);
            r2 += z * z;
            curvature += z * z - T::count(2 * n as usize + 1);
        }
        (self.amplitude * poly * (-T::lit(0.5) * r2).exp(), curvature)
    }
}

impl<T: Scalar> ScalarField<T> for HermiteFunction<T> {
    fn value(&self, x: &[T]) -> T {
        self.factors(x).0
    }

    fn sup_bound(&self) -> T {
        self.bound
    }
}

impl<T: Scalar> TestFunction<T> for HermiteFunction<T> {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn half_laplacian(&self, x: &[T]) -> T {
        let (h, curvature) = self.factors(x);
        T::lit(0.5) * h * curvature / (self.width * self.width)
    }

    fn half_laplacian_bound(&self) -> T {
        self.hl_bound
    }
}

/// `max_x |½Δh(x) − ½ Σ_j (h(x+δe_j) − 2h(x) + h(x−δe_j))/δ²|` over the samples.
pub fn validate_half_laplacian<T: Scalar>(h: &dyn TestFunction<T>, samples: &[Point<T>], delta: T) -> T {
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut worst = T::zero();
    for x in samples {
        let center = h.value(x.coords());
        let mut probe = x.coords().to_vec();
        let mut lap = T::zero();
        for j in 0..probe.len() {
            let orig = probe[j];
            probe[j] = orig + delta;
            let up = h.value(&probe);
            probe[j] = orig - delta;
            let down = h.value(&probe);
            probe[j] = orig;
            lap += (up - two * center + down) / (delta * delta);
        }
        worst = worst.max((h.half_laplacian(x.coords()) - half * lap).abs());
    }
    worst
}

/// Bounded scalar maps allowed inside `Γ`. Arbitrary callables are not
/// accepted: the bound must be known at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundedMap {
    Constant { value: f64 },
    Tanh { scale: f64 },
    Sin { scale: f64 },
    Logistic { scale: f64 },
    Clamp { lo: f64, hi: f64 },
}

impl BoundedMap {
    pub fn bound(&self) -> f64 {
        match *self {
            BoundedMap::Constant { value } => value.abs(),
            BoundedMap::Tanh { .. } | BoundedMap::Sin { .. } | BoundedMap::Logistic { .. } => 1.0,
            BoundedMap::Clamp { lo, hi } => lo.abs().max(hi.abs()),
        }
    }

    pub fn apply<T: Scalar>(&self, u: T) -> T {
        match *self {
            BoundedMap::Constant { value } => T::lit(value),
            BoundedMap::Tanh { scale } => (T::lit(scale) * u).tanh(),
            BoundedMap::Sin { scale } => (T::lit(scale) * u).sin(),
            BoundedMap::Logistic { scale } => T::one() / (T::one() + (-T::lit(scale) * u).exp()),
            BoundedMap::Clamp { lo, hi } => u.max(T::lit(lo)).min(T::lit(hi)),
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = match *self {
            BoundedMap::Constant { value } => value.is_finite(),
            BoundedMap::Tanh { scale } | BoundedMap::Sin { scale } | BoundedMap::Logistic { scale } => {
                scale.is_finite()
            }
            BoundedMap::Clamp { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
        };
        if finite {
            Ok(())
        } else {
            Err(Error::parameter(format!("map {self:?} has no finite bound")))
        }
    }
}

/// `Γ(ω) = g(⟨ω(a'), k⟩)`: bounded and measurable with respect to the path up
/// to `a'`.
#[derive(Debug, Clone)]
pub struct GammaFunctional<T: Scalar> {
    time: T,
    inner: Option<SchwartzTestFunction<T>>,
    map: BoundedMap,
}

/// Builds `Γ(ω) = g(⟨ω(a'), k⟩)`; rejects maps without a finite bound.
pub fn make_gamma<T: Scalar>(time: T, k: SchwartzTestFunction<T>, g: BoundedMap) -> Result<GammaFunctional<T>> {
    g.validate()?;
    if !(time >= T::zero()) || !time.is_finite() {
        return Err(Error::parameter(format!("measurement time must be >= 0, got {time}")));
    }
    Ok(GammaFunctional { time, inner: Some(k), map: g })
}

impl<T: Scalar> GammaFunctional<T> {
    /// Deterministic `Γ ≡ c`.
    pub fn constant(value: T) -> Self {
        Self { time: T::zero(), inner: None, map: BoundedMap::Constant { value: value.to_f64_lossy() } }
    }

    pub fn measure_time(&self) -> T {
        self.time
    }

    pub fn map(&self) -> &BoundedMap {
        &self.map
    }

    /// `C_Γ`.
    pub fn bound(&self) -> T {
        T::lit(self.map.bound())
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.map, BoundedMap::Constant { .. }) || self.inner.is_none()
    }

    /// `Γ(ω)`, reading the path only at grid time `a'`.
    pub fn evaluate(&self, path: &StoppedPath<'_, T>) -> Result<T> {
        if let BoundedMap::Constant { value } = self.map {
            return Ok(T::lit(value));
        }
        let Some(k) = &self.inner else {
            return Ok(self.map.apply(T::zero()));
        };
        let idx = path.grid().index_of(self.time)?;
        let u = path.pair_state(idx, k.as_ref())?;
        Ok(self.map.apply(u))
    }
}

/// `φ_{Γ,a,h}(ω,t,x) = Γ(ω) h(x) 1_{(a,T]}(t)`.
#[derive(Debug, Clone)]
pub struct UIntegrand<T: Scalar> {
    gamma: GammaFunctional<T>,
    activation: T,
    h: SchwartzTestFunction<T>,
}

impl<T: Scalar> UIntegrand<T> {
    pub fn new(gamma: GammaFunctional<T>, activation: T, h: SchwartzTestFunction<T>) -> Result<Self> {
        if !(activation >= T::zero()) || !activation.is_finite() {
            return Err(Error::parameter(format!("activation must be >= 0, got {activation}")));
        }
        if gamma.measure_time() > activation {
            return Err(Error::contract(format!(
                "Γ reads the path at {} after the activation time {}",
                gamma.measure_time(),
                activation
            )));
        }
        Ok(Self { gamma, activation, h })
    }

    /// `Γ ≡ 1`.
    pub fn deterministic(activation: T, h: SchwartzTestFunction<T>) -> Result<Self> {
        Self::new(GammaFunctional::constant(T::one()), activation, h)
    }

    pub fn gamma(&self) -> &GammaFunctional<T> {
        &self.gamma
    }

    pub fn activation(&self) -> T {
        self.activation
    }

    pub fn h(&self) -> &SchwartzTestFunction<T> {
        &self.h
    }

    /// Pointwise value with `ω` revealed through `past`.
    pub fn value(&self, past: &StoppedPath<'_, T>, time: T, x: &[T]) -> Result<T> {
        if time <= self.activation {
            return Ok(T::zero());
        }
        Ok(self.gamma.evaluate(past)? * self.h.value(x))
    }

    /// `C_{Γ²} C_{h²} (T − a)`; multiplied by `𝔼[max_t X(t)(ℝ^d)]` it bounds
    /// the squared `𝓛²(M_X)` norm.
    pub fn norm_bound_factor(&self, horizon: T) -> T {
        let cg = self.gamma.bound();
        let ch = self.h.sup_bound();
        cg * cg * ch * ch * (horizon - self.activation).max(T::zero())
    }
}

/// Config description of a test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TestFunctionSpec {
    Gaussian {
        center: Vec<f64>,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Hermite {
        center: Vec<f64>,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
        orders: Vec<u32>,
    },
}

fn one() -> f64 {
    1.0
}

fn point_from<T: Scalar>(coords: &[f64]) -> Result<Point<T>> {
    Point::new(coords.iter().map(|&c| T::lit(c)).collect())
}

impl TestFunctionSpec {
    pub fn dim(&self) -> usize {
        match self {
            TestFunctionSpec::Gaussian { center, .. } | TestFunctionSpec::Hermite { center, .. } => center.len(),
        }
    }

    pub fn build<T: Scalar>(&self) -> Result<SchwartzTestFunction<T>> {
        Ok(match self {
            TestFunctionSpec::Gaussian { center, width, amplitude } => {
                Arc::new(gaussian_bump(&point_from(center)?, T::lit(*width), T::lit(*amplitude))?)
            }
            TestFunctionSpec::Hermite { center, width, amplitude, orders } => {
                Arc::new(hermite_function(&point_from(center)?, T::lit(*width), T::lit(*amplitude), orders)?)
            }
        })
    }
}

/// Config description of `Γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSpec {
    #[serde(default)]
    pub time: f64,
    #[serde(default)]
    pub inner: Option<TestFunctionSpec>,
    pub map: BoundedMap,
}

impl Default for GammaSpec {
    fn default() -> Self {
        Self { time: 0.0, inner: None, map: BoundedMap::Constant { value: 1.0 } }
    }
}

impl GammaSpec {
    pub fn build<T: Scalar>(&self) -> Result<GammaFunctional<T>> {
        match (&self.inner, self.map) {
            (_, BoundedMap::Constant { value }) => Ok(GammaFunctional::constant(T::lit(value))),
            (Some(k), g) => make_gamma(T::lit(self.time), k.build()?, g),
            (None, _) => Err(Error::parameter("non-constant Γ needs an inner test function")),
        }
    }
}

/// Config description of `φ_{Γ,a,h}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UIntegrandSpec {
    #[serde(default)]
    pub gamma: GammaSpec,
    #[serde(default)]
    pub activation: f64,
    pub h: TestFunctionSpec,
}

impl UIntegrandSpec {
    pub fn build<T: Scalar>(&self) -> Result<UIntegrand<T>> {
        UIntegrand::new(self.gamma.build()?, T::lit(self.activation), self.h.build()?)
    }
}
