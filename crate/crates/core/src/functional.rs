//! Non-anticipative path functionals and their vertical (Dupire) derivatives.
//!
//! A functional is evaluated at a grid index `t` on a stopped path; every
//! built-in first stops its argument at `t`, so `F(t, ω) = F(t, ω_t)` holds
//! by construction.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::martingale_measure::{integrate_path, u_closed_form, u_closed_form_path, PredictableIntegrand};
use crate::measure::Point;
use crate::path::{MeasurePath, StoppedPath};
use crate::scalar::Scalar;
use crate::test_functions::{
    GammaFunctional, GammaSpec, SchwartzTestFunction, TestFunctionSpec, UIntegrand, UIntegrandSpec,
};

/// Relative bump sizes used by [`vderiv`], as fractions of the current total mass.
pub const DEFAULT_BUMP: f64 = 1e-3;

pub trait NonAnticipativeFunctional<T: Scalar>: Send + Sync + fmt::Debug {
    /// `F(t, ω)` at grid index `t`.
    fn evaluate(&self, t: usize, omega: &StoppedPath<'_, T>) -> Result<T>;

    /// Closed-form `𝒟_x F(t, ω)`, when known.
    fn analytic_vderiv(&self, _t: usize, _omega: &StoppedPath<'_, T>, _x: &Point<T>) -> Option<Result<T>> {
        None
    }
}

/// `ω` frozen at `t`; `t` may not lie beyond the existing stop.
fn stopped_at<'a, T: Scalar>(omega: &StoppedPath<'a, T>, t: usize) -> Result<StoppedPath<'a, T>> {
    if t > omega.stop_index() {
        return Err(Error::contract(format!(
            "functional evaluated at index {t} beyond the stop index {}",
            omega.stop_index()
        )));
    }
    Ok(omega.stop_at(t))
}

/// The U-class functional
/// `Γ(ω)(⟨ω(t),h⟩ − ⟨ω(a),h⟩ − ∫_a^t ⟨ω(s),½Δh⟩ ds) 1_{t>a}`.
#[derive(Debug, Clone)]
pub struct UFunctional<T: Scalar> {
    pub integrand: UIntegrand<T>,
}

impl<T: Scalar> UFunctional<T> {
    pub fn new(integrand: UIntegrand<T>) -> Self {
        Self { integrand }
    }

    /// `F(t_k, X)` at every grid index of `path`.
    pub fn trajectory(&self, path: &MeasurePath<T>) -> Result<Vec<T>> {
        u_closed_form_path(&self.integrand, path)
    }
}

impl<T: Scalar> NonAnticipativeFunctional<T> for UFunctional<T> {
    fn evaluate(&self, t: usize, omega: &StoppedPath<'_, T>) -> Result<T> {
        u_closed_form(&self.integrand, &stopped_at(omega, t)?, t)
    }

    fn analytic_vderiv(&self, t: usize, omega: &StoppedPath<'_, T>, x: &Point<T>) -> Option<Result<T>> {
        let run = || {
            let w = stopped_at(omega, t)?;
            let a = w.grid().index_of(self.integrand.activation())?;
            if t <= a {
                return Ok(T::zero());
            }
            Ok(self.integrand.gamma().evaluate(&w)? * self.integrand.h().value(x.coords()))
        };
        Some(run())
    }
}

/// `F(t, ω) = Γ(ω_t)`.
#[derive(Debug, Clone)]
pub struct GammaOnly<T: Scalar> {
    pub gamma: GammaFunctional<T>,
}

impl<T: Scalar> NonAnticipativeFunctional<T> for GammaOnly<T> {
    fn evaluate(&self, t: usize, omega: &StoppedPath<'_, T>) -> Result<T> {
        self.gamma.evaluate(&stopped_at(omega, t)?)
    }
}

/// `F(t, ω) = ⟨ω(t), h⟩`.
#[derive(Debug, Clone)]
pub struct LinearPairing<T: Scalar> {
    pub h: SchwartzTestFunction<T>,
}

impl<T: Scalar> NonAnticipativeFunctional<T> for LinearPairing<T> {
    fn evaluate(&self, t: usize, omega: &StoppedPath<'_, T>) -> Result<T> {
        stopped_at(omega, t)?.pair_state(t, self.h.as_ref())
    }

    fn analytic_vderiv(&self, _t: usize, _omega: &StoppedPath<'_, T>, x: &Point<T>) -> Option<Result<T>> {
        Some(Ok(self.h.value(x.coords())))
    }
}

/// `F(t, ω) = ⟨ω(t), h⟩²`.
#[derive(Debug, Clone)]
pub struct SquaredPairing<T: Scalar> {
    pub h: SchwartzTestFunction<T>,
}

impl<T: Scalar> NonAnticipativeFunctional<T> for SquaredPairing<T> {
    fn evaluate(&self, t: usize, omega: &StoppedPath<'_, T>) -> Result<T> {
        let u = stopped_at(omega, t)?.pair_state(t, self.h.as_ref())?;
        Ok(u * u)
    }

    fn analytic_vderiv(&self, t: usize, omega: &StoppedPath<'_, T>, x: &Point<T>) -> Option<Result<T>> {
        let run = || {
            let u = stopped_at(omega, t)?.pair_state(t, self.h.as_ref())?;
            Ok(T::lit(2.0) * u * self.h.value(x.coords()))
        };
        Some(run())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantFunctional<T>(pub T);

impl<T: Scalar> NonAnticipativeFunctional<T> for ConstantFunctional<T> {
    fn evaluate(&self, _t: usize, _omega: &StoppedPath<'_, T>) -> Result<T> {
        Ok(self.0)
    }

    fn analytic_vderiv(&self, _t: usize, _omega: &StoppedPath<'_, T>, _x: &Point<T>) -> Option<Result<T>> {
        Some(Ok(T::zero()))
    }
}

/// `(F(t, ω_t + ε δ_x 1_{[t,T]}) − F(t, ω_t)) / ε`.
pub fn vderiv_fd<T: Scalar, F: NonAnticipativeFunctional<T> + ?Sized>(
    f: &F,
    t: usize,
    omega: &StoppedPath<'_, T>,
    x: &Point<T>,
    eps: T,
) -> Result<T> {
    if !(eps > T::zero()) {
        return Err(Error::contract(format!("difference step must be positive, got {eps}")));
    }
    let base = stopped_at(omega, t)?;
    let bumped = base.bump(x, eps)?;
    let hi = f.evaluate(t, &bumped)?;
    let lo = f.evaluate(t, &base)?;
    let d = (hi - lo) / eps;
    if !d.is_finite() {
        return Err(Error::contract(format!("functional is not finite on the bumped path at index {t}")));
    }
    Ok(d)
}

/// Forward differences at `ε` and `ε/2` and their Richardson combination
/// `2 D(ε/2) − D(ε)`, which cancels the `O(ε)` term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RichardsonPair<T> {
    pub coarse: T,
    pub fine: T,
    pub extrapolated: T,
}

pub fn vderiv_richardson<T: Scalar, F: NonAnticipativeFunctional<T> + ?Sized>(
    f: &F,
    t: usize,
    omega: &StoppedPath<'_, T>,
    x: &Point<T>,
    eps: T,
) -> Result<RichardsonPair<T>> {
    let coarse = vderiv_fd(f, t, omega, x, eps)?;
    let fine = vderiv_fd(f, t, omega, x, eps * T::lit(0.5))?;
    Ok(RichardsonPair { coarse, fine, extrapolated: T::lit(2.0) * fine - coarse })
}

/// Default step: `10⁻³` of the total mass at `t` (or `10⁻³` on a null state).
pub fn default_bump<T: Scalar>(omega: &StoppedPath<'_, T>, t: usize) -> T {
    let mass = omega.state(t).total_mass();
    let scale = if mass > T::zero() { mass } else { T::one() };
    T::lit(DEFAULT_BUMP) * scale
}

/// `𝒟_x F(t, ω)`: analytic when available, Richardson-extrapolated otherwise.
pub fn vderiv<T: Scalar, F: NonAnticipativeFunctional<T> + ?Sized>(
    f: &F,
    t: usize,
    omega: &StoppedPath<'_, T>,
    x: &Point<T>,
) -> Result<T> {
    if let Some(v) = f.analytic_vderiv(t, omega, x) {
        return v;
    }
    let eps = default_bump(&stopped_at(omega, t)?, t);
    Ok(vderiv_richardson(f, t, omega, x, eps)?.extrapolated)
}

/// `ω ↦ 𝒟_x F(t, ω)` as a functional in its own right.
#[derive(Debug)]
struct FirstDerivative<'f, T: Scalar, F: ?Sized> {
    f: &'f F,
    x: Point<T>,
}

impl<T: Scalar, F: NonAnticipativeFunctional<T> + ?Sized> NonAnticipativeFunctional<T> for FirstDerivative<'_, T, F> {
    fn evaluate(&self, t: usize, omega: &StoppedPath<'_, T>) -> Result<T> {
        if let Some(v) = self.f.analytic_vderiv(t, omega, &self.x) {
            return v;
        }
        // the inner step is fixed by the unbumped path so that the outer
        // difference sees a smooth map
        let base = omega.base().stop_index(t);
        let eps = default_bump(&base, t);
        Ok(vderiv_richardson(self.f, t, omega, &self.x, eps)?.extrapolated)
    }
}

/// `𝒟_y 𝒟_x F(t, ω)`.
pub fn vderiv2<T: Scalar, F: NonAnticipativeFunctional<T> + ?Sized>(
    f: &F,
    t: usize,
    omega: &StoppedPath<'_, T>,
    x: &Point<T>,
    y: &Point<T>,
) -> Result<T> {
    let inner = FirstDerivative { f, x: x.clone() };
    let eps = default_bump(&stopped_at(omega, t)?, t);
    Ok(vderiv_richardson(&inner, t, omega, y, eps)?.extrapolated)
}

/// `max_k |F(t_k, X_{t_k}) − ∫_0^{t_k}∫ 𝒟_x F dM_X|` for a U-class functional,
/// with `𝒟_x F = φ_{Γ,a,h}`.
pub fn pathwise_representation_error<T: Scalar>(f: &UFunctional<T>, path: &MeasurePath<T>) -> Result<T> {
    let lhs = f.trajectory(path)?;
    let rhs = integrate_path(&PredictableIntegrand::from(&f.integrand), path)?;
    Ok(lhs.iter().zip(&rhs).fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs())))
}

/// Config description of a functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionalSpec {
    U(UIntegrandSpec),
    GammaOnly { gamma: GammaSpec },
    Linear { h: TestFunctionSpec },
    Squared { h: TestFunctionSpec },
    Constant { value: f64 },
}

impl FunctionalSpec {
    pub fn build<T: Scalar>(&self) -> Result<Arc<dyn NonAnticipativeFunctional<T>>> {
        Ok(match self {
            FunctionalSpec::U(u) => Arc::new(UFunctional::new(u.build()?)),
            FunctionalSpec::GammaOnly { gamma } => Arc::new(GammaOnly { gamma: gamma.build()? }),
            FunctionalSpec::Linear { h } => Arc::new(LinearPairing { h: h.build()? }),
            FunctionalSpec::Squared { h } => Arc::new(SquaredPairing { h: h.build()? }),
            FunctionalSpec::Constant { value } => Arc::new(ConstantFunctional(T::lit(*value))),
        })
    }
}
