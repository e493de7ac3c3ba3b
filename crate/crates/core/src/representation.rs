//! Galerkin construction of the weak vertical derivative `∇_M Y` of a
//! square-integrable martingale `Y(t) = 𝔼[G(X) | 𝓕_t]`.
//!
//! On a finite U-basis `φ_1..φ_n` the integration-by-parts identity
//! `𝔼[(Y(T) − Y(0)) I(φ_i)(T)] = 𝔼[∫∫ ∇_M Y φ_i X(s)(dx) ds]` becomes the
//! linear system `A c = b` with `A_ij = 𝔼 Q(φ_i φ_j)` and
//! `b_i = 𝔼[(G − Ḡ) I(φ_i)(T)]`.

use serde::{Deserialize, Serialize};

use crate::ensemble::{nonempty, Ensemble};
use crate::error::{Error, Result};
use crate::harness::stats::{Estimate, MomentAccumulator};
use crate::martingale_measure::{integrate_path, quadrature_matrix, PredictableIntegrand};
use crate::path::MeasurePath;
use crate::scalar::Scalar;
use crate::test_functions::{SchwartzTestFunction, TestFunctionSpec, UIntegrand, UIntegrandSpec};

/// Ridge relative to `trace(A)/n` used when none is given.
pub const DEFAULT_RELATIVE_RIDGE: f64 = 1e-8;
/// Maximum number of ×10 ridge escalations after a failed factorization.
pub const MAX_ESCALATIONS: usize = 3;

/// A nonempty list of U-integrands.
#[derive(Debug, Clone)]
pub struct Basis<T: Scalar> {
    elements: Vec<UIntegrand<T>>,
    integrands: Vec<PredictableIntegrand<T>>,
}

impl<T: Scalar> Basis<T> {
    pub fn new(elements: Vec<UIntegrand<T>>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::parameter("basis must have at least one element"));
        }
        let integrands = elements.iter().map(PredictableIntegrand::from).collect();
        Ok(Self { elements, integrands })
    }

    pub fn from_specs(specs: &[UIntegrandSpec]) -> Result<Self> {
        Self::new(specs.iter().map(UIntegrandSpec::build).collect::<Result<_>>()?)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn elements(&self) -> &[UIntegrand<T>] {
        &self.elements
    }

    pub fn integrands(&self) -> &[PredictableIntegrand<T>] {
        &self.integrands
    }

    /// The first `n` elements.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        Self::new(self.elements[..n.min(self.len())].to_vec())
    }

    /// `Σ c_i φ_i`.
    pub fn combination(&self, coefficients: &[T]) -> PredictableIntegrand<T> {
        PredictableIntegrand::linear_combination(coefficients, &self.elements)
    }
}

/// Terminal value `G(X)` of the martingale `Y(t) = 𝔼[G | 𝓕_t]`.
#[derive(Debug, Clone)]
pub enum TargetMartingale<T: Scalar> {
    /// `G = I(Σ c_i φ_i)(T)`: a martingale with known representation.
    Planted { coefficients: Vec<T>, integrands: Vec<UIntegrand<T>> },
    /// `G = ⟨X_T, h⟩`.
    TerminalPairing(SchwartzTestFunction<T>),
    /// `G = ⟨X_T, h⟩²`.
    SquaredPairing(SchwartzTestFunction<T>),
    /// `G = X_T(ℝ^d) − X_0(ℝ^d)`.
    MassIncrement,
}

impl<T: Scalar> TargetMartingale<T> {
    pub fn planted(coefficients: Vec<T>, integrands: Vec<UIntegrand<T>>) -> Result<Self> {
        if coefficients.len() != integrands.len() || integrands.is_empty() {
            return Err(Error::parameter("planted target needs one coefficient per integrand"));
        }
        Ok(Self::Planted { coefficients, integrands })
    }

    /// `G(path)`.
    pub fn terminal(&self, path: &MeasurePath<T>) -> Result<T> {
        let k = path.grid().steps();
        match self {
            TargetMartingale::Planted { coefficients, integrands } => {
                let phi = PredictableIntegrand::linear_combination(coefficients, integrands);
                Ok(integrate_path(&phi, path)?[k])
            }
            TargetMartingale::TerminalPairing(h) => path.state(k).pair(h.as_ref()),
            TargetMartingale::SquaredPairing(h) => {
                let u = path.state(k).pair(h.as_ref())?;
                Ok(u * u)
            }
            TargetMartingale::MassIncrement => Ok(path.state(k).total_mass() - path.state(0).total_mass()),
        }
    }
}

/// Config description of a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Planted { coefficients: Vec<f64>, integrands: Vec<UIntegrandSpec> },
    TerminalPairing { h: TestFunctionSpec },
    SquaredPairing { h: TestFunctionSpec },
    MassIncrement,
}

impl TargetSpec {
    pub fn build<T: Scalar>(&self) -> Result<TargetMartingale<T>> {
        match self {
            TargetSpec::Planted { coefficients, integrands } => TargetMartingale::planted(
                coefficients.iter().map(|&c| T::lit(c)).collect(),
                integrands.iter().map(UIntegrandSpec::build).collect::<Result<_>>()?,
            ),
            TargetSpec::TerminalPairing { h } => Ok(TargetMartingale::TerminalPairing(h.build()?)),
            TargetSpec::SquaredPairing { h } => Ok(TargetMartingale::SquaredPairing(h.build()?)),
            TargetSpec::MassIncrement => Ok(TargetMartingale::MassIncrement),
        }
    }
}

/// Per-path ingredients of the Galerkin system.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSample<T> {
    /// `G(path)`.
    pub target: T,
    /// `I(φ_i)(T)`.
    pub integrals: Vec<T>,
    /// `Q_ij = ∫_0^T ⟨X_s, φ_i φ_j⟩ ds`.
    pub quadrature: Vec<Vec<T>>,
}

pub fn projection_sample<T: Scalar>(
    target: &TargetMartingale<T>,
    basis: &Basis<T>,
    path: &MeasurePath<T>,
) -> Result<ProjectionSample<T>> {
    let k = path.grid().steps();
    let integrals = basis.integrands().iter().map(|p| Ok(integrate_path(p, path)?[k])).collect::<Result<_>>()?;
    let refs: Vec<&PredictableIntegrand<T>> = basis.integrands().iter().collect();
    let quadrature = quadrature_matrix(&refs, path, k)?;
    Ok(ProjectionSample { target: target.terminal(path)?, integrals, quadrature })
}

pub fn projection_samples<T: Scalar, E: Ensemble<T> + ?Sized>(
    target: &TargetMartingale<T>,
    basis: &Basis<T>,
    ensemble: &E,
) -> Result<Vec<ProjectionSample<T>>> {
    Ok(nonempty(ensemble.map_paths(|p| projection_sample(target, basis, p))?)?.values)
}

/// Square matrix of estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixEstimate<T> {
    pub mean: Vec<Vec<T>>,
    pub se: Vec<Vec<T>>,
}

/// Vector of estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorEstimate<T> {
    pub mean: Vec<T>,
    pub se: Vec<T>,
}

fn check_samples<T: Scalar>(samples: &[ProjectionSample<T>]) -> Result<usize> {
    let n = samples.first().ok_or(Error::EmptyEnsemble)?.integrals.len();
    if samples.iter().any(|s| s.integrals.len() != n || s.quadrature.len() != n) {
        return Err(Error::Dimension { expected: n, got: 0 });
    }
    Ok(n)
}

/// `A_ij = 𝔼 ∫⟨X_s, φ_i φ_j⟩ ds` with per-entry SE.
pub fn gram_matrix<T: Scalar>(samples: &[ProjectionSample<T>]) -> Result<MatrixEstimate<T>> {
    let n = check_samples(samples)?;
    let mut mean = vec![vec![T::zero(); n]; n];
    let mut se = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in i..n {
            let e = Estimate::of(samples.iter().map(|s| s.quadrature[i][j]));
            mean[i][j] = e.mean;
            mean[j][i] = e.mean;
            se[i][j] = e.se;
            se[j][i] = e.se;
        }
    }
    Ok(MatrixEstimate { mean, se })
}

fn target_mean<T: Scalar>(samples: &[ProjectionSample<T>]) -> T {
    samples.iter().map(|s| s.target).collect::<MomentAccumulator<T>>().mean()
}

/// `b_i = 𝔼[(G − Ḡ) I(φ_i)(T)]` with SE.
pub fn rhs_vector<T: Scalar>(samples: &[ProjectionSample<T>]) -> Result<VectorEstimate<T>> {
    let n = check_samples(samples)?;
    let g_bar = target_mean(samples);
    let est: Vec<Estimate<T>> =
        (0..n).map(|i| Estimate::of(samples.iter().map(|s| (s.target - g_bar) * s.integrals[i]))).collect();
    Ok(VectorEstimate { mean: est.iter().map(|e| e.mean).collect(), se: est.iter().map(|e| e.se).collect() })
}

/// Lower-triangular `L` with `L Lᵀ = A + λI`; `None` if not numerically
/// positive definite.
pub fn cholesky<T: Scalar>(a: &[Vec<T>], ridge: T) -> Option<Vec<Vec<T>>> {
    let n = a.len();
    let mut l = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            if i == j {
                s += ridge;
            }
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > T::zero()) || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b`.
pub fn cholesky_solve<T: Scalar>(l: &[Vec<T>], b: &[T]) -> Vec<T> {
    let n = l.len();
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

fn mat_vec<T: Scalar>(a: &[Vec<T>], x: &[T]) -> Vec<T> {
    a.iter().map(|row| row.iter().zip(x).map(|(a, b)| *a * *b).sum()).collect()
}

fn normalize<T: Scalar>(v: &mut [T]) -> T {
    let n = v.iter().map(|x| *x * *x).sum::<T>().sqrt();
    if n > T::zero() {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// 2-norm condition estimate of `A + λI` by power iteration on it and on its
/// inverse.
pub fn condition_estimate<T: Scalar>(a: &[Vec<T>], ridge: T, l: &[Vec<T>]) -> T {
    let n = a.len();
    let shifted: Vec<Vec<T>> =
        (0..n).map(|i| (0..n).map(|j| a[i][j] + if i == j { ridge } else { T::zero() }).collect()).collect();
    let start: Vec<T> = (0..n).map(|i| T::one() + T::lit(0.1) * T::count(i)).collect();
    let mut v = start.clone();
    normalize(&mut v);
    let mut hi = T::zero();
    for _ in 0..200 {
        let mut w = mat_vec(&shifted, &v);
        hi = normalize(&mut w);
        v = w;
    }
    let mut v = start;
    normalize(&mut v);
    let mut inv = T::zero();
    for _ in 0..200 {
        let mut w = cholesky_solve(l, &v);
        inv = normalize(&mut w);
        v = w;
    }
    hi * inv
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GalerkinSolution<T> {
    pub coefficients: Vec<T>,
    pub gram: Vec<Vec<T>>,
    pub rhs: Vec<T>,
    /// Ridge actually used.
    pub ridge: T,
    pub escalations: usize,
    pub condition: T,
}

/// `c = (A + λI)⁻¹ b`. Without an explicit ridge, `λ = 10⁻⁸ trace(A)/n`;
/// a failed factorization with positive `λ` is retried with `10λ` up to
/// three times.
pub fn solve<T: Scalar>(gram: &[Vec<T>], rhs: &[T], ridge: Option<T>) -> Result<GalerkinSolution<T>> {
    let n = gram.len();
    if n == 0 || rhs.len() != n || gram.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension { expected: n, got: rhs.len() });
    }
    let trace: T = (0..n).map(|i| gram[i][i]).sum();
    let mut lambda = match ridge {
        Some(l) if l >= T::zero() && l.is_finite() => l,
        Some(l) => return Err(Error::parameter(format!("ridge must be finite and >= 0, got {l}"))),
        None => T::lit(DEFAULT_RELATIVE_RIDGE) * trace / T::count(n),
    };
    let mut escalations = 0;
    loop {
        if let Some(l) = cholesky(gram, lambda) {
            let coefficients = cholesky_solve(&l, rhs);
            let condition = condition_estimate(gram, lambda, &l);
            return Ok(GalerkinSolution {
                coefficients,
                gram: gram.to_vec(),
                rhs: rhs.to_vec(),
                ridge: lambda,
                escalations,
                condition,
            });
        }
        if escalations == MAX_ESCALATIONS || lambda == T::zero() {
            return Err(Error::Factorization { ridge: lambda.to_f64_lossy() });
        }
        lambda *= T::lit(10.0);
        escalations += 1;
    }
}

/// Builds and solves the system from fitting samples.
pub fn fit<T: Scalar>(samples: &[ProjectionSample<T>], ridge: Option<T>) -> Result<GalerkinSolution<T>> {
    let a = gram_matrix(samples)?;
    let b = rhs_vector(samples)?;
    solve(&a.mean, &b.mean, ridge)
}

impl<T: Scalar> GalerkinSolution<T> {
    /// `∇̂_M Y = Σ c_i φ_i`.
    pub fn integrand(&self, basis: &Basis<T>) -> PredictableIntegrand<T> {
        basis.combination(&self.coefficients)
    }

    /// `‖∇̂_M Y‖²_{𝓛²(M_X)} = cᵀ A c` on the given samples.
    pub fn norm_squared(&self, samples: &[ProjectionSample<T>]) -> Estimate<T> {
        Estimate::of(samples.iter().map(|s| quadratic_form(&s.quadrature, &self.coefficients, &self.coefficients)))
    }
}

fn quadratic_form<T: Scalar>(q: &[Vec<T>], u: &[T], v: &[T]) -> T {
    let mut acc = T::zero();
    for (i, ui) in u.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            acc += *ui * q[i][j] * *vj;
        }
    }
    acc
}

/// Covariance of the fitted coefficients from the influence functions of
/// `c = A⁻¹ b`: `ψ_p = A⁻¹((G_p − Ḡ) z_p − b − (Q_p − A) c)`.
pub fn coefficient_covariance<T: Scalar>(
    samples: &[ProjectionSample<T>],
    solution: &GalerkinSolution<T>,
) -> Result<Vec<Vec<T>>> {
    let n = check_samples(samples)?;
    let l = cholesky(&solution.gram, solution.ridge)
        .ok_or(Error::Factorization { ridge: solution.ridge.to_f64_lossy() })?;
    let g_bar = target_mean(samples);
    let c = &solution.coefficients;
    let psis: Vec<Vec<T>> = samples
        .iter()
        .map(|s| {
            let qc = mat_vec(&s.quadrature, c);
            let ac = mat_vec(&solution.gram, c);
            let r: Vec<T> =
                (0..n).map(|i| (s.target - g_bar) * s.integrals[i] - solution.rhs[i] - (qc[i] - ac[i])).collect();
            cholesky_solve(&l, &r)
        })
        .collect();
    let m = T::count(psis.len());
    let mut mean = vec![T::zero(); n];
    for p in &psis {
        for i in 0..n {
            mean[i] += p[i] / m;
        }
    }
    let mut cov = vec![vec![T::zero(); n]; n];
    for p in &psis {
        for i in 0..n {
            for j in 0..n {
                cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]);
            }
        }
    }
    let denom = m * (m - T::one()).max(T::one());
    cov.iter_mut().flatten().for_each(|v| *v /= denom);
    Ok(cov)
}

/// `(c − c*)ᵀ Σ⁻¹ (c − c*)`.
pub fn mahalanobis<T: Scalar>(c: &[T], target: &[T], cov: &[Vec<T>]) -> Result<T> {
    let l = cholesky(cov, T::zero()).ok_or(Error::Factorization { ridge: 0.0 })?;
    let d: Vec<T> = c.iter().zip(target).map(|(a, b)| *a - *b).collect();
    let x = cholesky_solve(&l, &d);
    Ok(d.iter().zip(&x).map(|(a, b)| *a * *b).sum())
}

/// 95% quantile of `χ²_n`.
pub fn chi_square_95(n: usize) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(n as f64).map(|d| d.inverse_cdf(0.95)).unwrap_or(f64::INFINITY)
}

/// Holdout fit quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual<T> {
    /// `(G − Ḡ − I(∇̂_M Y)(T))²`.
    pub mean_square: Estimate<T>,
    /// Sample variance of `G`.
    pub target_variance: T,
    pub relative: T,
}

pub fn residual_from_samples<T: Scalar>(
    samples: &[ProjectionSample<T>],
    solution: &GalerkinSolution<T>,
) -> Result<Residual<T>> {
    check_samples(samples)?;
    let g: MomentAccumulator<T> = samples.iter().map(|s| s.target).collect();
    let g_bar = g.mean();
    let mean_square = Estimate::of(samples.iter().map(|s| {
        let fitted: T = s.integrals.iter().zip(&solution.coefficients).map(|(z, c)| *z * *c).sum();
        let e = s.target - g_bar - fitted;
        e * e
    }));
    let var = g.variance();
    let relative = if var > T::zero() { mean_square.mean / var } else { T::zero() };
    Ok(Residual { mean_square, target_variance: var, relative })
}

/// Residual of `solution` on a holdout ensemble disjoint from the fit.
pub fn residual<T: Scalar, E: Ensemble<T> + ?Sized>(
    target: &TargetMartingale<T>,
    solution: &GalerkinSolution<T>,
    basis: &Basis<T>,
    holdout: &E,
) -> Result<Residual<T>> {
    residual_from_samples(&projection_samples(target, basis, holdout)?, solution)
}

/// Both sides of `⟨I(φ), Y⟩_{𝓜²} = ⟨φ, ∇_M Y⟩_{𝓛²(M_X)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdjointReport<T> {
    pub lhs: Estimate<T>,
    pub rhs: Estimate<T>,
}

impl<T: Scalar> AdjointReport<T> {
    pub fn gap(&self) -> T {
        (self.lhs.mean - self.rhs.mean).abs()
    }

    pub fn combined_se(&self) -> T {
        self.lhs.se + self.rhs.se
    }

    pub fn consistent(&self, k: T) -> bool {
        self.gap() <= k * self.combined_se()
    }
}

/// Adjoint check for basis element `j` from precomputed samples.
pub fn adjoint_basis_element<T: Scalar>(
    samples: &[ProjectionSample<T>],
    solution: &GalerkinSolution<T>,
    j: usize,
) -> Result<AdjointReport<T>> {
    let n = check_samples(samples)?;
    if j >= n {
        return Err(Error::parameter(format!("basis index {j} out of range")));
    }
    let g_bar = target_mean(samples);
    let lhs = Estimate::of(samples.iter().map(|s| s.integrals[j] * (s.target - g_bar)));
    let rhs = Estimate::of(
        samples.iter().map(|s| s.quadrature[j].iter().zip(&solution.coefficients).map(|(q, c)| *q * *c).sum()),
    );
    Ok(AdjointReport { lhs, rhs })
}

/// Integration by parts `𝔼[(Y−Y(0))(Z−Z(0))] = 𝔼 ∫∫ ∇̂Y ∇̂Z X(ds,dx)` for two
/// targets fitted on the same basis; the samples carry both targets'
/// integrals.
pub fn integration_by_parts<T: Scalar>(
    y: &[T],
    z: &[T],
    samples: &[ProjectionSample<T>],
    cy: &[T],
    cz: &[T],
) -> Result<AdjointReport<T>> {
    check_samples(samples)?;
    if y.len() != samples.len() || z.len() != samples.len() {
        return Err(Error::Dimension { expected: samples.len(), got: y.len().min(z.len()) });
    }
    let yb = y.iter().copied().collect::<MomentAccumulator<T>>().mean();
    let zb = z.iter().copied().collect::<MomentAccumulator<T>>().mean();
    let lhs = Estimate::of(y.iter().zip(z).map(|(a, b)| (*a - yb) * (*b - zb)));
    let rhs = Estimate::of(samples.iter().map(|s| quadratic_form(&s.quadrature, cy, cz)));
    Ok(AdjointReport { lhs, rhs })
}

/// General adjoint check for any predictable `φ`.
pub fn check_adjoint<T: Scalar, E: Ensemble<T> + ?Sized>(
    phi: &PredictableIntegrand<T>,
    target: &TargetMartingale<T>,
    solution: &GalerkinSolution<T>,
    basis: &Basis<T>,
    ensemble: &E,
) -> Result<AdjointReport<T>> {
    let fitted = solution.integrand(basis);
    let out = nonempty(ensemble.map_paths(|p| {
        let k = p.grid().steps();
        let i = integrate_path(phi, p)?[k];
        let g = target.terminal(p)?;
        let q = quadrature_matrix(&[phi, &fitted], p, k)?[0][1];
        Ok((i, g, q))
    })?)?;
    let g_bar = out.values.iter().map(|v| v.1).collect::<MomentAccumulator<T>>().mean();
    Ok(AdjointReport {
        lhs: Estimate::of(out.values.iter().map(|(i, g, _)| *i * (*g - g_bar))),
        rhs: Estimate::of(out.values.iter().map(|v| v.2)),
    })
}

/// Everything a `represent` run reports.
#[derive(Debug, Clone, Serialize)]
pub struct RepresentationReport<T> {
    pub solution: GalerkinSolution<T>,
    pub gram_se: Vec<Vec<T>>,
    pub rhs_se: Vec<T>,
    pub coefficient_se: Vec<T>,
    pub residual: Residual<T>,
    pub adjoint: Vec<AdjointReport<T>>,
    pub fit_paths: usize,
    pub holdout_paths: usize,
}

/// Fit on `fit`, then score residual and adjoint gaps on `holdout`.
pub fn represent<T: Scalar, E: Ensemble<T> + ?Sized>(
    target: &TargetMartingale<T>,
    basis: &Basis<T>,
    fit_ensemble: &E,
    holdout: &E,
    ridge: Option<T>,
) -> Result<RepresentationReport<T>> {
    let fit_samples = projection_samples(target, basis, fit_ensemble)?;
    let a = gram_matrix(&fit_samples)?;
    let b = rhs_vector(&fit_samples)?;
    let solution = solve(&a.mean, &b.mean, ridge)?;
    let cov = coefficient_covariance(&fit_samples, &solution)?;
    let hold = projection_samples(target, basis, holdout)?;
    let residual = residual_from_samples(&hold, &solution)?;
    let adjoint = (0..basis.len()).map(|j| adjoint_basis_element(&hold, &solution, j)).collect::<Result<_>>()?;
    Ok(RepresentationReport {
        coefficient_se: (0..basis.len()).map(|i| cov[i][i].max(T::zero()).sqrt()).collect(),
        solution,
        gram_se: a.se,
        rhs_se: b.se,
        residual,
        adjoint,
        fit_paths: fit_samples.len(),
        holdout_paths: hold.len(),
    })
}
