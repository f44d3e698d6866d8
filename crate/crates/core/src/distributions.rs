//! Strongly log-concave target and auxiliary densities.
//!
//! Every density is handled through its potential `U = -log f̄`, fixed so that
//! the potential vanishes at its minimizer. Densities are never normalized
//! except where a probability measure is genuinely required (the momentum
//! marginal), see [`Potential::log_normalizer`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Concrete family behind a [`Potential`].
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// `½ (x-m)ᵀ P (x-m)`.
    Gaussian {
        mean: DVector<f64>,
        precision: DMatrix<f64>,
    },
    /// One-dimensional `a x²/2 + b x⁴/4`.
    Anharmonic { a: f64, b: f64 },
}

/// Potential energy with hand-coded derivatives and Hessian spectral bounds.
#[derive(Clone, Debug)]
pub struct Potential {
    family: Family,
    dim: usize,
    lambda_lo: f64,
    lambda_hi: f64,
    /// Half-width of the box on which the bounds hold; `None` means everywhere.
    validity: Option<f64>,
    /// Lower Cholesky factor of the precision, Gaussian family only.
    chol: Option<DMatrix<f64>>,
}

const SYMMETRY_TOL: f64 = 1e-12;

/// Gaussian potential with the given mean and symmetric positive definite precision.
pub fn gaussian_potential(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Potential> {
    let d = mean.len();
    if d == 0 {
        return Err(Error::invalid("mean", "dimension must be positive"));
    }
    if precision.nrows() != d || precision.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: precision.nrows(),
        });
    }
    if mean.iter().chain(precision.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("precision", "entries must be finite"));
    }
    let scale = precision.amax().max(1.0);
    let asymmetry = (&precision - precision.transpose()).amax();
    if asymmetry > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry });
    }
    let precision = (&precision + precision.transpose()) * 0.5;
    let eig = precision.clone().symmetric_eigen();
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if lo <= 0.0 {
        return Err(Error::NotPositiveDefinite { eigenvalue: lo });
    }
    let chol = precision
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { eigenvalue: lo })?
        .l();
    Ok(Potential {
        family: Family::Gaussian { mean, precision },
        dim: d,
        lambda_lo: lo,
        lambda_hi: hi,
        validity: None,
        chol: Some(chol),
    })
}

/// Centered Gaussian with identity precision in `d` dimensions.
pub fn standard_gaussian(d: usize) -> Potential {
    gaussian_potential(DVector::zeros(d), DMatrix::identity(d, d))
        .expect("identity precision is positive definite")
}

/// `a x²/2 + b x⁴/4` on the line; the upper Hessian bound `a + 3bL²` holds on `[-L, L]`.
pub fn anharmonic_potential(a: f64, b: f64, halfwidth: f64) -> Result<Potential> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::invalid("a", format!("must be positive, got {a}")));
    }
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::invalid("b", format!("must be nonnegative, got {b}")));
    }
    if !(halfwidth > 0.0 && halfwidth.is_finite()) {
        return Err(Error::invalid(
            "halfwidth",
            format!("must be positive, got {halfwidth}"),
        ));
    }
    Ok(Potential {
        family: Family::Anharmonic { a, b },
        dim: 1,
        lambda_lo: a,
        lambda_hi: a + 3.0 * b * halfwidth * halfwidth,
        validity: (b > 0.0).then_some(halfwidth),
        chol: None,
    })
}

/// Unnormalized density `exp(-U(x))`. Underflows to zero far from the mode.
pub fn density_value(pot: &Potential, x: &DVector<f64>) -> f64 {
    (-pot.eval(x)).exp()
}

impl Potential {
    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Lower Hessian bound λ.
    pub fn lambda_lo(&self) -> f64 {
        self.lambda_lo
    }

    /// Upper Hessian bound Λ on the validity box.
    pub fn lambda_hi(&self) -> f64 {
        self.lambda_hi
    }

    pub fn validity_halfwidth(&self) -> Option<f64> {
        self.validity
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.family, Family::Gaussian { .. })
    }

    pub fn gaussian_parts(&self) -> Option<(&DVector<f64>, &DMatrix<f64>)> {
        match &self.family {
            Family::Gaussian { mean, precision } => Some((mean, precision)),
            Family::Anharmonic { .. } => None,
        }
    }

    /// Whether `U(x) = U(-x)` holds structurally.
    pub fn is_even(&self) -> bool {
        match &self.family {
            Family::Gaussian { mean, .. } => mean.iter().all(|&m| m == 0.0),
            Family::Anharmonic { .. } => true,
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match &self.family {
            Family::Gaussian { mean, precision } => {
                let r = x - mean;
                0.5 * r.dot(&(precision * &r))
            }
            Family::Anharmonic { a, b } => {
                let s = x[0] * x[0];
                0.5 * a * s + 0.25 * b * s * s
            }
        }
    }

    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        self.grad_into(x, &mut out);
        out
    }

    /// Writes the gradient into `out` without allocating.
    pub fn grad_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        match &self.family {
            Family::Gaussian { mean, precision } => {
                out.gemv(1.0, precision, x, 0.0);
                out.gemv(-1.0, precision, mean, 1.0);
            }
            Family::Anharmonic { a, b } => {
                let v = x[0];
                out[0] = a * v + b * v * v * v;
            }
        }
    }

    pub fn hess(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.family {
            Family::Gaussian { precision, .. } => precision.clone(),
            Family::Anharmonic { a, b } => DMatrix::from_element(1, 1, a + 3.0 * b * x[0] * x[0]),
        }
    }

    /// `log ∫ exp(-U)`. Analytic for Gaussians, trapezoid quadrature otherwise.
    pub fn log_normalizer(&self) -> f64 {
        match &self.family {
            Family::Gaussian { precision, .. } => {
                let d = self.dim as f64;
                let logdet = self
                    .chol
                    .as_ref()
                    .map(|l| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>())
                    .unwrap_or_else(|| precision.determinant().ln());
                0.5 * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet
            }
            Family::Anharmonic { a, .. } => {
                // exp(-U) < e^-60 beyond this radius
                let r = (120.0 / a).sqrt();
                let n = 8001;
                let h = 2.0 * r / (n - 1) as f64;
                let mut x = DVector::zeros(1);
                let s: f64 = (0..n)
                    .map(|i| {
                        x[0] = -r + i as f64 * h;
                        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                        w * (-self.eval(&x)).exp()
                    })
                    .sum();
                (s * h).ln()
            }
        }
    }

    /// Draws from the normalized density `exp(-U)/Z`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match &self.family {
            Family::Gaussian { mean, .. } => {
                let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let l = self
                    .chol
                    .as_ref()
                    .expect("Gaussian potentials carry a factor");
                // x = m + L^{-T} z has covariance (L Lᵀ)^{-1}
                let y = l
                    .transpose()
                    .solve_upper_triangular(&z)
                    .expect("Cholesky factor is nonsingular");
                mean + y
            }
            Family::Anharmonic { a, b } => {
                // Gaussian envelope N(0, 1/a), accept with exp(-b x⁴/4)
                let sd = 1.0 / a.sqrt();
                loop {
                    let x = sd * rng.sample::<f64, _>(StandardNormal);
                    let u: f64 = rng.random();
                    if u < (-0.25 * b * x.powi(4)).exp() {
                        return DVector::from_element(1, x);
                    }
                }
            }
        }
    }

    pub(crate) fn describe(&self) -> String {
        match &self.family {
            Family::Gaussian { mean, precision } => format!(
                "gaussian(d={}, mean={:?}, precision={:?})",
                self.dim,
                mean.as_slice(),
                precision.as_slice()
            ),
            Family::Anharmonic { a, b } => format!("anharmonic(a={a}, b={b})"),
        }
    }
}

/// Target and auxiliary potentials sharing a dimension, plus the position box.
#[derive(Clone, Debug)]
pub struct ModelPair {
    pub target: Potential,
    pub auxiliary: Potential,
    pub domain_halfwidth: f64,
    pub auxiliary_even: bool,
}

impl ModelPair {
    pub fn new(target: Potential, auxiliary: Potential, domain_halfwidth: f64) -> Result<Self> {
        if target.dim() != auxiliary.dim() {
            return Err(Error::DimensionMismatch {
                expected: target.dim(),
                got: auxiliary.dim(),
            });
        }
        if !(domain_halfwidth > 0.0 && domain_halfwidth.is_finite()) {
            return Err(Error::invalid(
                "domain_halfwidth",
                format!("must be positive, got {domain_halfwidth}"),
            ));
        }
        if let Some(valid) = target.validity_halfwidth() {
            if valid < domain_halfwidth {
                return Err(Error::invalid(
                    "domain_halfwidth",
                    format!(
                        "target Hessian bounds hold on [-{valid}, {valid}] only, box is [-{domain_halfwidth}, {domain_halfwidth}]"
                    ),
                ));
            }
        }
        let auxiliary_even = auxiliary.is_even();
        Ok(ModelPair {
            target,
            auxiliary,
            domain_halfwidth,
            auxiliary_even,
        })
    }

    /// Standard Gaussian target and momentum in `d` dimensions.
    pub fn standard_gaussian(d: usize, domain_halfwidth: f64) -> Result<Self> {
        Self::new(standard_gaussian(d), standard_gaussian(d), domain_halfwidth)
    }

    /// One-dimensional anharmonic target with standard Gaussian momentum.
    pub fn anharmonic(a: f64, b: f64, domain_halfwidth: f64) -> Result<Self> {
        Self::new(
            anharmonic_potential(a, b, domain_halfwidth)?,
            standard_gaussian(1),
            domain_halfwidth,
        )
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn is_gaussian(&self) -> bool {
        self.target.is_gaussian() && self.auxiliary.is_gaussian()
    }

    /// `(λ, Λ)` over both potentials.
    pub fn concavity_bounds(&self) -> (f64, f64) {
        (
            self.target.lambda_lo().min(self.auxiliary.lambda_lo()),
            self.target.lambda_hi().max(self.auxiliary.lambda_hi()),
        )
    }

    /// Upper bound on the frequencies of the linearized flow, `sqrt(Λ_U Λ_V)`.
    pub fn frequency_bound(&self) -> f64 {
        (self.target.lambda_hi() * self.auxiliary.lambda_hi()).sqrt()
    }

    /// Rejects `t` at or past the first conjugate time of the linearized flow.
    pub fn check_regime(&self, t: f64) -> Result<()> {
        let value = t.abs() * self.frequency_bound();
        if value >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::OutOfRegime {
                t,
                what: "t*sqrt(Lambda_U*Lambda_V)",
                value,
            });
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "target={} auxiliary={} L={}",
            self.target.describe(),
            self.auxiliary.describe(),
            self.domain_halfwidth
        )
    }
}
