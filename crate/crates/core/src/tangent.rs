//! Derivative of the flow with respect to the initial configuration.
//!
//! Two independent routes produce the four `d×d` blocks of `∂(Q,P)/∂(q,p)`:
//! the discrete chain rule through each leapfrog substep (exact derivative of
//! the map actually used), and the closed-form block exponential built from
//! running averages of the Hessians. The two coincide for constant Hessians.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::distributions::ModelPair;
use crate::dynamics::{FlowSpec, PhaseState, Propagator};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TangentBlocks {
    pub dq_dq: DMatrix<f64>,
    pub dq_dp: DMatrix<f64>,
    pub dp_dq: DMatrix<f64>,
    pub dp_dp: DMatrix<f64>,
}

impl TangentBlocks {
    pub fn identity(d: usize) -> Self {
        TangentBlocks {
            dq_dq: DMatrix::identity(d, d),
            dq_dp: DMatrix::zeros(d, d),
            dp_dq: DMatrix::zeros(d, d),
            dp_dp: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.dq_dq.nrows()
    }

    /// The full `2d×2d` Jacobian `[[∂Q/∂q, ∂Q/∂p], [∂P/∂q, ∂P/∂p]]`.
    pub fn full(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut j = DMatrix::zeros(2 * d, 2 * d);
        j.view_mut((0, 0), (d, d)).copy_from(&self.dq_dq);
        j.view_mut((0, d), (d, d)).copy_from(&self.dq_dp);
        j.view_mut((d, 0), (d, d)).copy_from(&self.dp_dq);
        j.view_mut((d, d), (d, d)).copy_from(&self.dp_dp);
        j
    }

    pub fn determinant(&self) -> f64 {
        self.full().determinant()
    }

    /// Max entrywise difference relative to the largest entry of `other`.
    pub fn relative_error(&self, other: &TangentBlocks) -> f64 {
        let a = self.full();
        let b = other.full();
        (&a - &b).norm() / b.norm()
    }
}

/// Time averages of the Hessians along a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningAverages {
    /// `1/t ∫ U''(Q(s)) ds`.
    pub target_hessian: DMatrix<f64>,
    /// `1/t ∫ V''(P(s)) ds`.
    pub auxiliary_hessian: DMatrix<f64>,
    pub time: f64,
}

/// Co-integrates the flow and its variational equation.
///
/// For leapfrog the blocks are the exact derivative of the discrete map and
/// the averages use the trapezoid rule over the substep Hessians.
pub fn integrate_tangent(
    state: &PhaseState,
    model: &ModelPair,
    spec: &FlowSpec,
) -> Result<(PhaseState, TangentBlocks, RunningAverages)> {
    Propagator::new(model, spec)?.forward_with_tangent(state)
}

fn symmetric_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let asymmetry = (m - m.transpose()).amax();
    if asymmetry > 1e-10 * m.amax().max(1.0) {
        return Err(Error::NotSymmetric { asymmetry });
    }
    let eig = ((m + m.transpose()) * 0.5).symmetric_eigen();
    let lo = eig.eigenvalues.min();
    if lo <= 0.0 {
        return Err(Error::NotPositiveDefinite { eigenvalue: lo });
    }
    Ok(eig)
}

fn spectral_fn(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let e = &eig.eigenvectors;
    let mut scaled = e.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(f(lam));
    }
    scaled * e.transpose()
}

/// Symmetric positive definite square root by spectral decomposition.
pub fn spd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigen(m)?;
    Ok(spectral_fn(&eig, f64::sqrt))
}

/// `√(VU) = √U⁻¹ √(√U V √U) √U`, the square root of `VU` with positive spectrum.
pub fn sqrt_product(v: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ue = symmetric_eigen(u)?;
    symmetric_eigen(v)?;
    let us = spectral_fn(&ue, f64::sqrt);
    let us_inv = spectral_fn(&ue, |x| 1.0 / x.sqrt());
    let w = &us * v * &us;
    let ws = spd_sqrt(&((&w + w.transpose()) * 0.5))?;
    Ok(us_inv * ws * us)
}

/// `sin(x)/x`, with a three-term series below `|x| = 1e-4`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Block exponential of `t·[[0, V], [-U, 0]]` for the averaged Hessians.
pub fn block_exponential(averages: &RunningAverages) -> Result<TangentBlocks> {
    block_exponential_at(
        &averages.target_hessian,
        &averages.auxiliary_hessian,
        averages.time,
    )
}

/// `[[cos tA, tV sinc tB], [-tU sinc tA, cos tB]]` with `A = √(VU)`, `B = √(UV)`.
///
/// Evaluated through `W = √U V √U = E diag(ω²) Eᵀ`, so that
/// `A = √U⁻¹ √W √U` and `B = √U √W √U⁻¹`. Any real `t` is accepted.
pub fn block_exponential_at(u: &DMatrix<f64>, v: &DMatrix<f64>, t: f64) -> Result<TangentBlocks> {
    if u.shape() != v.shape() {
        return Err(Error::DimensionMismatch {
            expected: u.nrows(),
            got: v.nrows(),
        });
    }
    let ue = symmetric_eigen(u)?;
    symmetric_eigen(v)?;
    let us = spectral_fn(&ue, f64::sqrt);
    let us_inv = spectral_fn(&ue, |x| 1.0 / x.sqrt());
    let w = &us * v * &us;
    let we = symmetric_eigen(&((&w + w.transpose()) * 0.5))?;
    let cos_w = spectral_fn(&we, |w2| (t * w2.sqrt()).cos());
    let sinc_w = spectral_fn(&we, |w2| sinc(t * w2.sqrt()));

    Ok(TangentBlocks {
        dq_dq: &us_inv * &cos_w * &us,
        dq_dp: (v * &us * &sinc_w * &us_inv) * t,
        dp_dq: (&us * &sinc_w * &us) * (-t),
        dp_dp: &us * &cos_w * &us_inv,
    })
}

/// `(𝒟_q, 𝒟_p) = (1/|det ∂Q/∂p|, 1/|det ∂P/∂q|)`.
pub fn jacobian_determinants(blocks: &TangentBlocks) -> Result<(f64, f64)> {
    let dq = blocks.dq_dp.determinant().abs();
    if dq < 1e-14 {
        return Err(Error::SingularBlock {
            block: "dQ/dp",
            det: dq,
        });
    }
    let dp = blocks.dp_dq.determinant().abs();
    if dp < 1e-14 {
        return Err(Error::SingularBlock {
            block: "dP/dq",
            det: dp,
        });
    }
    Ok((1.0 / dq, 1.0 / dp))
}

/// Bounds `((tΛ)^{-2d}, (t sinc(tλ))^{-2d})` on `𝒟_q·𝒟_p`, valid for `0 < tΛ < π/2`.
pub fn determinant_bounds(model: &ModelPair, t: f64) -> Result<(f64, f64)> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid("t", format!("must be positive, got {t}")));
    }
    let (lo, hi) = model.concavity_bounds();
    if t * hi >= FRAC_PI_2 {
        return Err(Error::OutOfRegime {
            t,
            what: "t*Lambda",
            value: t * hi,
        });
    }
    let exponent = -2.0 * model.dim() as f64;
    Ok(((t * hi).powf(exponent), (t * sinc(t * lo)).powf(exponent)))
}
