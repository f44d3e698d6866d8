use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{
    similarity_form, weighted_symmetry_residual, DensityGrid, DensityVector, TransferMatrix,
};

/// Weighted-symmetry residual below which the symmetric solver is used.
pub const SYMMETRIC_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Top eigenvalues (real parts), by modulus, descending.
    pub eigenvalues: Vec<f64>,
    /// Largest imaginary part among the reported eigenvalues.
    pub max_imaginary: f64,
    /// `Σ μ_k²` over the full discrete spectrum.
    pub sum_of_squares: f64,
    /// Eigenvector for `μ₁`, scaled so that `⟨v, f⟩ = ⟨f, f⟩`.
    pub leading_vector: Vec<f64>,
    /// `‖v − f‖₂ / ‖f‖₂` for the scaled leading vector.
    pub leading_vector_error: f64,
    /// `|∫v₂| / ∫|v₂|` for the second eigenvector.
    pub second_vector_mass: f64,
    /// `1 − |μ₂|`.
    pub gap: f64,
    /// `|μ₂|`.
    pub rate_bound: f64,
    /// `μ₁ = 1` is simple: `|μ₁ − 1| ≤ 1e-4`, `|μ₂| < 1` and `v₂` massless.
    pub multiplicity_check: bool,
    /// The symmetric solver was used.
    pub symmetric: bool,
    pub symmetry_residual: f64,
    pub warnings: Vec<String>,
}

/// Eigen-analysis in the similarity form `D T D⁻¹`, `D = diag(√(w/f))`.
///
/// Self-adjoint operators get a dense symmetric solver and real spectra.
/// Otherwise the general real Schur route is taken and the report is
/// flagged; eigenvectors then come from inverse iteration.
pub fn eigen_spectrum(t: &TransferMatrix, grid: &DensityGrid, k: usize) -> Result<SpectralReport> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    let residual = weighted_symmetry_residual(t, grid)?;
    let (m, keep) = similarity_form(t, grid)?;
    let scale: Vec<f64> = keep
        .iter()
        .map(|&i| (grid.weights()[i] / grid.target()[i]).sqrt())
        .collect();
    let r = keep.len();
    if r < 2 {
        return Err(Error::invalid("grid", "fewer than two retained nodes"));
    }
    let mut warnings = Vec::new();
    let symmetric = residual < SYMMETRIC_THRESHOLD;

    let (values, imag, vectors): (Vec<f64>, Vec<f64>, Vec<DVector<f64>>) = if symmetric {
        let eig = ((&m + m.transpose()) * 0.5).symmetric_eigen();
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .abs()
                .total_cmp(&eig.eigenvalues[a].abs())
        });
        let values = order.iter().map(|&j| eig.eigenvalues[j]).collect();
        let vectors = order
            .iter()
            .take(2)
            .map(|&j| eig.eigenvectors.column(j).into_owned())
            .collect();
        (values, vec![0.0; r], vectors)
    } else {
        warnings.push(format!(
            "operator is not self-adjoint on the grid (residual {residual:.2e}); general eigensolver used"
        ));
        let ev = m.complex_eigenvalues();
        let mut pairs: Vec<(f64, f64)> = ev.iter().map(|c| (c.re, c.im)).collect();
        pairs.sort_by(|a, b| b.0.hypot(b.1).total_cmp(&a.0.hypot(a.1)));
        let vectors = pairs
            .iter()
            .take(2)
            .map(|&(re, _)| inverse_iteration(&m, re))
            .collect::<Result<Vec<_>>>()?;
        let (values, imag) = pairs.into_iter().unzip();
        (values, imag, vectors)
    };

    let to_density = |u: &DVector<f64>| {
        let mut v = DVector::zeros(grid.len());
        for (a, &i) in keep.iter().enumerate() {
            v[i] = u[a] / scale[a];
        }
        v
    };
    let f = grid.target();
    let mut lead: DensityVector = to_density(&vectors[0]);
    let proj = grid.weighted_inner(&lead, f) / grid.weighted_inner(f, f);
    if proj != 0.0 {
        lead /= proj;
    }
    let leading_vector_error = grid.weighted_norm(&(&lead - f)) / grid.weighted_norm(f);
    let second = to_density(&vectors[1]);
    let abs_mass: f64 = grid
        .weights()
        .iter()
        .zip(second.iter())
        .map(|(w, v)| w * v.abs())
        .sum();
    let second_vector_mass = grid.mass(&second).abs() / abs_mass.max(f64::MIN_POSITIVE);

    let mu1 = values[0];
    let mu2 = values[1].hypot(imag[1]);
    let multiplicity_check =
        (mu1 - 1.0).abs() <= 1e-4 && mu2 < 1.0 - 1e-9 && second_vector_mass < 1e-6;
    if !multiplicity_check {
        warnings.push(format!(
            "leading eigenvalue not simple (mu1 = {mu1:.8}, |mu2| = {mu2:.8}, second-vector mass {second_vector_mass:.2e}): coverage fails on this grid"
        ));
    }
    if let Some(bad) = values
        .iter()
        .zip(&imag)
        .find(|(re, im)| re.hypot(**im) > 1.0 + 1e-6)
    {
        warnings.push(format!(
            "eigenvalue {:.8} outside the unit disk",
            bad.0.hypot(*bad.1)
        ));
    }
    let sum_of_squares = values
        .iter()
        .zip(&imag)
        .map(|(re, im)| re * re - im * im)
        .sum();
    let kk = k.min(r);
    let max_imaginary = imag.iter().take(kk).fold(0.0f64, |a, b| a.max(b.abs()));
    Ok(SpectralReport {
        eigenvalues: values.into_iter().take(kk).collect(),
        max_imaginary,
        sum_of_squares,
        leading_vector: lead.iter().copied().collect(),
        leading_vector_error,
        second_vector_mass,
        gap: 1.0 - mu2,
        rate_bound: mu2,
        multiplicity_check,
        symmetric,
        symmetry_residual: residual,
        warnings,
    })
}

/// Eigenvector of `m` for the eigenvalue nearest `shift`.
fn inverse_iteration(m: &DMatrix<f64>, shift: f64) -> Result<DVector<f64>> {
    let r = m.nrows();
    let perturbed = shift + 1e-10 * shift.abs().max(1.0);
    let lu = (m - DMatrix::identity(r, r) * perturbed).lu();
    let mut v = DVector::from_fn(r, |i, _| 1.0 + 0.01 * ((i * 7919) % 101) as f64);
    for _ in 0..4 {
        let next = lu
            .solve(&v)
            .ok_or_else(|| Error::invalid("spectrum", "inverse iteration hit a singular shift"))?;
        v = &next / next.norm();
    }
    Ok(v)
}
