use serde::{Deserialize, Serialize};

use super::spectrum::SpectralReport;
use crate::operator::IterationTrace;

/// Iterations skipped before the fit.
pub const TRANSIENT: usize = 3;
pub const MIN_FIT_POINTS: usize = 10;
pub const RATE_TOLERANCE: f64 = 0.02;
pub const MIN_R_SQUARED: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateStatus {
    Pass,
    Fail,
    TriviallyConverged,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateCertificate {
    pub status: CertificateStatus,
    pub rho_empirical: Option<f64>,
    pub rho_spectral: f64,
    pub relative_mismatch: Option<f64>,
    pub r_squared: Option<f64>,
    pub fit_points: usize,
    pub window: Option<(usize, usize)>,
    pub floor: f64,
    /// `(n, log e_n − fit)` over the window.
    pub residuals: Vec<(usize, f64)>,
    pub reason: String,
}

impl RateCertificate {
    pub fn passed(&self) -> bool {
        self.status != CertificateStatus::Fail
    }
}

/// Fits `log e_n ≈ a + n log ρ` over the geometric regime and compares `ρ`
/// with the spectral `|μ₂|`.
///
/// The regime starts after the transient and ends at the first error below
/// the floor `max(1e-12, 100·α‖𝒯f − f‖)`.
pub fn certify_rate(report: &SpectralReport, trace: &IterationTrace) -> RateCertificate {
    let floor = (100.0 * trace.defect_floor).max(1e-12);
    let errors = trace.errors();
    let rho_spectral = report.rate_bound;
    let mut cert = RateCertificate {
        status: CertificateStatus::Fail,
        rho_empirical: None,
        rho_spectral,
        relative_mismatch: None,
        r_squared: None,
        fit_points: 0,
        window: None,
        floor,
        residuals: Vec::new(),
        reason: String::new(),
    };
    if errors.first().is_none_or(|&e0| e0 <= floor) {
        cert.status = CertificateStatus::TriviallyConverged;
        cert.reason = "initial error already at the numerical floor".into();
        return cert;
    }
    let end = errors
        .iter()
        .enumerate()
        .skip(TRANSIENT)
        .find(|(_, &e)| e <= floor)
        .map_or(errors.len(), |(n, _)| n);
    if end < TRANSIENT + MIN_FIT_POINTS {
        cert.fit_points = end.saturating_sub(TRANSIENT);
        cert.reason = format!(
            "only {} iterations above the floor {floor:.2e} after the transient; need {MIN_FIT_POINTS}",
            cert.fit_points
        );
        return cert;
    }
    let xs: Vec<f64> = (TRANSIENT..end).map(|n| n as f64).collect();
    let ys: Vec<f64> = errors[TRANSIENT..end].iter().map(|e| e.ln()).collect();
    let (slope, intercept, r2) = least_squares(&xs, &ys);
    let rho = slope.exp();
    let mismatch = (rho - rho_spectral).abs() / rho_spectral;
    cert.rho_empirical = Some(rho);
    cert.relative_mismatch = Some(mismatch);
    cert.r_squared = Some(r2);
    cert.fit_points = xs.len();
    cert.window = Some((TRANSIENT, end - 1));
    cert.residuals = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| (x as usize, y - (intercept + slope * x)))
        .collect();
    if r2 < MIN_R_SQUARED {
        cert.reason = format!("decay is not geometric (R^2 = {r2:.5})");
    } else if mismatch >= RATE_TOLERANCE {
        cert.reason = format!(
            "fitted rate {rho:.6} differs from |mu2| = {rho_spectral:.6} by {:.2}%",
            100.0 * mismatch
        );
    } else {
        cert.status = CertificateStatus::Pass;
        cert.reason = format!(
            "fitted rate {rho:.6} matches |mu2| = {rho_spectral:.6} within {:.3}%",
            100.0 * mismatch
        );
    }
    cert
}

/// `(slope, intercept, R²)`.
fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, my - slope * mx, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{IterationRecord, Termination};

    fn report(rho: f64) -> SpectralReport {
        SpectralReport {
            eigenvalues: vec![1.0, rho],
            max_imaginary: 0.0,
            sum_of_squares: 1.0 + rho * rho,
            leading_vector: vec![],
            leading_vector_error: 0.0,
            second_vector_mass: 0.0,
            gap: 1.0 - rho,
            rate_bound: rho,
            multiplicity_check: true,
            symmetric: true,
            symmetry_residual: 0.0,
            warnings: vec![],
        }
    }

    fn trace(errors: impl Iterator<Item = f64>, floor: f64) -> IterationTrace {
        IterationTrace {
            records: errors
                .enumerate()
                .map(|(n, error)| IterationRecord {
                    n,
                    norm: 1.0,
                    error,
                })
                .collect(),
            alpha: 1.0,
            initial_norm: 1.0,
            defect_floor: floor,
            termination: Termination::MaxSteps,
            anomaly: None,
        }
    }

    #[test]
    fn exact_geometric_sequence_passes() {
        let rho = 0.7648f64;
        let t = trace((0..60).map(|n| 2.0 * rho.powi(n)), 1e-12);
        let c = certify_rate(&report(rho), &t);
        assert_eq!(c.status, CertificateStatus::Pass);
        assert!((c.rho_empirical.unwrap() - rho).abs() < 1e-12);
        assert!(c.r_squared.unwrap() > 0.999_999);
        assert!(c.residuals.iter().all(|r| r.1.abs() < 1e-10));
    }

    #[test]
    fn wrong_rate_fails() {
        let t = trace((0..60).map(|n| 0.8f64.powi(n)), 1e-12);
        let c = certify_rate(&report(0.7), &t);
        assert_eq!(c.status, CertificateStatus::Fail);
        assert!(c.reason.contains("differs"));
    }

    #[test]
    fn non_geometric_decay_fails_on_r_squared() {
        let t = trace((0..40).map(|n| 1.0 / (1.0 + (n as f64).powi(3))), 1e-12);
        let c = certify_rate(&report(0.9), &t);
        assert_eq!(c.status, CertificateStatus::Fail);
        assert!(
            c.r_squared.unwrap() < MIN_R_SQUARED || c.relative_mismatch.unwrap() >= RATE_TOLERANCE
        );
    }

    #[test]
    fn at_floor_is_trivial() {
        let t = trace([1e-9].into_iter(), 1e-10);
        assert_eq!(
            certify_rate(&report(0.5), &t).status,
            CertificateStatus::TriviallyConverged
        );
    }

    #[test]
    fn too_short_regime_fails() {
        let t = trace((0..8).map(|n| 0.5f64.powi(n)), 1e-12);
        let c = certify_rate(&report(0.5), &t);
        assert_eq!(c.status, CertificateStatus::Fail);
        assert!(c.reason.contains("only"));
    }
}
