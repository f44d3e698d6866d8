use serde::{Deserialize, Serialize};

use super::grid::{DensityGrid, DensityVector};
use super::transfer::TransferMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub n: usize,
    /// `‖𝒯ⁿh‖₂`.
    pub norm: f64,
    /// `‖𝒯ⁿh − αf‖₂`.
    pub error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// `e_n < tol·‖h₀‖`.
    Converged,
    /// The error stopped changing: the discretization floor was reached.
    Stalled,
    MaxSteps,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    /// `α = ∫h₀ / ∫f`.
    pub alpha: f64,
    pub initial_norm: f64,
    /// `α‖𝒯f − f‖₂`: the error level below which iterates only see the
    /// discretized operator's own fixed-point defect.
    pub defect_floor: f64,
    pub termination: Termination,
    pub anomaly: Option<String>,
}

impl IterationTrace {
    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.error).collect()
    }

    /// `lim ‖𝒯ⁿh‖₂²` as seen by the last record.
    pub fn norm_limit_sq(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.norm * r.norm)
    }
}

/// Consecutive increases with more than 1% growth that count as divergence.
const DIVERGENCE_RUN: usize = 10;

/// Runs `h ← 𝒯h` up to `n_max` times, tracking norm and distance to `αf`.
///
/// `tol` is relative to `‖h₀‖₂`.
pub fn iterate(
    t: &TransferMatrix,
    grid: &DensityGrid,
    h0: &DensityVector,
    n_max: usize,
    tol: f64,
) -> Result<IterationTrace> {
    t.check_grid(grid)?;
    grid.check_len(h0)?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid("tol", "must be positive"));
    }
    let f = grid.target();
    let alpha = grid.mass(h0) / grid.mass(f);
    if !alpha.is_finite() {
        return Err(Error::invalid("h0", "mass is not finite"));
    }
    let initial_norm = grid.weighted_norm(h0);
    let defect_floor = alpha.abs() * grid.weighted_norm(&(t.apply(f) - f));
    let target = f * alpha;

    let mut h = h0.clone();
    let mut records = Vec::new();
    let mut rising = 0;
    let mut anomaly = None;
    let mut termination = Termination::MaxSteps;
    for n in 0..=n_max {
        let error = grid.weighted_norm(&(&h - &target));
        records.push(IterationRecord {
            n,
            norm: grid.weighted_norm(&h),
            error,
        });
        if error < tol * initial_norm.max(f64::MIN_POSITIVE) {
            termination = Termination::Converged;
            break;
        }
        if let Some(prev) = records.len().checked_sub(2).map(|k| records[k].error) {
            if (error - prev).abs() <= 1e-10 * error {
                termination = Termination::Stalled;
                break;
            }
            if error > prev * 1.01 {
                rising += 1;
                if rising >= DIVERGENCE_RUN && anomaly.is_none() {
                    anomaly = Some(format!(
                        "error grew for {DIVERGENCE_RUN} consecutive steps up to n={n}: the discretization is not contractive"
                    ));
                }
            } else {
                rising = 0;
            }
        }
        if n < n_max {
            h = t.apply(&h);
        }
    }
    Ok(IterationTrace {
        records,
        alpha,
        initial_norm,
        defect_floor,
        termination,
        anomaly,
    })
}
