//! Minimal HMC sampler used as an independent check of the operator's fixed
//! point: flow, full momentum refresh from ḡ, Metropolis on `𝓗`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::ModelPair;
use crate::dynamics::{total_energy, FlowSpec, PhaseState, Propagator};
use crate::error::{Error, Result};
use crate::operator::{DensityGrid, DensityVector};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplerReport {
    pub samples: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    /// Samples that landed outside `[-L, L]`.
    pub outside: usize,
    /// Bin probabilities of the chain, normalized over the box.
    pub histogram: Vec<f64>,
    /// Bin probabilities of the reference density.
    pub reference: Vec<f64>,
    /// `max_b |histogram_b − reference_b|`; `None` without samples.
    pub sup_distance: Option<f64>,
    pub warnings: Vec<String>,
}

/// Runs `samples` HMC transitions from `start` and bins the positions on
/// `bins` equal cells of `[-L, L]`. One-dimensional models only.
pub fn run_crosscheck(
    model: &ModelPair,
    spec: &FlowSpec,
    reference: &[f64],
    samples: usize,
    seed: u64,
    start: f64,
) -> Result<SamplerReport> {
    if model.dim() != 1 {
        return Err(Error::invalid(
            "model",
            "the sampler cross-check is one-dimensional",
        ));
    }
    let bins = reference.len();
    if bins == 0 {
        return Err(Error::invalid("bins", "must be at least 1"));
    }
    let prop = Propagator::new(model, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = model.domain_halfwidth;
    let width = 2.0 * l / bins as f64;
    let mut counts = vec![0u64; bins];
    let mut q = DVector::from_element(1, start);
    let mut accepted = 0;
    let mut outside = 0;
    for _ in 0..samples {
        let state = PhaseState::new(q.clone(), model.auxiliary.sample(&mut rng));
        let h0 = total_energy(&state, model);
        let proposal = prop.forward(&state);
        let h1 = total_energy(&proposal, model);
        let u: f64 = rng.random();
        if proposal.is_finite() && u < (h0 - h1).exp() {
            q = proposal.q;
            accepted += 1;
        }
        let x = q[0];
        if x.abs() <= l {
            counts[((x + l) / width).floor().min((bins - 1) as f64) as usize] += 1;
        } else {
            outside += 1;
        }
    }
    let inside: u64 = counts.iter().sum();
    let histogram: Vec<f64> = counts
        .iter()
        .map(|&c| {
            if inside > 0 {
                c as f64 / inside as f64
            } else {
                0.0
            }
        })
        .collect();
    let sup_distance = (inside > 0).then(|| {
        histogram
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    });
    let acceptance_rate = if samples > 0 {
        accepted as f64 / samples as f64
    } else {
        0.0
    };
    let mut warnings = Vec::new();
    if samples > 0 && acceptance_rate < 0.5 {
        warnings.push(format!(
            "acceptance rate {acceptance_rate:.3} below 0.5: reduce the step size"
        ));
    }
    Ok(SamplerReport {
        samples,
        accepted,
        acceptance_rate,
        outside,
        histogram,
        reference: reference.to_vec(),
        sup_distance,
        warnings,
    })
}

/// Bin probabilities of a grid density over `bins` equal cells of `[-L, L]`,
/// integrating its piecewise-linear interpolant exactly. One-dimensional.
pub fn bin_masses(grid: &DensityGrid, h: &DensityVector, bins: usize) -> Result<Vec<f64>> {
    if grid.dim() != 1 {
        return Err(Error::invalid("grid", "binning is one-dimensional"));
    }
    grid.check_len(h)?;
    if bins == 0 {
        return Err(Error::invalid("bins", "must be at least 1"));
    }
    let x = grid.axis();
    let l = grid.halfwidth();
    let width = 2.0 * l / bins as f64;
    let mut out = vec![0.0; bins];
    // integral of the linear piece on [a, b] within cell k
    for k in 0..x.len() - 1 {
        let (x0, x1, y0, y1) = (x[k], x[k + 1], h[k], h[k + 1]);
        let slope = (y1 - y0) / (x1 - x0);
        let first = (((x0 + l) / width).floor() as usize).min(bins - 1);
        let last = (((x1 + l) / width).ceil() as usize).min(bins);
        for (b, slot) in out.iter_mut().enumerate().take(last).skip(first) {
            let a = x0.max(-l + b as f64 * width);
            let c = x1.min(-l + (b + 1) as f64 * width);
            if c > a {
                let ya = y0 + slope * (a - x0);
                let yc = y0 + slope * (c - x0);
                *slot += 0.5 * (ya + yc) * (c - a);
            }
        }
    }
    let total: f64 = out.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::invalid("h", "has no positive mass to bin"));
    }
    Ok(out.into_iter().map(|v| v / total).collect())
}
