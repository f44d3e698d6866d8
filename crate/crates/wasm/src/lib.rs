//! Browser bindings: spectrum versus integration time, density iteration
//! and phase-space trajectories for the one-dimensional anharmonic model
//! `U(q) = a q²/2 + b q⁴/4` with standard Gaussian momentum, on a box
//! just wide enough to hold the target.
//!
//! Every function returns a flat `Float64Array`; layouts are documented per
//! function. Errors surface as JS exceptions carrying the message.

use hmc_transfer::distributions::ModelPair;
use hmc_transfer::dynamics::{total_energy, FlowMethod, FlowSpec, PhaseState, Propagator};
use hmc_transfer::operator::{
    assemble_with, build_grid, Assembly, DensityGrid, Direction, TransferMatrix,
};
use hmc_transfer::quadrature::Stencil;
use hmc_transfer::spectral::{assemble_kernel, eigen_spectrum};
use wasm_bindgen::prelude::*;

/// Box edge where `U(L) = 30`, so `f(±L) ≈ 1e-13`; capped at 8.
fn halfwidth(a: f64, b: f64) -> f64 {
    let l2 = if b > 0.0 {
        (-a + (a * a + 4.0 * b * 30.0).sqrt()) / b
    } else {
        60.0 / a
    };
    l2.sqrt().min(8.0)
}
const MOMENTUM_NODES: usize = 48;

fn js(e: hmc_transfer::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn model(a: f64, b: f64) -> Result<ModelPair, JsError> {
    ModelPair::anharmonic(a, b, halfwidth(a, b)).map_err(js)
}

fn spec_for(model: &ModelPair, t: f64) -> Result<FlowSpec, JsError> {
    if model.is_gaussian() {
        FlowSpec::exact(t).map_err(js)
    } else {
        FlowSpec::leapfrog_default(model, t).map_err(js)
    }
}

fn operator(model: &ModelPair, grid: &DensityGrid, t: f64) -> Result<TransferMatrix, JsError> {
    model.check_regime(t).map_err(js)?;
    let spec = spec_for(model, t)?;
    if spec.method == FlowMethod::ExactGaussian {
        assemble_kernel(grid, model, &spec)
            .and_then(|k| k.to_transfer(grid))
            .map_err(js)
    } else {
        assemble_with(
            grid,
            model,
            &spec,
            MOMENTUM_NODES,
            Stencil::default(),
            Direction::Forward,
            Assembly::Deposit,
        )
        .map_err(js)
    }
}

/// Half-width of the position box used for `(a, b)`.
#[wasm_bindgen]
pub fn box_halfwidth(a: f64, b: f64) -> f64 {
    halfwidth(a, b)
}

/// Largest admissible integration time, `π/2 / √(Λ_U Λ_V)`.
#[wasm_bindgen]
pub fn max_time(a: f64, b: f64) -> Result<f64, JsError> {
    Ok(std::f64::consts::FRAC_PI_2 / model(a, b)?.frequency_bound())
}

/// Leading `k` eigenvalues of the discretized operator at each of `times`.
/// Layout: row-major `times.len() × k`; times outside the regime give NaN.
#[wasm_bindgen]
pub fn spectrum_sweep(
    a: f64,
    b: f64,
    times: &[f64],
    n: usize,
    k: usize,
) -> Result<Vec<f64>, JsError> {
    let model = model(a, b)?;
    let grid = build_grid(&model, n).map_err(js)?;
    let mut out = Vec::with_capacity(times.len() * k);
    for &t in times {
        match operator(&model, &grid, t) {
            Ok(op) => {
                let report = eigen_spectrum(&op, &grid, k).map_err(js)?;
                out.extend((0..k).map(|i| report.eigenvalues.get(i).copied().unwrap_or(f64::NAN)));
            }
            Err(_) => out.extend(std::iter::repeat_n(f64::NAN, k)),
        }
    }
    Ok(out)
}

/// Iterates a Gaussian bump at `center` under the operator.
/// Layout: `[q (n), f (n), h₀ (n), h₁ (n), …, h_steps (n)]` where `f` is
/// the target density normalized to unit mass.
#[wasm_bindgen]
pub fn iterate_density(
    a: f64,
    b: f64,
    t: f64,
    n: usize,
    steps: usize,
    center: f64,
) -> Result<Vec<f64>, JsError> {
    let model = model(a, b)?;
    let grid = build_grid(&model, n).map_err(js)?;
    let op = operator(&model, &grid, t)?;
    let f = grid.target();
    let z = grid.mass(f);
    let mut h = bump(&grid, center);
    let mass = grid.mass(&h);
    h /= mass;
    let mut out = Vec::with_capacity(n * (steps + 3));
    out.extend_from_slice(grid.axis());
    out.extend(f.iter().map(|v| v / z));
    out.extend(h.iter());
    for _ in 0..steps {
        h = op.apply(&h);
        out.extend(h.iter());
    }
    Ok(out)
}

fn bump(grid: &DensityGrid, center: f64) -> hmc_transfer::operator::DensityVector {
    let axis = grid.axis();
    hmc_transfer::operator::DensityVector::from_fn(grid.len(), |i, _| {
        (-2.0 * (axis[i] - center).powi(2)).exp()
    })
}

/// Phase trajectory from `(q0, p0)` over total time `t` in `points` segments.
/// Layout: `points + 1` rows of `[s, q, p, H]`.
#[wasm_bindgen]
pub fn trajectory(
    a: f64,
    b: f64,
    q0: f64,
    p0: f64,
    t: f64,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    let model = model(a, b)?;
    let points = points.max(1);
    let dt = t / points as f64;
    let spec = spec_for(&model, dt)?;
    let prop = Propagator::new(&model, &spec).map_err(js)?;
    let mut state = PhaseState::from_slices(&[q0], &[p0]);
    let mut out = Vec::with_capacity(4 * (points + 1));
    for k in 0..=points {
        if k > 0 {
            state = prop.forward(&state);
        }
        out.extend([
            k as f64 * dt,
            state.q[0],
            state.p[0],
            total_energy(&state, &model),
        ]);
    }
    Ok(out)
}
