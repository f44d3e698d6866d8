use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::ModelPair;
use crate::dynamics::{FlowSpec, PhaseState, Propagator};
use crate::error::{Error, Result};
use crate::operator::{Assembly, DensityGrid, Direction, TransferMatrix};
use crate::parallel::map_rows;
use crate::quadrature::MomentumQuadrature;
use crate::tangent::TangentBlocks;

/// `K_ij ≈ K(q_i, q_j) = f(q_j) ḡ(P) 𝒟_q`, where `p` is the momentum that
/// carries `q_i` to `q_j`.
#[derive(Clone, Debug)]
pub struct KernelField {
    values: DMatrix<f64>,
    /// `‖K‖₂²` by position-space double quadrature.
    pub hs_norm_sq: f64,
    /// `‖K‖₂²` by the momentum-space formula `∬ ḡ(p) ḡ(P) 𝒟_q dp dq`.
    pub momentum_hs_norm_sq: f64,
    pub direction: Direction,
    pub spec: FlowSpec,
    pub model: String,
    /// Largest Newton iteration count over all inversions.
    pub newton_iterations: usize,
    grid: (usize, usize, u64),
}

/// `V(p)` above which `ḡ(p) < e^{-92}` and the kernel entry is taken as zero.
const NEGLIGIBLE_ENERGY: f64 = 92.0;
const MOMENTUM_HS_NODES: usize = 129;

impl KernelField {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// The operator `T_ij = w_j K_ij / f_j`, so that `(𝒯h)(q_i) = ⟨h, 𝒦_{q_i}⟩`.
    pub fn to_transfer(&self, grid: &DensityGrid) -> Result<TransferMatrix> {
        if self.grid != grid_signature(grid) {
            return Err(Error::GridMismatch);
        }
        let w = grid.weights();
        let f = grid.target();
        let n = grid.len();
        let entries = DMatrix::from_fn(n, n, |i, j| {
            if f[j] > 0.0 {
                w[j] * self.values[(i, j)] / f[j]
            } else {
                0.0
            }
        });
        Ok(TransferMatrix::from_parts(
            entries,
            Assembly::Kernel,
            self.direction,
            self.spec,
            self.model.clone(),
            "nystrom on the position grid".into(),
            grid,
        ))
    }
}

fn grid_signature(grid: &DensityGrid) -> (usize, usize, u64) {
    (grid.dim(), grid.n_per_axis(), grid.halfwidth().to_bits())
}

pub fn assemble_kernel(
    grid: &DensityGrid,
    model: &ModelPair,
    spec: &FlowSpec,
) -> Result<KernelField> {
    assemble_kernel_with(grid, model, spec, Direction::Forward)
}

/// Tabulates the kernel on the grid. `Direction::Adjoint` uses `H⁻¹`.
///
/// The momentum reaching each `q_j` from `q_i` is found by Newton on
/// `p ↦ Q(q_i, p)` with the tangent block `∂Q/∂p` as Jacobian, which is
/// invertible in the regime `t·√(Λ_U Λ_V) < π/2`.
pub fn assemble_kernel_with(
    grid: &DensityGrid,
    model: &ModelPair,
    spec: &FlowSpec,
    direction: Direction,
) -> Result<KernelField> {
    if grid.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: model.dim(),
        });
    }
    if direction == Direction::Symmetrized {
        return Err(Error::invalid("direction", "kernel is forward or adjoint"));
    }
    model.check_regime(spec.time)?;
    let prop = Propagator::new(model, spec)?;
    let log_z = model.auxiliary.log_normalizer();
    let n = grid.len();
    let d = grid.dim();
    let f = grid.target();
    let reverse = direction == Direction::Adjoint;

    let (values, iterations) = map_rows(n, n, |i, row| {
        let q = grid.node(i);
        let mut worst = 0;
        let start = Newton::linearize(&prop, &q, &DVector::zeros(d), reverse)?;
        let mut last: Option<Newton> = None;
        for (j, slot) in row.iter_mut().enumerate() {
            let target = grid.node(j);
            let seed = match &last {
                Some(prev) if j % grid.n_per_axis() != 0 => prev,
                _ => &start,
            };
            match seed.solve(&prop, &q, &target, reverse, model) {
                Ok(Some((sol, its))) => {
                    worst = worst.max(its);
                    let dq = 1.0 / sol.dq_dp_det(i)?;
                    *slot = f[j] * (-model.auxiliary.eval(&sol.end.p) - log_z).exp() * dq;
                    last = Some(sol);
                }
                Ok(None) => {
                    *slot = 0.0;
                    last = None;
                }
                Err(reason) => return Err(Error::Inversion { node: i, reason }),
            }
        }
        Ok(worst)
    })?;

    let hs = position_hs(&values, grid);
    let momentum_hs = momentum_hs(grid, model, &prop, reverse)?;
    Ok(KernelField {
        values,
        hs_norm_sq: hs,
        momentum_hs_norm_sq: momentum_hs,
        direction,
        spec: *spec,
        model: model.describe(),
        newton_iterations: iterations.into_iter().max().unwrap_or(0),
        grid: grid_signature(grid),
    })
}

/// A flow evaluation with its tangent, as a Newton iterate.
struct Newton {
    p: DVector<f64>,
    end: PhaseState,
    blocks: TangentBlocks,
}

impl Newton {
    fn linearize(
        prop: &Propagator,
        q: &DVector<f64>,
        p: &DVector<f64>,
        reverse: bool,
    ) -> Result<Self> {
        let state = PhaseState::new(q.clone(), p.clone());
        let (end, blocks, _) = if reverse {
            prop.backward_with_tangent(&state)?
        } else {
            prop.forward_with_tangent(&state)?
        };
        Ok(Newton {
            p: p.clone(),
            end,
            blocks,
        })
    }

    fn dq_dp_det(&self, node: usize) -> Result<f64> {
        let det = self.blocks.dq_dp.determinant().abs();
        if det < 1e-14 {
            return Err(Error::Inversion {
                node,
                reason: format!("dQ/dp is singular (|det| = {det:e})"),
            });
        }
        Ok(det)
    }

    fn step(&self, target: &DVector<f64>) -> Option<DVector<f64>> {
        self.blocks
            .dq_dp
            .clone()
            .lu()
            .solve(&(target - &self.end.q))
    }

    /// Newton with backtracking from `self`. `Ok(None)` means the required
    /// momentum lies where `ḡ` is negligible.
    fn solve(
        &self,
        prop: &Propagator,
        q: &DVector<f64>,
        target: &DVector<f64>,
        reverse: bool,
        model: &ModelPair,
    ) -> std::result::Result<Option<(Newton, usize)>, String> {
        let tol = 1e-12 * (1.0 + target.amax());
        let mut cur = Newton {
            p: self.p.clone(),
            end: self.end.clone(),
            blocks: self.blocks.clone(),
        };
        let mut residual = (target - &cur.end.q).amax();
        for it in 0..60 {
            if residual <= tol {
                return Ok(Some((cur, it)));
            }
            let delta = cur.step(target).ok_or("singular dQ/dp in Newton step")?;
            let mut scale = 1.0;
            loop {
                let p = &cur.p + &delta * scale;
                if model.auxiliary.eval(&p) > 2.0 * NEGLIGIBLE_ENERGY {
                    return Ok(None);
                }
                let next = Newton::linearize(prop, q, &p, reverse).map_err(|e| e.to_string())?;
                let r = (target - &next.end.q).amax();
                if r < residual || scale < 1e-6 {
                    cur = next;
                    residual = r;
                    break;
                }
                scale *= 0.5;
            }
        }
        if residual <= 1e3 * tol {
            return Ok(Some((cur, 60)));
        }
        if model.auxiliary.eval(&cur.p) > NEGLIGIBLE_ENERGY {
            return Ok(None);
        }
        Err(format!("Newton did not converge (residual {residual:e})"))
    }
}

fn position_hs(values: &DMatrix<f64>, grid: &DensityGrid) -> f64 {
    let w = grid.weights();
    let f = grid.target();
    let n = grid.len();
    let mut s = 0.0;
    for i in 0..n {
        if f[i] <= 0.0 {
            continue;
        }
        for j in 0..n {
            if f[j] <= 0.0 {
                continue;
            }
            let k = values[(i, j)];
            s += w[i] * w[j] * (k / f[j]) * (k / f[i]);
        }
    }
    s
}

fn momentum_hs(
    grid: &DensityGrid,
    model: &ModelPair,
    prop: &Propagator,
    reverse: bool,
) -> Result<f64> {
    let quad = MomentumQuadrature::for_density(&model.auxiliary, MOMENTUM_HS_NODES)?;
    let log_z = model.auxiliary.log_normalizer();
    let (_, rows) = map_rows(grid.len(), 0, |i, _| {
        let q = grid.node(i);
        let mut s = 0.0;
        for (p, wk) in quad.nodes.iter().zip(&quad.weights) {
            let sol = Newton::linearize(prop, &q, p, reverse)?;
            if !grid.contains(&sol.end.q) {
                continue;
            }
            let g = (-model.auxiliary.eval(&sol.end.p) - log_z).exp();
            s += wk * g / sol.dq_dp_det(i)?;
        }
        Ok(grid.weights()[i] * s)
    })?;
    Ok(rows.iter().sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HsConsistency {
    /// Routes agree within `1e-4`.
    Consistent,
    /// Between `1e-4` and `1e-3`.
    Marginal,
    Inconsistent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HsNorm {
    pub position: f64,
    pub momentum: f64,
    pub relative_gap: f64,
    pub consistency: HsConsistency,
}

impl HsNorm {
    /// The position-space value.
    pub fn value(&self) -> f64 {
        self.position
    }
}

/// `‖K‖₂² = ∬ K²/(f⊗f)`, with the momentum-space cross-check.
pub fn hs_norm(field: &KernelField, grid: &DensityGrid) -> Result<HsNorm> {
    if field.grid != grid_signature(grid) {
        return Err(Error::GridMismatch);
    }
    let gap = (field.hs_norm_sq - field.momentum_hs_norm_sq).abs()
        / field.hs_norm_sq.abs().max(f64::MIN_POSITIVE);
    let consistency = if gap <= 1e-4 {
        HsConsistency::Consistent
    } else if gap <= 1e-3 {
        HsConsistency::Marginal
    } else {
        HsConsistency::Inconsistent
    };
    Ok(HsNorm {
        position: field.hs_norm_sq,
        momentum: field.momentum_hs_norm_sq,
        relative_gap: gap,
        consistency,
    })
}
