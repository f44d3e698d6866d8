use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::grid::{DensityGrid, DensityVector};
use crate::distributions::ModelPair;
use crate::dynamics::{FlowSpec, PhaseState, Propagator};
use crate::error::{Error, Result};
use crate::parallel::map_rows;
use crate::quadrature::{for_each_multi_index, MomentumQuadrature, Stencil};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assembly {
    /// Momentum quadrature with interpolated deposit of `h(Q)`.
    Deposit,
    /// Same quadrature acting on the likelihood `h/f`.
    Likelihood,
    /// Nyström discretization of the kernel `K(q, Q)`.
    Kernel,
    /// Product of two assembled operators.
    Product,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Adjoint,
    Symmetrized,
}

/// Discretized `𝒯`: `(𝒯h)(q_i) ≈ Σ_j T_ij h_j`.
#[derive(Clone, Debug)]
pub struct TransferMatrix {
    entries: DMatrix<f64>,
    pub assembly: Assembly,
    pub direction: Direction,
    pub spec: FlowSpec,
    pub model: String,
    pub quadrature: String,
    /// f-weighted probability carried outside the box by the flow.
    pub leaked_mass: f64,
    pub warnings: Vec<String>,
    grid: (usize, usize, u64),
}

/// Leaked f-weighted probability above which assembly warns.
pub const LEAK_WARNING: f64 = 1e-3;

impl TransferMatrix {
    pub(crate) fn from_parts(
        entries: DMatrix<f64>,
        assembly: Assembly,
        direction: Direction,
        spec: FlowSpec,
        model: String,
        quadrature: String,
        grid: &DensityGrid,
    ) -> Self {
        TransferMatrix {
            entries,
            assembly,
            direction,
            spec,
            model,
            quadrature,
            leaked_mass: 0.0,
            warnings: Vec::new(),
            grid: grid.signature(),
        }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn apply(&self, h: &DensityVector) -> DensityVector {
        &self.entries * h
    }

    pub fn check_grid(&self, grid: &DensityGrid) -> Result<()> {
        if self.grid != grid.signature() {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Writes the documented binary layout: the 8 magic bytes `HMCTOP01`,
    /// rows and cols as little-endian u64, then row-major little-endian f64.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        write_matrix(&self.entries, path)
    }
}

const MAGIC: &[u8; 8] = b"HMCTOP01";

pub fn write_matrix(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(m.nrows() as u64).to_le_bytes())?;
    out.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Config(format!(
            "{} is not an operator matrix file",
            path.display()
        )));
    }
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        input.read_exact(&mut word)?;
        data.push(f64::from_le_bytes(word));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Forward operator `𝒯h(q) = ∫ h(Q) ḡ(P) dp`.
pub fn assemble_transfer(
    grid: &DensityGrid,
    model: &ModelPair,
    spec: &FlowSpec,
    momentum_nodes: usize,
) -> Result<TransferMatrix> {
    assemble_with(
        grid,
        model,
        spec,
        momentum_nodes,
        Stencil::default(),
        Direction::Forward,
        Assembly::Deposit,
    )
}

/// Adjoint `𝒯†h(q) = ∫ h(Q) ḡ(P) dp` with `(Q, P) = H⁻¹(q, p)`.
pub fn assemble_adjoint(
    grid: &DensityGrid,
    model: &ModelPair,
    spec: &FlowSpec,
    momentum_nodes: usize,
) -> Result<TransferMatrix> {
    assemble_with(
        grid,
        model,
        spec,
        momentum_nodes,
        Stencil::default(),
        Direction::Adjoint,
        Assembly::Deposit,
    )
}

/// `𝒯h = f·∫ (h/f)∘H ḡ dp`, the likelihood form of the same operator.
pub fn assemble_likelihood_form(
    grid: &DensityGrid,
    model: &ModelPair,
    spec: &FlowSpec,
    momentum_nodes: usize,
) -> Result<TransferMatrix> {
    assemble_with(
        grid,
        model,
        spec,
        momentum_nodes,
        Stencil::default(),
        Direction::Forward,
        Assembly::Likelihood,
    )
}

/// General momentum-quadrature assembly.
///
/// For each node `q_i` and momentum node `p_k` (probability weight `W_k`),
/// flows to `(Q, P)` and deposits `W_k ḡ(P)/ḡ(p_k)` (deposit form) or
/// `f_i W_k / f_j` (likelihood form) onto the interpolation stencil at `Q`.
/// Flow images outside the box are dropped; the target mass they would
/// have carried, `∫ f(Q) ḡ(P) [Q ∉ box]`, is reported as leak.
pub fn assemble_with(
    grid: &DensityGrid,
    model: &ModelPair,
    spec: &FlowSpec,
    momentum_nodes: usize,
    stencil: Stencil,
    direction: Direction,
    assembly: Assembly,
) -> Result<TransferMatrix> {
    if grid.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: model.dim(),
        });
    }
    if !matches!(assembly, Assembly::Deposit | Assembly::Likelihood)
        || direction == Direction::Symmetrized
    {
        return Err(Error::invalid(
            "assembly",
            "only deposit or likelihood, forward or adjoint",
        ));
    }
    model.check_regime(spec.time)?;
    let prop = Propagator::new(model, spec)?;
    let quad = MomentumQuadrature::for_density(&model.auxiliary, momentum_nodes)?;
    let log_g: Vec<f64> = quad.nodes.iter().map(|p| model.auxiliary.eval(p)).collect();
    let n = grid.len();
    let d = grid.dim();
    let na = grid.n_per_axis();
    let width = stencil.width();
    let f = grid.target();

    let (entries, leaks) = map_rows(n, n, |i, row| {
        let q = grid.node(i);
        let mut leak = 0.0;
        let mut bases = vec![0usize; d];
        let mut coeffs = vec![[0.0f64; 6]; d];
        for (k, p) in quad.nodes.iter().enumerate() {
            let start = PhaseState::new(q.clone(), p.clone());
            let end = match direction {
                Direction::Forward => prop.forward(&start),
                _ => prop.backward(&start),
            };
            let weight = match assembly {
                Assembly::Deposit => {
                    quad.weights[k] * (log_g[k] - model.auxiliary.eval(&end.p)).exp()
                }
                _ => quad.weights[k] * f[i],
            };
            if !grid.contains(&end.q) {
                leak += quad.weights[k]
                    * (log_g[k] - model.auxiliary.eval(&end.p) - model.target.eval(&end.q)).exp();
                continue;
            }
            for (a, u) in grid.fractional_index(&end.q).into_iter().enumerate() {
                let (b, c) = stencil.weights(u, na);
                bases[a] = b;
                coeffs[a] = c;
            }
            for_each_multi_index(d, width, |offset| {
                let mut c = weight;
                let mut j = 0;
                for a in 0..d {
                    c *= coeffs[a][offset[a]];
                    j = j * na + bases[a] + offset[a];
                }
                if assembly == Assembly::Likelihood {
                    c = if f[j] > 0.0 { c / f[j] } else { 0.0 };
                }
                row[j] += c;
            });
        }
        Ok(leak)
    })?;

    let total = grid.mass(f);
    let leaked: f64 = (0..n).map(|i| grid.weights()[i] * leaks[i]).sum::<f64>() / total;
    let mut t = TransferMatrix::from_parts(
        entries,
        assembly,
        direction,
        *spec,
        model.describe(),
        quad.description.clone(),
        grid,
    );
    t.leaked_mass = leaked;
    if leaked > LEAK_WARNING {
        t.warnings.push(format!(
            "domain truncation: flow carries {leaked:.3e} of the target mass outside [-L, L]"
        ));
    }
    Ok(t)
}

/// `𝒮 = 𝒯†∘𝒯`.
pub fn symmetrize(t: &TransferMatrix, adjoint: &TransferMatrix) -> Result<TransferMatrix> {
    if t.grid != adjoint.grid || t.len() != adjoint.len() {
        return Err(Error::GridMismatch);
    }
    let mut s = t.clone();
    s.entries = adjoint.entries() * t.entries();
    s.assembly = Assembly::Product;
    s.direction = Direction::Symmetrized;
    s.warnings.extend(adjoint.warnings.iter().cloned());
    s.leaked_mass = t.leaked_mass.max(adjoint.leaked_mass);
    Ok(s)
}

/// `D T D⁻¹` on retained nodes with `D = diag(√(w/f))`: the matrix that is
/// symmetric exactly when `T` is self-adjoint in `⟨a,b⟩ = Σ w a b/f`.
pub fn similarity_form(
    t: &TransferMatrix,
    grid: &DensityGrid,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    t.check_grid(grid)?;
    let keep: Vec<usize> = (0..grid.len()).filter(|&i| grid.retained()[i]).collect();
    let scale: Vec<f64> = keep
        .iter()
        .map(|&i| (grid.weights()[i] / grid.target()[i]).sqrt())
        .collect();
    let r = keep.len();
    let m = DMatrix::from_fn(r, r, |a, b| {
        scale[a] * t.entries()[(keep[a], keep[b])] / scale[b]
    });
    Ok((m, keep))
}

/// `max|M − Mᵀ| / max|M|` for the similarity form `M`.
pub fn weighted_symmetry_residual(t: &TransferMatrix, grid: &DensityGrid) -> Result<f64> {
    let (m, _) = similarity_form(t, grid)?;
    let scale = m.amax();
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok((&m - m.transpose()).amax() / scale)
}

/// `max |⟨𝒯h,k⟩ − ⟨h,𝒯†k⟩| / (‖h‖‖k‖)` over the given pairs.
pub fn duality_residual(
    t: &TransferMatrix,
    adjoint: &TransferMatrix,
    grid: &DensityGrid,
    pairs: &[(DVector<f64>, DVector<f64>)],
) -> Result<f64> {
    t.check_grid(grid)?;
    adjoint.check_grid(grid)?;
    let mut worst = 0.0f64;
    for (h, k) in pairs {
        grid.check_len(h)?;
        grid.check_len(k)?;
        let lhs = grid.weighted_inner(&t.apply(h), k);
        let rhs = grid.weighted_inner(h, &adjoint.apply(k));
        let scale = grid.weighted_norm(h) * grid.weighted_norm(k);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    Ok(worst)
}
