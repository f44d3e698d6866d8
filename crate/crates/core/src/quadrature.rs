//! Momentum quadrature and the local interpolation stencils used to deposit
//! `h(Q)` back onto the position grid.

use nalgebra::{DMatrix, DVector};

use crate::distributions::{Family, Potential};
use crate::error::{Error, Result};

/// Gauss–Hermite rule for the weight `exp(-x²/2)`.
///
/// Nodes from the Golub–Welsch eigenproblem; weights from the Christoffel
/// function `1/Σ φ_j(x)²` of the orthonormal Hermite polynomials, accurate in
/// relative terms out to the tails. Weights sum to one: the rule integrates
/// against the standard normal.
pub fn gauss_hermite(m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if m == 0 {
        return Err(Error::invalid("momentum_nodes", "must be at least 1"));
    }
    let mut jacobi = DMatrix::zeros(m, m);
    for k in 1..m {
        let b = (k as f64).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let mut x: Vec<f64> = jacobi
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    x.sort_by(f64::total_cmp);
    for k in 0..m / 2 {
        let v = 0.5 * (x[m - 1 - k] - x[k]);
        x[k] = -v;
        x[m - 1 - k] = v;
    }
    if m % 2 == 1 {
        x[m / 2] = 0.0;
    }
    let log_w: Vec<f64> = x.iter().map(|&xk| -log_christoffel_sum(xk, m)).collect();
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok((x, w.into_iter().map(|v| v / total).collect()))
}

/// `log Σ_{j<m} φ_j(x)²`, rescaling the recurrence to avoid overflow.
fn log_christoffel_sum(x: f64, m: usize) -> f64 {
    let (mut prev, mut cur) = (0.0f64, 1.0f64);
    let mut log_scale = 0.0f64;
    let mut sum = 1.0f64;
    for j in 0..m - 1 {
        let next = (x * cur - (j as f64).sqrt() * prev) / ((j + 1) as f64).sqrt();
        prev = cur;
        cur = next;
        sum += cur * cur;
        if sum > 1e200 {
            prev *= 1e-100;
            cur *= 1e-100;
            sum *= 1e-200;
            log_scale += 200.0 * std::f64::consts::LN_10;
        }
    }
    sum.ln() + log_scale
}

/// Nodes and probability weights for integrating against the normalized ḡ.
#[derive(Clone, Debug)]
pub struct MomentumQuadrature {
    pub nodes: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
    pub description: String,
}

impl MomentumQuadrature {
    /// Gauss–Hermite matched to a Gaussian ḡ, otherwise a trapezoid rule on
    /// `[-L_p, L_p]^d` holding all but about `1e-12` of ḡ's mass.
    pub fn for_density(aux: &Potential, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid("momentum_nodes", "must be at least 2"));
        }
        let d = aux.dim();
        let points = m
            .checked_pow(d as u32)
            .filter(|&n| n <= 4_000_000)
            .ok_or_else(|| {
                Error::invalid(
                    "momentum_nodes",
                    format!("{m}^{d} quadrature points is too many"),
                )
            })?;
        match aux.family() {
            Family::Gaussian { mean, precision } => {
                let (x, w) = gauss_hermite(m)?;
                let chol = precision
                    .clone()
                    .cholesky()
                    .ok_or(Error::NotPositiveDefinite {
                        eigenvalue: aux.lambda_lo(),
                    })?;
                // p = mean + L^{-T} z for precision = L Lᵀ
                let lt = chol.l().transpose();
                let mut nodes = Vec::with_capacity(points);
                let mut weights = Vec::with_capacity(points);
                for_each_multi_index(d, m, |idx| {
                    let z = DVector::from_iterator(d, idx.iter().map(|&k| x[k]));
                    let p = lt
                        .solve_upper_triangular(&z)
                        .expect("cholesky factor is invertible");
                    nodes.push(mean + p);
                    weights.push(idx.iter().map(|&k| w[k]).product());
                });
                Ok(MomentumQuadrature {
                    nodes,
                    weights,
                    description: format!("gauss-hermite m={m} per axis, {points} nodes"),
                })
            }
            Family::Anharmonic { .. } => {
                let lp = 8.0 / aux.lambda_lo().sqrt();
                let step = 2.0 * lp / (m - 1) as f64;
                let mut nodes = Vec::with_capacity(points);
                let mut weights = Vec::with_capacity(points);
                for_each_multi_index(d, m, |idx| {
                    let p = DVector::from_iterator(d, idx.iter().map(|&k| -lp + step * k as f64));
                    let edge = idx.iter().filter(|&&k| k == 0 || k == m - 1).count();
                    weights.push(0.5f64.powi(edge as i32) * (-aux.eval(&p)).exp());
                    nodes.push(p);
                });
                let total: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= total);
                Ok(MomentumQuadrature {
                    nodes,
                    weights,
                    description: format!(
                        "trapezoid on [-{lp:.4}, {lp:.4}] m={m} per axis, {points} nodes"
                    ),
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Visits every index in `{0..m}^d`, last axis fastest.
pub(crate) fn for_each_multi_index(d: usize, m: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; d];
    loop {
        f(&idx);
        let mut axis = d;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < m {
                break;
            }
            idx[axis] = 0;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    /// Piecewise linear, 2 nodes. The only positivity-preserving choice.
    Linear,
    /// Local cubic Lagrange, 4 nodes.
    Lagrange4,
    /// Local quintic Lagrange, 6 nodes.
    #[default]
    Lagrange6,
}

impl Stencil {
    pub fn width(self) -> usize {
        match self {
            Stencil::Linear => 2,
            Stencil::Lagrange4 => 4,
            Stencil::Lagrange6 => 6,
        }
    }

    /// Interpolation weights at fractional grid coordinate `u ∈ [0, n-1]`.
    ///
    /// Returns the first node index and `width()` weights; the stencil is
    /// shifted inwards near the boundary so it always stays on the grid.
    pub fn weights(self, u: f64, n: usize) -> (usize, [f64; 6]) {
        let width = self.width();
        let half = width / 2;
        let base =
            (u.floor() as isize - (half as isize - 1)).clamp(0, (n - width) as isize) as usize;
        let mut out = [0.0; 6];
        let s = u - base as f64;
        for (a, slot) in out.iter_mut().enumerate().take(width) {
            let mut c = 1.0;
            for b in 0..width {
                if b != a {
                    c *= (s - b as f64) / (a as f64 - b as f64);
                }
            }
            *slot = c;
        }
        (base, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{anharmonic_potential, gaussian_potential, standard_gaussian};

    #[test]
    fn hermite_moments() {
        let (x, w) = gauss_hermite(20).unwrap();
        let moment = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert!((moment(0) - 1.0).abs() < 1e-14);
        assert!(moment(1).abs() < 1e-14);
        assert!((moment(2) - 1.0).abs() < 1e-13);
        assert!((moment(4) - 3.0).abs() < 1e-12);
        assert!((moment(8) - 105.0).abs() < 1e-9);
    }

    #[test]
    fn hermite_tail_weights_track_the_density() {
        let (x, w) = gauss_hermite(257).unwrap();
        // w_k / φ(x_k) stays of the order of the node spacing out to the tails
        for k in [0, 5, 128] {
            let ratio = w[k] / (-x[k] * x[k] / 2.0).exp() * (2.0 * std::f64::consts::PI).sqrt();
            assert!(ratio > 1e-3 && ratio < 2.0, "k={k} ratio={ratio}");
        }
    }

    #[test]
    fn hermite_large_rule_integrates_gaussian_test_function() {
        let (x, w) = gauss_hermite(257).unwrap();
        // E[cos X] = exp(-1/2)
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.cos()).sum();
        assert!((s - (-0.5f64).exp()).abs() < 1e-13);
        assert!(x.windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn gaussian_quadrature_follows_precision() {
        let prec = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = gaussian_potential(DVector::from_vec(vec![0.3, -0.2]), prec.clone()).unwrap();
        let q = MomentumQuadrature::for_density(&g, 12).unwrap();
        assert_eq!(q.len(), 144);
        let mut mean = DVector::zeros(2);
        let mut cov = DMatrix::zeros(2, 2);
        for (p, w) in q.nodes.iter().zip(&q.weights) {
            mean += p * *w;
        }
        for (p, w) in q.nodes.iter().zip(&q.weights) {
            let c = p - &mean;
            cov += &c * c.transpose() * *w;
        }
        assert!((mean - DVector::from_vec(vec![0.3, -0.2])).amax() < 1e-13);
        assert!((cov - prec.try_inverse().unwrap()).amax() < 1e-12);
    }

    #[test]
    fn trapezoid_quadrature_for_anharmonic_momentum() {
        let g = anharmonic_potential(1.0, 1.0, 3.0).unwrap();
        let q = MomentumQuadrature::for_density(&g, 401).unwrap();
        let s: f64 = q.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
        let m2: f64 = q
            .nodes
            .iter()
            .zip(&q.weights)
            .map(|(p, w)| w * p[0] * p[0])
            .sum();
        assert!(m2 > 0.3 && m2 < 1.0);
        let odd: f64 = q.nodes.iter().zip(&q.weights).map(|(p, w)| w * p[0]).sum();
        assert!(odd.abs() < 1e-14);
    }

    #[test]
    fn rejects_tiny_rules() {
        assert!(MomentumQuadrature::for_density(&standard_gaussian(1), 1).is_err());
        assert!(gauss_hermite(0).is_err());
    }

    #[test]
    fn stencils_reproduce_polynomials() {
        for stencil in [Stencil::Lagrange4, Stencil::Lagrange6] {
            let deg = stencil.width() as i32 - 1;
            let n = 20;
            for &u in &[0.0, 0.3, 5.5, 9.99, 18.7, 19.0] {
                let (base, w) = stencil.weights(u, n);
                assert!(base + stencil.width() <= n);
                let v: f64 = (0..stencil.width())
                    .map(|a| w[a] * ((base + a) as f64).powi(deg))
                    .sum();
                assert!(
                    (v - u.powi(deg)).abs() < 1e-8 * u.powi(deg).max(1.0),
                    "{stencil:?} u={u}"
                );
                let s: f64 = w.iter().sum();
                assert!((s - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn stencil_is_exact_at_nodes() {
        let (base, w) = Stencil::Lagrange6.weights(7.0, 20);
        for (a, &c) in w.iter().enumerate() {
            let expected = if base + a == 7 { 1.0 } else { 0.0 };
            assert!((c - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn multi_index_order() {
        let mut seen = Vec::new();
        for_each_multi_index(2, 3, |i| seen.push((i[0], i[1])));
        assert_eq!(seen.len(), 9);
        assert_eq!(seen[1], (0, 1));
        assert_eq!(seen[3], (1, 0));
    }
}
