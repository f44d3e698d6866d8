use nalgebra::DVector;
use rand::Rng;

use crate::distributions::{density_value, ModelPair};
use crate::error::{Error, Result};
use crate::quadrature::for_each_multi_index;

/// Values of a density (or signed test function) at the grid nodes.
pub type DensityVector = DVector<f64>;

/// Trapezoid tensor grid on `[-L, L]^d` carrying the target values `f_i`.
///
/// Nodes are flattened with the last axis fastest.
#[derive(Clone, Debug)]
pub struct DensityGrid {
    dim: usize,
    n_per_axis: usize,
    halfwidth: f64,
    spacing: f64,
    axis: Vec<f64>,
    weights: DVector<f64>,
    target: DVector<f64>,
    floor: f64,
    retained: Vec<bool>,
    warnings: Vec<String>,
}

/// Relative cutoff below which `f_i` leaves norms and inner products.
pub const FLOOR_FACTOR: f64 = 1e-12;

pub fn build_grid(model: &ModelPair, n_per_axis: usize) -> Result<DensityGrid> {
    if n_per_axis < 16 {
        return Err(Error::invalid(
            "n_per_axis",
            format!("must be at least 16, got {n_per_axis}"),
        ));
    }
    let d = model.dim();
    let total = n_per_axis
        .checked_pow(d as u32)
        .filter(|&n| n <= 100_000)
        .ok_or_else(|| {
            Error::invalid("n_per_axis", format!("{n_per_axis}^{d} nodes exceeds 1e5"))
        })?;
    let l = model.domain_halfwidth;
    let spacing = 2.0 * l / (n_per_axis - 1) as f64;
    let axis: Vec<f64> = (0..n_per_axis).map(|k| -l + spacing * k as f64).collect();

    let mut weights = Vec::with_capacity(total);
    let mut target = Vec::with_capacity(total);
    for_each_multi_index(d, n_per_axis, |idx| {
        let edge = idx
            .iter()
            .filter(|&&k| k == 0 || k == n_per_axis - 1)
            .count();
        weights.push(spacing.powi(d as i32) * 0.5f64.powi(edge as i32));
        let x = DVector::from_iterator(d, idx.iter().map(|&k| axis[k]));
        target.push(density_value(&model.target, &x));
    });
    let target = DVector::from_vec(target);
    let floor = FLOOR_FACTOR * target.max();
    let retained = target.iter().map(|&f| f > 0.0 && f >= floor).collect();

    let mut grid = DensityGrid {
        dim: d,
        n_per_axis,
        halfwidth: l,
        spacing,
        axis,
        weights: DVector::from_vec(weights),
        target,
        floor,
        retained,
        warnings: Vec::new(),
    };
    if let Some(reference) = refined_target_mass(model, n_per_axis) {
        let coarse = grid.mass(&grid.target);
        let rel = (coarse - reference).abs() / reference;
        if rel > 1e-3 {
            grid.warnings.push(format!(
                "grid too coarse: integral of f is {coarse:.6e}, refined reference {reference:.6e} (relative {rel:.2e})"
            ));
        }
    }
    let dropped = grid.dropped_mass();
    if dropped > 0.0 {
        grid.warnings
            .push(format!("nodes below the f floor carry mass {dropped:.3e}"));
    }
    Ok(grid)
}

/// `∫f` over the box on a 4× refined trapezoid grid, when affordable.
fn refined_target_mass(model: &ModelPair, n: usize) -> Option<f64> {
    let d = model.dim();
    let fine = 4 * (n - 1) + 1;
    fine.checked_pow(d as u32).filter(|&t| t <= 2_000_000)?;
    let l = model.domain_halfwidth;
    let h = 2.0 * l / (fine - 1) as f64;
    let mut sum = 0.0;
    for_each_multi_index(d, fine, |idx| {
        let edge = idx.iter().filter(|&&k| k == 0 || k == fine - 1).count();
        let x = DVector::from_iterator(d, idx.iter().map(|&k| -l + h * k as f64));
        sum += 0.5f64.powi(edge as i32) * density_value(&model.target, &x);
    });
    Some(sum * h.powi(d as i32))
}

impl DensityGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn n_per_axis(&self) -> usize {
        self.n_per_axis
    }

    pub fn halfwidth(&self) -> f64 {
        self.halfwidth
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// `f_i`, unnormalized.
    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn retained(&self) -> &[bool] {
        &self.retained
    }

    pub fn retained_count(&self) -> usize {
        self.retained.iter().filter(|&&r| r).count()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Position of node `i`.
    pub fn node(&self, i: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.dim,
            self.multi_index(i).into_iter().map(|k| self.axis[k]),
        )
    }

    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            idx[a] = i % self.n_per_axis;
            i /= self.n_per_axis;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &k| acc * self.n_per_axis + k)
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter().all(|v| v.abs() <= self.halfwidth)
    }

    /// Fractional grid coordinate of `x` along each axis.
    pub fn fractional_index(&self, x: &DVector<f64>) -> Vec<f64> {
        x.iter()
            .map(|v| (v + self.halfwidth) / self.spacing)
            .collect()
    }

    /// `Σ_i w_i h_i` over all nodes.
    pub fn mass(&self, h: &DensityVector) -> f64 {
        self.weights.dot(h)
    }

    /// `⟨a, b⟩ = Σ w_i a_i b_i / f_i` over retained nodes.
    pub fn weighted_inner(&self, a: &DensityVector, b: &DensityVector) -> f64 {
        let mut s = 0.0;
        for i in 0..self.len() {
            if self.retained[i] {
                s += self.weights[i] * a[i] * (b[i] / self.target[i]);
            }
        }
        s
    }

    pub fn weighted_norm(&self, a: &DensityVector) -> f64 {
        self.weighted_inner(a, a).max(0.0).sqrt()
    }

    /// Mass of `f` at dropped nodes.
    pub fn dropped_mass(&self) -> f64 {
        (0..self.len())
            .filter(|&i| !self.retained[i])
            .map(|i| self.weights[i] * self.target[i])
            .sum()
    }

    pub(crate) fn check_len(&self, h: &DensityVector) -> Result<()> {
        if h.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: h.len(),
            });
        }
        Ok(())
    }

    /// Identity used to detect operators built on different grids.
    pub(crate) fn signature(&self) -> (usize, usize, u64) {
        (self.dim, self.n_per_axis, self.halfwidth.to_bits())
    }

    /// Mean and standard deviation of `f` along each axis.
    fn target_moments(&self) -> Vec<(f64, f64)> {
        let total = self.mass(&self.target);
        (0..self.dim)
            .map(|a| {
                let (mut m1, mut m2) = (0.0, 0.0);
                for i in 0..self.len() {
                    let x = self.axis[self.multi_index(i)[a]];
                    let wf = self.weights[i] * self.target[i] / total;
                    m1 += wf * x;
                    m2 += wf * x * x;
                }
                (m1, (m2 - m1 * m1).max(0.0).sqrt())
            })
            .collect()
    }

    /// A smooth random test vector: a mixture of one to four Gaussian bumps in
    /// the bulk of `f`, times `√f` so that `h/√f` stays bounded.
    ///
    /// Positive when `signed` is false.
    pub fn random_smooth<R: Rng + ?Sized>(&self, rng: &mut R, signed: bool) -> DensityVector {
        let moments = self.target_moments();
        let bumps = rng.random_range(1..=4);
        let mut params = Vec::with_capacity(bumps);
        for _ in 0..bumps {
            let amp = if signed {
                rng.random_range(-1.0..1.0)
            } else {
                rng.random_range(0.1..1.0)
            };
            let centers_widths: Vec<(f64, f64)> = moments
                .iter()
                .map(|&(m, s)| {
                    let c = m + s * rng.random_range(-2.5..2.5);
                    let w = (s * rng.random_range(0.5..1.5)).max(0.4);
                    (c, w)
                })
                .collect();
            params.push((amp, centers_widths));
        }
        DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|i| {
                let idx = self.multi_index(i);
                let mix: f64 = params
                    .iter()
                    .map(|(amp, cw)| {
                        let e: f64 = cw
                            .iter()
                            .zip(&idx)
                            .map(|(&(c, w), &k)| {
                                let z = (self.axis[k] - c) / w;
                                -0.5 * z * z
                            })
                            .sum();
                        amp * e.exp()
                    })
                    .sum();
                mix * self.target[i].sqrt()
            }),
        )
    }

    /// `h` with its `f`-component removed, so that `mass(h) = 0`.
    pub fn remove_mass(&self, h: &DensityVector) -> DensityVector {
        let alpha = self.mass(h) / self.mass(&self.target);
        h - &self.target * alpha
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> DensityGrid {
        build_grid(&ModelPair::standard_gaussian(1, 8.0).unwrap(), n).unwrap()
    }

    #[test]
    fn gaussian_integral() {
        let g = grid(401);
        let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
        assert!((g.mass(g.target()) / sqrt_2pi - 1.0).abs() < 1e-8);
        assert!((g.weighted_inner(g.target(), g.target()) / sqrt_2pi - 1.0).abs() < 1e-8);
        assert!(g.warnings().iter().all(|w| !w.contains("coarse")));
    }

    #[test]
    fn minimal_grid_accepted_smaller_rejected() {
        assert_eq!(grid(16).len(), 16);
        assert!(build_grid(&ModelPair::standard_gaussian(1, 8.0).unwrap(), 15).is_err());
    }

    #[test]
    fn minimal_grid_warns_when_coarse() {
        let m = ModelPair::standard_gaussian(1, 40.0).unwrap();
        let g = build_grid(&m, 16).unwrap();
        assert!(g.warnings().iter().any(|w| w.contains("coarse")));
    }

    #[test]
    fn tensor_grid_in_two_dimensions() {
        let g = build_grid(&ModelPair::standard_gaussian(2, 6.0).unwrap(), 64).unwrap();
        assert_eq!(g.len(), 4096);
        let h = g.spacing();
        assert!((g.weights()[0] - h * h / 4.0).abs() < 1e-15);
        assert!((g.weights()[1] - h * h / 2.0).abs() < 1e-15);
        assert!((g.weights()[65] - h * h).abs() < 1e-15);
        assert_eq!(g.flat_index(&g.multi_index(1234)), 1234);
        assert!((g.mass(g.target()) / (2.0 * std::f64::consts::PI) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn inner_with_f_is_mass_and_cauchy_schwarz() {
        let g = grid(401);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = g.random_smooth(&mut rng, true);
            let b = g.random_smooth(&mut rng, true);
            assert!((g.weighted_inner(&a, g.target()) - g.mass(&a)).abs() < 1e-10);
            assert!(
                g.weighted_inner(&a, &b).abs() <= g.weighted_norm(&a) * g.weighted_norm(&b) + 1e-15
            );
        }
    }

    #[test]
    fn positive_random_densities() {
        let g = grid(101);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = g.random_smooth(&mut rng, false);
        assert!(h.iter().all(|&v| v >= 0.0));
        assert!(g.mass(&h) > 0.0);
        assert!(g.mass(&g.remove_mass(&h)).abs() < 1e-14);
    }

    #[test]
    fn floor_drops_far_tails() {
        let g = build_grid(&ModelPair::standard_gaussian(1, 10.0).unwrap(), 201).unwrap();
        assert!(g.retained_count() < g.len());
        assert!(g.dropped_mass() < 1e-10);
    }
}
