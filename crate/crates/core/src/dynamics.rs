//! Hamiltonian flow `H_t: (q, p) ↦ (Q, P)` for `𝓗 = U(q) + V(p)`.
//!
//! Gaussian pairs have a closed-form linear flow. Everything else goes through
//! velocity Verlet, which is symplectic and reversible under momentum flip, so
//! volume preservation and `τ∘H⁻¹∘τ = H` hold for the discrete map itself.
//! No Metropolis correction is ever applied here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::ModelPair;
use crate::error::{Error, Result};
use crate::tangent::{block_exponential_at, RunningAverages, TangentBlocks};

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl PhaseState {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Self {
        assert_eq!(q.len(), p.len(), "position and momentum dimensions differ");
        PhaseState { q, p }
    }

    pub fn from_slices(q: &[f64], p: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(q), DVector::from_column_slice(p))
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }

    /// `τ(q, p) = (q, -p)`.
    pub fn flipped(&self) -> Self {
        PhaseState {
            q: self.q.clone(),
            p: -&self.p,
        }
    }

    /// Sup-norm distance in phase space.
    pub fn distance(&self, other: &PhaseState) -> f64 {
        (&self.q - &other.q).amax().max((&self.p - &other.p).amax())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMethod {
    ExactGaussian,
    Leapfrog,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub time: f64,
    pub steps: usize,
    pub method: FlowMethod,
}

impl FlowSpec {
    pub fn new(time: f64, steps: usize, method: FlowMethod) -> Result<Self> {
        if !(time > 0.0 && time.is_finite()) {
            return Err(Error::invalid(
                "time",
                format!("must be positive, got {time}"),
            ));
        }
        if steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        Ok(FlowSpec {
            time,
            steps,
            method,
        })
    }

    pub fn exact(time: f64) -> Result<Self> {
        Self::new(time, 1, FlowMethod::ExactGaussian)
    }

    pub fn leapfrog(time: f64, steps: usize) -> Result<Self> {
        Self::new(time, steps, FlowMethod::Leapfrog)
    }

    /// Leapfrog with `t/steps <= 0.01 min(1, 1/√Λ)`.
    pub fn leapfrog_default(model: &ModelPair, time: f64) -> Result<Self> {
        Self::leapfrog(time, default_steps(model, time))
    }

    pub fn step_size(&self) -> f64 {
        self.time / self.steps as f64
    }

    pub fn validate_for(&self, model: &ModelPair) -> Result<()> {
        if self.method == FlowMethod::ExactGaussian && !model.is_gaussian() {
            return Err(Error::ExactFlowUnavailable);
        }
        Ok(())
    }
}

pub fn default_steps(model: &ModelPair, time: f64) -> usize {
    let (_, hi) = model.concavity_bounds();
    let max_step = 0.01 * (1.0f64).min(1.0 / hi.sqrt());
    (time.abs() / max_step).ceil().max(1.0) as usize
}

/// `𝓗(q, p) = U(q) + V(p)`.
pub fn total_energy(state: &PhaseState, model: &ModelPair) -> f64 {
    model.target.eval(&state.q) + model.auxiliary.eval(&state.p)
}

pub fn flow(state: &PhaseState, model: &ModelPair, spec: &FlowSpec) -> Result<PhaseState> {
    Ok(Propagator::new(model, spec)?.forward(state))
}

/// `H_t⁻¹`, by running the same method backwards in time.
pub fn inverse_flow(state: &PhaseState, model: &ModelPair, spec: &FlowSpec) -> Result<PhaseState> {
    Ok(Propagator::new(model, spec)?.backward(state))
}

/// `max ‖τ(H⁻¹(τ s)) − H(s)‖∞` over the given states.
pub fn momentum_flip_conjugacy_residual(
    model: &ModelPair,
    spec: &FlowSpec,
    states: &[PhaseState],
) -> Result<f64> {
    if !model.auxiliary_even {
        return Err(Error::AuxiliaryNotEven);
    }
    let prop = Propagator::new(model, spec)?;
    Ok(states
        .iter()
        .map(|s| {
            let lhs = prop.backward(&s.flipped()).flipped();
            lhs.distance(&prop.forward(s))
        })
        .fold(0.0, f64::max))
}

/// Flow evaluator with per-(model, spec) setup done once.
///
/// The exact Gaussian flow is the affine map given by the block exponential
/// of the constant Hessians, cached here for both time directions.
#[derive(Clone, Debug)]
pub struct Propagator<'a> {
    model: &'a ModelPair,
    spec: FlowSpec,
    exact: Option<ExactGaussian>,
}

#[derive(Clone, Debug)]
struct ExactGaussian {
    mean_q: DVector<f64>,
    mean_p: DVector<f64>,
    forward: TangentBlocks,
    backward: TangentBlocks,
    averages: RunningAverages,
}

impl<'a> Propagator<'a> {
    pub fn new(model: &'a ModelPair, spec: &FlowSpec) -> Result<Self> {
        spec.validate_for(model)?;
        let exact = match spec.method {
            FlowMethod::Leapfrog => None,
            FlowMethod::ExactGaussian => {
                let (mq, pu) = model
                    .target
                    .gaussian_parts()
                    .ok_or(Error::ExactFlowUnavailable)?;
                let (mp, pv) = model
                    .auxiliary
                    .gaussian_parts()
                    .ok_or(Error::ExactFlowUnavailable)?;
                Some(ExactGaussian {
                    mean_q: mq.clone(),
                    mean_p: mp.clone(),
                    forward: block_exponential_at(pu, pv, spec.time)?,
                    backward: block_exponential_at(pu, pv, -spec.time)?,
                    averages: RunningAverages {
                        target_hessian: pu.clone(),
                        auxiliary_hessian: pv.clone(),
                        time: spec.time,
                    },
                })
            }
        };
        Ok(Propagator {
            model,
            spec: *spec,
            exact,
        })
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    pub fn model(&self) -> &ModelPair {
        self.model
    }

    pub fn forward(&self, state: &PhaseState) -> PhaseState {
        match &self.exact {
            Some(g) => g.apply(&g.forward, state),
            None => self.leapfrog(state, self.spec.step_size(), None),
        }
    }

    pub fn backward(&self, state: &PhaseState) -> PhaseState {
        match &self.exact {
            Some(g) => g.apply(&g.backward, state),
            None => self.leapfrog(state, -self.spec.step_size(), None),
        }
    }

    pub fn forward_with_tangent(
        &self,
        state: &PhaseState,
    ) -> Result<(PhaseState, TangentBlocks, RunningAverages)> {
        Ok(self.with_tangent(state, 1.0))
    }

    /// Derivative of `H⁻¹`; the averages carry time `-t`.
    pub fn backward_with_tangent(
        &self,
        state: &PhaseState,
    ) -> Result<(PhaseState, TangentBlocks, RunningAverages)> {
        Ok(self.with_tangent(state, -1.0))
    }

    fn with_tangent(
        &self,
        state: &PhaseState,
        sign: f64,
    ) -> (PhaseState, TangentBlocks, RunningAverages) {
        match &self.exact {
            Some(g) => {
                let blocks = if sign > 0.0 { &g.forward } else { &g.backward };
                let mut averages = g.averages.clone();
                averages.time *= sign;
                (g.apply(blocks, state), blocks.clone(), averages)
            }
            None => {
                let mut track = Tracker::new(state.dim());
                let end = self.leapfrog(state, sign * self.spec.step_size(), Some(&mut track));
                let n = self.spec.steps as f64;
                (
                    end,
                    track.blocks,
                    RunningAverages {
                        target_hessian: track.hess_q / n,
                        auxiliary_hessian: track.hess_p / n,
                        time: sign * self.spec.time,
                    },
                )
            }
        }
    }

    /// Velocity Verlet: half kick, drift, half kick. A negative `h` runs the
    /// exact inverse of the positive-step map.
    fn leapfrog(&self, state: &PhaseState, h: f64, mut track: Option<&mut Tracker>) -> PhaseState {
        let target = &self.model.target;
        let aux = &self.model.auxiliary;
        let d = state.dim();
        let mut q = state.q.clone();
        let mut p = state.p.clone();
        let mut force = DVector::zeros(d);
        let mut velocity = DVector::zeros(d);
        target.grad_into(&q, &mut force);
        let mut hq = track.as_ref().map(|_| target.hess(&q));
        if let (Some(t), Some(hq)) = (track.as_deref_mut(), hq.as_ref()) {
            t.hess_q += hq * 0.5;
            t.hess_p += aux.hess(&p) * 0.5;
        }
        let steps = self.spec.steps;
        for k in 0..steps {
            p.axpy(-0.5 * h, &force, 1.0);
            aux.grad_into(&p, &mut velocity);
            if let (Some(t), Some(hq_now)) = (track.as_deref_mut(), hq.as_ref()) {
                t.kick(hq_now, 0.5 * h);
                t.drift(&aux.hess(&p), h);
            }
            q.axpy(h, &velocity, 1.0);
            target.grad_into(&q, &mut force);
            p.axpy(-0.5 * h, &force, 1.0);
            if let Some(t) = track.as_deref_mut() {
                let hq_new = target.hess(&q);
                t.kick(&hq_new, 0.5 * h);
                let w = if k + 1 == steps { 0.5 } else { 1.0 };
                t.hess_q += &hq_new * w;
                t.hess_p += aux.hess(&p) * w;
                hq = Some(hq_new);
            }
        }
        PhaseState { q, p }
    }
}

impl ExactGaussian {
    fn apply(&self, blocks: &TangentBlocks, s: &PhaseState) -> PhaseState {
        let zq = &s.q - &self.mean_q;
        let zp = &s.p - &self.mean_p;
        PhaseState {
            q: &self.mean_q + &blocks.dq_dq * &zq + &blocks.dq_dp * &zp,
            p: &self.mean_p + &blocks.dp_dq * &zq + &blocks.dp_dp * &zp,
        }
    }
}

/// Chain rule through the substeps plus trapezoid Hessian sums.
struct Tracker {
    blocks: TangentBlocks,
    hess_q: DMatrix<f64>,
    hess_p: DMatrix<f64>,
}

impl Tracker {
    fn new(d: usize) -> Self {
        Tracker {
            blocks: TangentBlocks::identity(d),
            hess_q: DMatrix::zeros(d, d),
            hess_p: DMatrix::zeros(d, d),
        }
    }

    /// `p ← p − c ∇U(q)` differentiates to `∂P ← ∂P − c U''(q) ∂Q`.
    fn kick(&mut self, hq: &DMatrix<f64>, c: f64) {
        let b = &mut self.blocks;
        b.dp_dq.gemm(-c, hq, &b.dq_dq, 1.0);
        b.dp_dp.gemm(-c, hq, &b.dq_dp, 1.0);
    }

    /// `q ← q + h ∇V(p)` differentiates to `∂Q ← ∂Q + h V''(p) ∂P`.
    fn drift(&mut self, hp: &DMatrix<f64>, h: f64) {
        let b = &mut self.blocks;
        b.dq_dq.gemm(h, hp, &b.dp_dq, 1.0);
        b.dq_dp.gemm(h, hp, &b.dp_dp, 1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{gaussian_potential, standard_gaussian};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn gauss() -> ModelPair {
        ModelPair::standard_gaussian(1, 8.0).unwrap()
    }

    fn anharmonic() -> ModelPair {
        ModelPair::anharmonic(1.0, 1.0, 3.0).unwrap()
    }

    fn random_states(n: usize, seed: u64, d: usize, scale: f64) -> Vec<PhaseState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let q: Vec<f64> = (0..d).map(|_| rng.random_range(-scale..scale)).collect();
                let p: Vec<f64> = (0..d).map(|_| rng.random_range(-scale..scale)).collect();
                PhaseState::from_slices(&q, &p)
            })
            .collect()
    }

    #[test]
    fn energies() {
        let zero = PhaseState::from_slices(&[0.0], &[0.0]);
        let one = PhaseState::from_slices(&[1.0], &[1.0]);
        assert_eq!(total_energy(&zero, &gauss()), 0.0);
        assert_eq!(total_energy(&one, &gauss()), 1.0);
        let s = PhaseState::from_slices(&[1.0], &[0.0]);
        assert!((total_energy(&s, &anharmonic()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn exact_quarter_turn() {
        let s = PhaseState::from_slices(&[1.0], &[0.0]);
        let spec = FlowSpec::exact(FRAC_PI_2).unwrap();
        let e = flow(&s, &gauss(), &spec).unwrap();
        assert!(e.distance(&PhaseState::from_slices(&[0.0], &[-1.0])) < 1e-15);
        let back = inverse_flow(&e, &gauss(), &spec).unwrap();
        assert!(back.distance(&s) < 1e-15);
    }

    #[test]
    fn rejects_zero_time_and_exact_on_non_gaussian() {
        assert!(FlowSpec::exact(0.0).is_err());
        assert!(FlowSpec::leapfrog(0.5, 0).is_err());
        let s = PhaseState::from_slices(&[1.0], &[0.0]);
        assert!(matches!(
            flow(&s, &anharmonic(), &FlowSpec::exact(0.5).unwrap()),
            Err(Error::ExactFlowUnavailable)
        ));
    }

    #[test]
    fn tiny_time_is_identity() {
        let s = PhaseState::from_slices(&[0.7], &[-1.2]);
        for (m, spec) in [
            (gauss(), FlowSpec::exact(1e-12).unwrap()),
            (anharmonic(), FlowSpec::leapfrog(1e-12, 1).unwrap()),
        ] {
            assert!(flow(&s, &m, &spec).unwrap().distance(&s) < 1e-10);
            assert!(inverse_flow(&s, &m, &spec).unwrap().distance(&s) < 1e-10);
        }
    }

    #[test]
    fn leapfrog_matches_rotation() {
        let s = PhaseState::from_slices(&[1.0], &[0.0]);
        let exact = flow(&s, &gauss(), &FlowSpec::exact(0.7).unwrap()).unwrap();
        let lf = flow(&s, &gauss(), &FlowSpec::leapfrog(0.7, 1000).unwrap()).unwrap();
        assert!(exact.distance(&lf) < 1e-6);
    }

    #[test]
    fn leapfrog_roundtrip_is_exact_to_roundoff() {
        let m = anharmonic();
        let spec = FlowSpec::leapfrog_default(&m, 0.3).unwrap();
        let prop = Propagator::new(&m, &spec).unwrap();
        let worst = random_states(100, 11, 1, 2.0)
            .iter()
            .map(|s| prop.backward(&prop.forward(s)).distance(s))
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn conjugacy_residuals() {
        let states = random_states(50, 3, 1, 2.0);
        let exact =
            momentum_flip_conjugacy_residual(&gauss(), &FlowSpec::exact(0.7).unwrap(), &states)
                .unwrap();
        assert!(exact < 1e-12);
        let m = anharmonic();
        let lf = momentum_flip_conjugacy_residual(
            &m,
            &FlowSpec::leapfrog_default(&m, 0.3).unwrap(),
            &states,
        )
        .unwrap();
        assert!(lf < 1e-10);
        let origin = [PhaseState::from_slices(&[0.0], &[0.0])];
        let r =
            momentum_flip_conjugacy_residual(&m, &FlowSpec::leapfrog(0.3, 30).unwrap(), &origin)
                .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn conjugacy_needs_even_momentum() {
        let aux =
            gaussian_potential(DVector::from_element(1, 0.5), DMatrix::identity(1, 1)).unwrap();
        let m = ModelPair::new(standard_gaussian(1), aux, 8.0).unwrap();
        assert!(!m.auxiliary_even);
        let r = momentum_flip_conjugacy_residual(&m, &FlowSpec::exact(0.5).unwrap(), &[]);
        assert!(matches!(r, Err(Error::AuxiliaryNotEven)));
    }

    #[test]
    fn full_period_closes() {
        let s = PhaseState::from_slices(&[1.0], &[0.0]);
        let e = flow(&s, &gauss(), &FlowSpec::exact(2.0 * PI).unwrap()).unwrap();
        assert!(e.distance(&s) < 1e-12);
    }

    #[test]
    fn exact_flow_conserves_energy() {
        let q = DVector::from_vec(vec![0.5, -1.0]);
        let prec = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let m = ModelPair::new(
            gaussian_potential(q, prec).unwrap(),
            gaussian_potential(
                DVector::zeros(2),
                DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0])),
            )
            .unwrap(),
            8.0,
        )
        .unwrap();
        let spec = FlowSpec::exact(0.9).unwrap();
        for s in random_states(20, 5, 2, 2.0) {
            let e = flow(&s, &m, &spec).unwrap();
            assert!((total_energy(&e, &m) - total_energy(&s, &m)).abs() < 1e-12);
        }
    }

    #[test]
    fn leapfrog_energy_error_is_second_order() {
        let m = anharmonic();
        let s = PhaseState::from_slices(&[0.9], &[0.6]);
        let h0 = total_energy(&s, &m);
        let err = |n: usize| {
            let e = flow(&s, &m, &FlowSpec::leapfrog(0.7, n).unwrap()).unwrap();
            (total_energy(&e, &m) - h0).abs()
        };
        let ratio = err(20) / err(40);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn position_is_monotone_in_momentum() {
        for (m, spec) in [
            (gauss(), FlowSpec::exact(0.7).unwrap()),
            (
                anharmonic(),
                FlowSpec::leapfrog_default(&anharmonic(), 0.3).unwrap(),
            ),
        ] {
            let prop = Propagator::new(&m, &spec).unwrap();
            for &q in &[-2.0, -0.5, 0.0, 1.3] {
                let qs: Vec<f64> = (-60..=60)
                    .map(|k| {
                        prop.forward(&PhaseState::from_slices(&[q], &[k as f64 * 0.1]))
                            .q[0]
                    })
                    .collect();
                assert!(qs.windows(2).all(|w| w[1] > w[0]), "q={q}");
            }
        }
    }

    #[test]
    fn default_steps_rule() {
        let m = ModelPair::anharmonic(1.0, 0.5, 4.0).unwrap();
        // Λ = 25: step at most 0.002
        assert_eq!(default_steps(&m, 0.3), 150);
        assert_eq!(default_steps(&gauss(), 0.7), 70);
    }
}
