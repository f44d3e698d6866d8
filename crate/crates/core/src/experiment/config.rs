use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{anharmonic_potential, gaussian_potential, ModelPair};
use crate::dynamics::{default_steps, FlowMethod, FlowSpec};
use crate::error::{Error, Result};
use crate::operator::Assembly;
use crate::quadrature::Stencil;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Flow,
    Operator,
    Spectrum,
    KernelNorm,
    Convergence,
    SamplerCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Flow,
        ExperimentKind::Operator,
        ExperimentKind::Spectrum,
        ExperimentKind::KernelNorm,
        ExperimentKind::Convergence,
        ExperimentKind::SamplerCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Flow => "flow",
            ExperimentKind::Operator => "operator",
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::KernelNorm => "kernel-norm",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::SamplerCheck => "sampler-check",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Gaussian,
    Anharmonic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: FamilyKind,
    #[serde(default = "one")]
    pub dim: usize,
    /// `L`: positions live in `[-L, L]^d`.
    pub halfwidth: f64,
    /// Gaussian target mean; zero if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    /// Gaussian target precision, as rows; identity if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<Vec<Vec<f64>>>,
    /// Momentum precision, as rows; identity if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum_precision: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub time: f64,
    /// Defaults to the exact flow for Gaussian models, leapfrog otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<FlowMethod>,
    /// Leapfrog substeps; defaults to `t/steps <= 0.01 min(1, 1/√Λ)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_n")]
    pub n_per_axis: usize,
    #[serde(default = "default_m")]
    pub momentum_nodes: usize,
    #[serde(default)]
    pub stencil: Stencil,
    /// Operator discretization for spectrum and convergence runs. Defaults
    /// to the kernel for exact flows, deposit otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assembly: Option<Assembly>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_per_axis: default_n(),
            momentum_nodes: default_m(),
            stencil: Stencil::default(),
            assembly: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDensity {
    /// `f` times a Gaussian bump at `bump_center` with width `bump_width`;
    /// keeps `h₀/f` bounded.
    Bump,
    /// `h₀ = f`.
    Target,
    /// A seeded smooth random density.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_initial")]
    pub initial: InitialDensity,
    #[serde(default = "one_f")]
    pub bump_center: f64,
    #[serde(default = "one_f")]
    pub bump_width: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_eigen")]
    pub eigen_count: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_random_vectors")]
    pub random_vectors: usize,
    /// Flow study start; `q = (1, 0, …)`, `p = 0` if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_p: Option<Vec<f64>>,
    #[serde(default = "default_points")]
    pub trajectory_points: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        toml::from_str("").expect("every experiment field has a default")
    }
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn default_n() -> usize {
    401
}
fn default_m() -> usize {
    257
}
fn default_initial() -> InitialDensity {
    InitialDensity::Bump
}
fn default_n_max() -> usize {
    400
}
fn default_tol() -> f64 {
    1e-12
}
fn default_eigen() -> usize {
    8
}
fn default_samples() -> usize {
    1_000_000
}
fn default_bins() -> usize {
    100
}
fn default_random_vectors() -> usize {
    20
}
fn default_points() -> usize {
    100
}

/// Experiment configuration, read from TOML with `[model]`, `[flow]`,
/// `[grid]` and `[experiment]` sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub flow: FlowConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

/// A validated configuration with the model and flow built.
#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    /// The configuration with every default filled in.
    pub config: ExperimentConfig,
    pub model: ModelPair,
    pub spec: FlowSpec,
    pub assembly: Assembly,
}

fn bad(field: &str, reason: impl fmt::Display) -> Error {
    Error::Config(format!("{field}: {reason}"))
}

fn matrix(field: &str, rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(bad(field, format!("must be a {d}x{d} matrix")));
    }
    Ok(DMatrix::from_row_iterator(
        d,
        d,
        rows.iter().flatten().copied(),
    ))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn build_model(&self) -> Result<ModelPair> {
        let m = &self.model;
        if m.dim == 0 {
            return Err(bad("model.dim", "must be at least 1"));
        }
        if !(m.halfwidth > 0.0 && m.halfwidth.is_finite()) {
            return Err(bad("model.halfwidth", "must be positive"));
        }
        let d = m.dim;
        let momentum = match &m.momentum_precision {
            Some(rows) => matrix("model.momentum_precision", rows, d)?,
            None => DMatrix::identity(d, d),
        };
        let auxiliary = gaussian_potential(DVector::zeros(d), momentum)
            .map_err(|e| bad("model.momentum_precision", e))?;
        let target = match m.family {
            FamilyKind::Gaussian => {
                if m.a.is_some() || m.b.is_some() {
                    return Err(bad("model.a", "only used by the anharmonic family"));
                }
                let mean = match &m.mean {
                    Some(v) if v.len() == d => DVector::from_column_slice(v),
                    Some(_) => return Err(bad("model.mean", format!("must have {d} entries"))),
                    None => DVector::zeros(d),
                };
                let precision = match &m.precision {
                    Some(rows) => matrix("model.precision", rows, d)?,
                    None => DMatrix::identity(d, d),
                };
                gaussian_potential(mean, precision).map_err(|e| bad("model.precision", e))?
            }
            FamilyKind::Anharmonic => {
                if d != 1 {
                    return Err(bad("model.dim", "the anharmonic family is one-dimensional"));
                }
                if m.mean.is_some() || m.precision.is_some() {
                    return Err(bad("model.mean", "only used by the gaussian family"));
                }
                let a =
                    m.a.ok_or_else(|| bad("model.a", "required for the anharmonic family"))?;
                let b = m.b.unwrap_or(0.0);
                anharmonic_potential(a, b, m.halfwidth).map_err(|e| bad("model.a", e))?
            }
        };
        ModelPair::new(target, auxiliary, m.halfwidth).map_err(|e| bad("model", e))
    }

    /// Validates every field and fills in defaults. Operator experiments
    /// require `t·√(Λ_U Λ_V) < π/2`; the flow study accepts any `t`.
    pub fn resolve(&self, kind: ExperimentKind) -> Result<ResolvedConfig> {
        let model = self.build_model()?;
        let mut config = self.clone();
        let t = self.flow.time;
        if !(t > 0.0 && t.is_finite()) {
            return Err(bad("flow.time", "must be positive"));
        }
        let method = self.flow.method.unwrap_or(if model.is_gaussian() {
            FlowMethod::ExactGaussian
        } else {
            FlowMethod::Leapfrog
        });
        let steps = match (method, self.flow.steps) {
            (FlowMethod::ExactGaussian, _) => 1,
            (FlowMethod::Leapfrog, Some(0)) => return Err(bad("flow.steps", "must be at least 1")),
            (FlowMethod::Leapfrog, Some(n)) => n,
            (FlowMethod::Leapfrog, None) => default_steps(&model, t),
        };
        config.flow.method = Some(method);
        config.flow.steps = Some(steps);
        let spec = FlowSpec::new(t, steps, method).map_err(|e| bad("flow", e))?;
        spec.validate_for(&model)
            .map_err(|e| bad("flow.method", e))?;
        if kind != ExperimentKind::Flow {
            model.check_regime(t).map_err(|e| bad("flow.time", e))?;
        }

        let g = &self.grid;
        if g.n_per_axis < 16 {
            return Err(bad("grid.n_per_axis", "must be at least 16"));
        }
        if g.momentum_nodes < 2 {
            return Err(bad("grid.momentum_nodes", "must be at least 2"));
        }
        let assembly = match g.assembly {
            Some(a @ (Assembly::Deposit | Assembly::Kernel)) => a,
            Some(other) => {
                return Err(bad(
                    "grid.assembly",
                    format!("{other:?} is not selectable; use kernel or deposit"),
                ))
            }
            None if method == FlowMethod::ExactGaussian => Assembly::Kernel,
            None => Assembly::Deposit,
        };
        config.grid.assembly = Some(assembly);

        let e = &self.experiment;
        if e.tol.is_nan() || e.tol <= 0.0 {
            return Err(bad("experiment.tol", "must be positive"));
        }
        if e.bump_width.is_nan() || e.bump_width <= 0.0 {
            return Err(bad("experiment.bump_width", "must be positive"));
        }
        if e.eigen_count == 0 {
            return Err(bad("experiment.eigen_count", "must be at least 1"));
        }
        if e.bins == 0 {
            return Err(bad("experiment.bins", "must be at least 1"));
        }
        if e.trajectory_points == 0 {
            return Err(bad("experiment.trajectory_points", "must be at least 1"));
        }
        for (field, v) in [
            ("experiment.start_q", &e.start_q),
            ("experiment.start_p", &e.start_p),
        ] {
            if v.as_ref().is_some_and(|v| v.len() != model.dim()) {
                return Err(bad(field, format!("must have {} entries", model.dim())));
            }
        }
        if kind == ExperimentKind::SamplerCheck && model.dim() != 1 {
            return Err(bad(
                "model.dim",
                "the sampler cross-check is one-dimensional",
            ));
        }
        Ok(ResolvedConfig {
            config,
            model,
            spec,
            assembly,
        })
    }
}
