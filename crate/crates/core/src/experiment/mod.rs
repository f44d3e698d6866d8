//! Configured experiments with CSV output and JSON certificates.

mod config;
mod output;
mod runners;

pub use config::{
    ExperimentConfig, ExperimentKind, ExperimentSection, FamilyKind, FlowConfig, GridConfig,
    InitialDensity, ModelConfig, ResolvedConfig,
};
pub use output::{fmt_f64, Check, Csv, Outcome};
pub use runners::{
    run_convergence, run_experiment, run_flow_study, run_kernel_norm, run_operator,
    run_sampler_crosscheck, run_spectrum,
};
