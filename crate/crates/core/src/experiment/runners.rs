use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::config::{ExperimentKind, InitialDensity, ResolvedConfig};
use super::output::{Check, Csv, Outcome};
use crate::dynamics::{total_energy, FlowMethod, FlowSpec, PhaseState, Propagator};
use crate::error::Result;
use crate::operator::{
    assemble_with, build_grid, duality_residual, iterate, weighted_symmetry_residual, Assembly,
    DensityGrid, DensityVector, Direction, TransferMatrix,
};
use crate::sampler::{bin_masses, run_crosscheck};
use crate::spectral::{assemble_kernel, certify_rate, eigen_spectrum, hs_norm, CertificateStatus};
use crate::tangent::{determinant_bounds, TangentBlocks};

/// Runs one experiment, writing `manifest.txt`, CSV files and
/// `certificate.json` into `out`. `threads` is only recorded.
pub fn run_experiment(
    kind: ExperimentKind,
    cfg: &ResolvedConfig,
    out: &Path,
    threads: usize,
) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    let mut outcome = match kind {
        ExperimentKind::Flow => run_flow_study(cfg, out)?,
        ExperimentKind::Operator => run_operator(cfg, out)?,
        ExperimentKind::Spectrum => run_spectrum(cfg, out)?,
        ExperimentKind::KernelNorm => run_kernel_norm(cfg, out)?,
        ExperimentKind::Convergence => run_convergence(cfg, out)?,
        ExperimentKind::SamplerCheck => run_sampler_crosscheck(cfg, out)?,
    };
    let manifest = format!(
        "experiment = \"{kind}\"\nversion = \"{}\"\nseed = {}\nthreads = {threads}\nmodel = \"{}\"\nstatus = \"{}\"\n\n# resolved configuration\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.config.experiment.seed,
        cfg.model.describe(),
        if outcome.passed { "pass" } else { "fail" },
        cfg.config.to_toml()
    );
    fs::write(out.join("manifest.txt"), manifest)?;
    fs::write(out.join("certificate.json"), outcome.certificate_json())?;
    outcome.files.push(out.join("manifest.txt"));
    outcome.files.push(out.join("certificate.json"));
    Ok(outcome)
}

fn node_header(d: usize) -> Vec<String> {
    if d == 1 {
        vec!["q".into()]
    } else {
        (0..d).map(|a| format!("q{a}")).collect()
    }
}

fn grid_and_operator(
    cfg: &ResolvedConfig,
    assembly: Assembly,
) -> Result<(DensityGrid, TransferMatrix)> {
    let grid = build_grid(&cfg.model, cfg.config.grid.n_per_axis)?;
    let t = match assembly {
        Assembly::Kernel => assemble_kernel(&grid, &cfg.model, &cfg.spec)?.to_transfer(&grid)?,
        _ => assemble_with(
            &grid,
            &cfg.model,
            &cfg.spec,
            cfg.config.grid.momentum_nodes,
            cfg.config.grid.stencil,
            Direction::Forward,
            Assembly::Deposit,
        )?,
    };
    Ok((grid, t))
}

/// Eigenvalue oracle `cos^k(ωt)` for one-dimensional Gaussian pairs.
fn gaussian_frequency(cfg: &ResolvedConfig) -> Option<f64> {
    if cfg.model.dim() != 1 || cfg.spec.method != FlowMethod::ExactGaussian {
        return None;
    }
    let (_, u) = cfg.model.target.gaussian_parts()?;
    let (_, v) = cfg.model.auxiliary.gaussian_parts()?;
    Some((u[(0, 0)] * v[(0, 0)]).sqrt())
}

/// Trajectory with energy and the Jacobian determinant along it.
pub fn run_flow_study(cfg: &ResolvedConfig, out: &Path) -> Result<Outcome> {
    let d = cfg.model.dim();
    let e = &cfg.config.experiment;
    let q0 = e
        .start_q
        .clone()
        .map(DVector::from_vec)
        .unwrap_or_else(|| DVector::from_fn(d, |i, _| if i == 0 { 1.0 } else { 0.0 }));
    let p0 = e
        .start_p
        .clone()
        .map(DVector::from_vec)
        .unwrap_or_else(|| DVector::zeros(d));
    let points = e.trajectory_points;
    let seg_steps = cfg.spec.steps.div_ceil(points).max(1);
    let seg = FlowSpec::new(cfg.spec.time / points as f64, seg_steps, cfg.spec.method)?;
    let prop = Propagator::new(&cfg.model, &seg)?;

    let mut header = vec!["s".to_string()];
    header.extend(node_header(d).into_iter().map(|c| c.replacen('q', "Q", 1)));
    header.extend((0..d).map(|a| {
        if d == 1 {
            "P".to_string()
        } else {
            format!("P{a}")
        }
    }));
    header.push("H".into());
    header.push("detJ".into());
    let mut csv = Csv::new(header);

    let start = PhaseState::new(q0, p0);
    let mut state = start.clone();
    let mut jac = TangentBlocks::identity(d).full();
    let h0 = total_energy(&start, &cfg.model);
    let (mut h_min, mut h_max, mut det_dev) = (h0, h0, 0.0f64);
    let push = |s: f64, st: &PhaseState, det: f64, csv: &mut Csv| {
        let mut row = vec![s];
        row.extend(st.q.iter());
        row.extend(st.p.iter());
        row.push(total_energy(st, &cfg.model));
        row.push(det);
        csv.row(&row);
    };
    push(0.0, &state, 1.0, &mut csv);
    for k in 1..=points {
        let (next, blocks, _) = prop.forward_with_tangent(&state)?;
        jac = blocks.full() * jac;
        state = next;
        let det = jac.determinant();
        let h = total_energy(&state, &cfg.model);
        h_min = h_min.min(h);
        h_max = h_max.max(h);
        det_dev = det_dev.max((det - 1.0).abs());
        push(k as f64 * seg.time, &state, det, &mut csv);
    }
    csv.write(&out.join("trajectory.csv"))?;

    let drift_bound = if cfg.spec.method == FlowMethod::ExactGaussian {
        1e-10
    } else {
        1e-5
    };
    let closure = state.distance(&start);
    let checks = vec![
        Check::below("energy_drift", h_max - h_min, drift_bound),
        Check::below("det_jacobian_deviation", det_dev, 1e-10),
    ];
    let mut outcome = Outcome::new(
        "flow",
        checks,
        vec![],
        json!({ "closure_distance": closure, "segments": points, "substeps_per_segment": seg_steps }),
    );
    outcome.files.push(out.join("trajectory.csv"));
    Ok(outcome)
}

/// Fixed point, mass, contraction, positivity and adjoint duality of the
/// deposit-assembled operator.
pub fn run_operator(cfg: &ResolvedConfig, out: &Path) -> Result<Outcome> {
    let g = &cfg.config.grid;
    let grid = build_grid(&cfg.model, g.n_per_axis)?;
    let assemble = |direction| {
        assemble_with(
            &grid,
            &cfg.model,
            &cfg.spec,
            g.momentum_nodes,
            g.stencil,
            direction,
            Assembly::Deposit,
        )
    };
    let t = assemble(Direction::Forward)?;
    let adj = assemble(Direction::Adjoint)?;
    let f = grid.target();
    let tf = t.apply(f);
    let fixed = grid.weighted_norm(&(&tf - f)) / grid.weighted_norm(f);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.config.experiment.seed);
    let count = cfg.config.experiment.random_vectors.max(1);
    let (mut mass_err, mut growth, mut contraction, mut negativity) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let h = grid.random_smooth(&mut rng, false);
        let th = t.apply(&h);
        mass_err = mass_err.max((grid.mass(&th) - grid.mass(&h)).abs() / grid.mass(&h.abs()));
        growth = growth.max(grid.weighted_norm(&th) / grid.weighted_norm(&h) - 1.0);
        negativity = negativity.max(-th.min() / h.amax());
        let z = grid.remove_mass(&grid.random_smooth(&mut rng, true));
        contraction = contraction.max(grid.weighted_norm(&t.apply(&z)) / grid.weighted_norm(&z));
        pairs.push((
            grid.random_smooth(&mut rng, true),
            grid.random_smooth(&mut rng, true),
        ));
    }
    let duality = duality_residual(&t, &adj, &grid, &pairs)?;
    let mut checks = vec![
        Check::below("fixed_point_defect", fixed, 1e-6),
        Check::below("mass_error", mass_err, 1e-7),
        Check::at_most("norm_growth", growth, 1e-10),
        Check::at_most("mass_zero_contraction", contraction, 0.99),
        Check::at_most("negativity", negativity, 1e-12),
        Check::below("adjoint_duality", duality, 1e-7),
    ];
    let pointwise = weighted_symmetry_residual(&t, &grid)?;
    let mut kernel_symmetry = None;
    if cfg.model.auxiliary_even {
        let self_dual = duality_residual(&t, &t, &grid, &pairs)?;
        checks.push(Check::below(
            "self_adjoint_on_smooth_pairs",
            self_dual,
            1e-7,
        ));
        let gap = (t.entries() - adj.entries()).amax() / t.entries().amax();
        checks.push(Check::below("forward_adjoint_matrix_gap", gap, 1e-7));
        if cfg.spec.method == FlowMethod::ExactGaussian {
            let k = assemble_kernel(&grid, &cfg.model, &cfg.spec)?.to_transfer(&grid)?;
            let r = weighted_symmetry_residual(&k, &grid)?;
            checks.push(Check::below("kernel_weighted_symmetry", r, 1e-7));
            kernel_symmetry = Some(r);
        }
    }

    let mut header = node_header(grid.dim());
    header.extend(["f", "Tf", "Tadj_f"].map(String::from));
    let mut csv = Csv::new(header);
    let adj_f = adj.apply(f);
    for i in 0..grid.len() {
        let mut row: Vec<f64> = grid.node(i).iter().copied().collect();
        row.extend([f[i], tf[i], adj_f[i]]);
        csv.row(&row);
    }
    csv.write(&out.join("operator.csv"))?;
    t.write_binary(&out.join("operator.bin"))?;

    let mut warnings = grid.warnings().to_vec();
    warnings.extend(t.warnings.iter().cloned());
    let mut outcome = Outcome::new(
        "operator",
        checks,
        warnings,
        json!({
            "nodes": grid.len(),
            "retained_nodes": grid.retained_count(),
            "dropped_mass": grid.dropped_mass(),
            "leaked_mass": t.leaked_mass,
            "quadrature": t.quadrature,
            "deposit_weighted_symmetry_residual": pointwise,
            "kernel_weighted_symmetry_residual": kernel_symmetry,
            "random_vectors": count,
        }),
    );
    outcome
        .files
        .extend([out.join("operator.csv"), out.join("operator.bin")]);
    Ok(outcome)
}

/// Leading eigenvalues, gap and the leading eigenvector.
pub fn run_spectrum(cfg: &ResolvedConfig, out: &Path) -> Result<Outcome> {
    let (grid, t) = grid_and_operator(cfg, cfg.assembly)?;
    let k = cfg.config.experiment.eigen_count;
    let report = eigen_spectrum(&t, &grid, k)?;
    let omega = gaussian_frequency(cfg);

    let mut csv = Csv::new(["k", "mu", "abs_mu", "oracle"]);
    let mut oracle_err = 0.0f64;
    for (i, &mu) in report.eigenvalues.iter().enumerate() {
        let oracle = omega.map_or(f64::NAN, |w| (w * cfg.spec.time).cos().powi(i as i32));
        if i < 6 && oracle.is_finite() {
            oracle_err = oracle_err.max((mu - oracle).abs());
        }
        csv.indexed_row(i, &[mu, mu.abs(), oracle]);
    }
    csv.write(&out.join("eigenvalues.csv"))?;
    let mut header = node_header(grid.dim());
    header.extend(["f", "leading_vector"].map(String::from));
    let mut lead = Csv::new(header);
    for i in 0..grid.len() {
        let mut row: Vec<f64> = grid.node(i).iter().copied().collect();
        row.extend([grid.target()[i], report.leading_vector[i]]);
        lead.row(&row);
    }
    lead.write(&out.join("leading_vector.csv"))?;

    let mu1 = report.eigenvalues[0];
    let max_abs = report
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, m| a.max(m.abs()));
    let mut checks = vec![
        Check::below("mu1_deviation", (mu1 - 1.0).abs(), 1e-4),
        Check::at_most("max_abs_eigenvalue", max_abs, 1.0 + 1e-6),
        Check::below("leading_vector_error", report.leading_vector_error, 1e-4),
        Check::flag("mu1_simple", report.multiplicity_check),
    ];
    if omega.is_some() {
        checks.push(Check::below("mehler_oracle_error", oracle_err, 1e-3));
    }
    let mut warnings = grid.warnings().to_vec();
    warnings.extend(report.warnings.iter().cloned());
    if !cfg.model.is_gaussian() {
        warnings.push(
            "non-Gaussian model: the measured gap cannot distinguish a true spectral gap from discretization-induced isolation".into(),
        );
    }
    let mut outcome = Outcome::new(
        "spectrum",
        checks,
        warnings,
        json!({ "assembly": t.assembly, "report": report_summary(&report) }),
    );
    outcome
        .files
        .extend([out.join("eigenvalues.csv"), out.join("leading_vector.csv")]);
    Ok(outcome)
}

fn report_summary(r: &crate::spectral::SpectralReport) -> serde_json::Value {
    json!({
        "eigenvalues": r.eigenvalues,
        "gap": r.gap,
        "rate_bound": r.rate_bound,
        "multiplicity_check": r.multiplicity_check,
        "symmetric_solver": r.symmetric,
        "weighted_symmetry_residual": r.symmetry_residual,
        "leading_vector_error": r.leading_vector_error,
        "second_vector_mass": r.second_vector_mass,
        "max_imaginary": r.max_imaginary,
        "sum_of_squares": r.sum_of_squares,
    })
}

/// Hilbert–Schmidt norm by both routes, against the determinant bound and
/// the spectrum.
pub fn run_kernel_norm(cfg: &ResolvedConfig, out: &Path) -> Result<Outcome> {
    let grid = build_grid(&cfg.model, cfg.config.grid.n_per_axis)?;
    let kernel = assemble_kernel(&grid, &cfg.model, &cfg.spec)?;
    let hs = hs_norm(&kernel, &grid)?;
    let t = kernel.to_transfer(&grid)?;
    let report = eigen_spectrum(&t, &grid, cfg.config.experiment.eigen_count)?;
    let (_, big) = cfg.model.concavity_bounds();
    let bounds = (cfg.spec.time * big < FRAC_PI_2)
        .then(|| determinant_bounds(&cfg.model, cfg.spec.time))
        .transpose()?;

    let mut checks = vec![
        Check::below("route_disagreement", hs.relative_gap, 1e-3),
        Check::below(
            "hs_vs_sum_of_squares",
            (report.sum_of_squares / hs.value() - 1.0).abs(),
            1e-3,
        ),
    ];
    let mut lines = vec![
        ("hs_position", hs.position),
        ("hs_momentum", hs.momentum),
        ("sum_mu_squared", report.sum_of_squares),
    ];
    if let Some((_, upper)) = bounds {
        checks.push(Check::at_most(
            "hs_below_upper_bound",
            hs.value(),
            upper * (1.0 + 1e-6),
        ));
        lines.push(("upper_bound", upper));
    }
    if let Some(w) = gaussian_frequency(cfg) {
        let exact = 1.0 / (w * cfg.spec.time).sin().powi(2);
        checks.push(Check::below(
            "hs_oracle_error",
            (hs.value() / exact - 1.0).abs(),
            1e-3,
        ));
        lines.push(("hs_closed_form", exact));
    }
    let mut text = String::from("quantity,value\n");
    for (name, v) in lines {
        text.push_str(&format!("{name},{}\n", super::output::fmt_f64(v)));
    }
    fs::write(out.join("kernel_norm.csv"), text)?;
    crate::operator::write_matrix(kernel.values(), &out.join("kernel.bin"))?;
    let mut outcome = Outcome::new(
        "kernel-norm",
        checks,
        grid.warnings().to_vec(),
        json!({
            "hs_norm_sq": hs.position,
            "momentum_hs_norm_sq": hs.momentum,
            "relative_gap": hs.relative_gap,
            "consistency": hs.consistency,
            "determinant_bounds": bounds,
            "newton_iterations": kernel.newton_iterations,
        }),
    );
    outcome
        .files
        .extend([out.join("kernel_norm.csv"), out.join("kernel.bin")]);
    Ok(outcome)
}

fn initial_density(cfg: &ResolvedConfig, grid: &DensityGrid) -> DensityVector {
    let e = &cfg.config.experiment;
    match e.initial {
        InitialDensity::Target => grid.target().clone(),
        InitialDensity::Random => grid.random_smooth(&mut ChaCha8Rng::seed_from_u64(e.seed), false),
        InitialDensity::Bump => DensityVector::from_fn(grid.len(), |i, _| {
            let x = grid.node(i);
            let r2: f64 = x
                .iter()
                .map(|v| ((v - e.bump_center) / e.bump_width).powi(2))
                .sum();
            grid.target()[i] * (-0.5 * r2).exp()
        }),
    }
}

/// Iteration trace and the rate certificate against `|μ₂|`.
pub fn run_convergence(cfg: &ResolvedConfig, out: &Path) -> Result<Outcome> {
    let (grid, t) = grid_and_operator(cfg, cfg.assembly)?;
    let e = &cfg.config.experiment;
    let h0 = initial_density(cfg, &grid);
    let trace = iterate(&t, &grid, &h0, e.n_max, e.tol)?;
    let report = eigen_spectrum(&t, &grid, e.eigen_count)?;
    let cert = certify_rate(&report, &trace);

    let mut csv = Csv::new(["n", "norm", "error"]);
    for r in &trace.records {
        csv.indexed_row(r.n, &[r.norm, r.error]);
    }
    csv.write(&out.join("trace.csv"))?;

    let mut checks = vec![Check::flag("rate_certificate", cert.passed())];
    let norms_monotone = trace
        .records
        .windows(2)
        .all(|w| w[1].norm <= w[0].norm * (1.0 + 1e-10));
    checks.push(Check::flag("norm_monotone", norms_monotone));
    checks.push(Check::flag("no_divergence", trace.anomaly.is_none()));
    if let (Some(w), Some(rho)) = (gaussian_frequency(cfg), cert.rho_empirical) {
        let oracle = (w * cfg.spec.time).cos().abs();
        checks.push(Check::below(
            "rate_oracle_mismatch",
            (rho - oracle).abs() / oracle,
            0.02,
        ));
    }
    let mut warnings = grid.warnings().to_vec();
    warnings.extend(report.warnings.iter().cloned());
    warnings.extend(trace.anomaly.iter().cloned());
    let mut outcome = Outcome::new(
        "convergence",
        checks,
        warnings,
        json!({
            "certificate": cert,
            "trivially_converged": cert.status == CertificateStatus::TriviallyConverged,
            "alpha": trace.alpha,
            "termination": trace.termination,
            "norm_limit_sq": trace.norm_limit_sq(),
            "spectrum": report_summary(&report),
        }),
    );
    outcome.files.push(out.join("trace.csv"));
    Ok(outcome)
}

/// Histogram of an HMC chain against the binned operator fixed point `𝒯f`.
pub fn run_sampler_crosscheck(cfg: &ResolvedConfig, out: &Path) -> Result<Outcome> {
    let g = &cfg.config.grid;
    let e = &cfg.config.experiment;
    let grid = build_grid(&cfg.model, g.n_per_axis)?;
    let t = assemble_with(
        &grid,
        &cfg.model,
        &cfg.spec,
        g.momentum_nodes,
        g.stencil,
        Direction::Forward,
        Assembly::Deposit,
    )?;
    let fixed_point = t.apply(grid.target());
    let reference = bin_masses(&grid, &fixed_point, e.bins)?;
    let report = run_crosscheck(&cfg.model, &cfg.spec, &reference, e.samples, e.seed, 0.0)?;

    let mut csv = Csv::new(["bin", "lo", "hi", "sampled", "reference"]);
    let l = cfg.model.domain_halfwidth;
    let width = 2.0 * l / e.bins as f64;
    for b in 0..e.bins {
        let lo = -l + b as f64 * width;
        csv.indexed_row(
            b,
            &[lo, lo + width, report.histogram[b], report.reference[b]],
        );
    }
    csv.write(&out.join("histogram.csv"))?;
    let mut checks = Vec::new();
    if let Some(sup) = report.sup_distance {
        checks.push(Check::below("sup_histogram_distance", sup, 0.01));
    }
    let mut warnings = report.warnings.clone();
    warnings.extend(t.warnings.iter().cloned());
    let mut outcome = Outcome::new(
        "sampler-check",
        checks,
        warnings,
        json!({
            "samples": report.samples,
            "accepted": report.accepted,
            "acceptance_rate": report.acceptance_rate,
            "outside_box": report.outside,
            "sup_distance": report.sup_distance,
        }),
    );
    outcome.files.push(out.join("histogram.csv"));
    Ok(outcome)
}
