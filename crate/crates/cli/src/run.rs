//! Subcommand dispatch and artifact emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use mixed_nonlocal::cache::OperatorCache;
use mixed_nonlocal::discretization::{apply_fractional, RadialFunction};
use mixed_nonlocal::extension::{cs_extend, moment_limit, neumann_trace, TRACE_WINDOW};
use mixed_nonlocal::ground_state::{first_eigen_lambda1, GroundStateSolver, ProblemParams};
use mixed_nonlocal::special::KernelSpec;
use mixed_nonlocal::spectral::{lambda_spectrum, sigma_spectrum_scaled};
use mixed_nonlocal::verification::{
    continue_in_p, continue_in_s, instance_keys, multistart_uniqueness, nondegeneracy_checks, run_battery,
    shifted_margins, tau_homotopy, Check, Control, ContinuationTrace, Instance, Provenance, SIGN_TOL,
};
use mixed_nonlocal::Error;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{Command, Format, RunConfig};
use crate::error::CliError;
use crate::report::{write_atomic, Report};
use crate::svg::LinePlot;

/// Everything a subcommand produces before it is written out.
#[derive(Default)]
struct Body {
    checks: Vec<Check>,
    data: BTreeMap<String, serde_json::Value>,
    notes: Vec<String>,
    provenance: Provenance,
    /// (file name, contents, format)
    files: Vec<(String, String, Format)>,
}

impl Body {
    fn file(&mut self, name: &str, contents: String, format: Format) {
        self.files.push((name.to_string(), contents, format));
    }
}

fn profile_points(f: &RadialFunction<f64>) -> Vec<(f64, f64)> {
    f.mesh().nodes().iter().copied().zip(f.values().iter().copied()).collect()
}

fn profile_csv(columns: &[(&str, &RadialFunction<f64>)]) -> String {
    let mut out = String::from("r");
    for (name, _) in columns {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    let nodes = columns[0].1.mesh().nodes();
    for (i, r) in nodes.iter().enumerate() {
        let _ = write!(out, "{r:e}");
        for (_, f) in columns {
            let _ = write!(out, ",{:e}", f.value(i));
        }
        out.push('\n');
    }
    out
}

fn tagged(prefix: &str, checks: Vec<Check>) -> Vec<Check> {
    checks
        .into_iter()
        .map(|mut c| {
            c.name = format!("{prefix}{}", c.name);
            c
        })
        .collect()
}

/// Runs one configuration end to end and writes its artifacts.
pub fn run(cfg: &RunConfig) -> Report {
    let mut report = Report::new(cfg.clone());
    let result = cfg
        .validate()
        .and_then(|_| OperatorCache::with_directory(cfg.out.join("cache")).map_err(CliError::from))
        .and_then(|cache| execute(cfg, &cache));
    match result {
        Ok(body) => {
            report.results = body.checks.into_iter().map(Into::into).collect();
            report.data = body.data;
            report.notes = body.notes;
            report.provenance = body.provenance;
            if let Err(e) = write_files(cfg, &body.files, &mut report) {
                report.error = Some(e.to_string());
            }
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    if let Err(e) = write_report(cfg, &mut report) {
        report.error.get_or_insert(e.to_string());
    }
    report
}

fn stem(cfg: &RunConfig) -> &'static str {
    cfg.command.as_str()
}

fn write_files(cfg: &RunConfig, files: &[(String, String, Format)], report: &mut Report) -> Result<(), CliError> {
    for (name, contents, format) in files {
        if cfg.wants(*format) {
            write_atomic(&cfg.out.join(name), contents.as_bytes())?;
            report.artifacts.push(name.clone());
        }
    }
    Ok(())
}

fn write_report(cfg: &RunConfig, report: &mut Report) -> Result<(), CliError> {
    let base = stem(cfg);
    if cfg.wants(Format::Csv) {
        let name = format!("{base}_checks.csv");
        write_atomic(&cfg.out.join(&name), report.to_csv()?.as_bytes())?;
        report.artifacts.push(name);
    }
    // the JSON report is written whenever possible, including after errors
    let name = format!("{base}.json");
    report.artifacts.push(name.clone());
    write_atomic(&cfg.out.join(&name), report.to_json()?.as_bytes())?;
    Ok(())
}

fn execute(cfg: &RunConfig, cache: &OperatorCache) -> Result<Body, CliError> {
    let mut body = Body::default();
    body.provenance.seed = Some(cfg.seed);
    match cfg.command {
        Command::Solve => solve(cfg, cache, &mut body)?,
        Command::Spectrum => spectrum(cfg, cache, &mut body)?,
        Command::Verify if cfg.grid => verify_grid(cfg, cache, &mut body)?,
        Command::Verify => verify(cfg, cfg.params(), cache, &mut body, "")?,
        Command::ContinueP => continuation_p(cfg, cache, &mut body)?,
        Command::ContinueS => continuation_s(cfg, cache, &mut body)?,
        Command::Extend => extend(cfg, cache, &mut body)?,
    }
    Ok(body)
}

fn keys_for(cfg: &RunConfig, params: &ProblemParams<f64>, max_sector: usize) -> Vec<String> {
    instance_keys(params, &cfg.battery(), max_sector)
}

fn solve(cfg: &RunConfig, cache: &OperatorCache, body: &mut Body) -> Result<(), CliError> {
    let params = cfg.params();
    params.validate()?;
    let mesh = cfg.mesh_settings();
    let op = cache.operator(params.dim, params.s, 0, &mesh)?;
    let solver = GroundStateSolver::new(&op, params, cfg.solver())?;
    let u = solver.solve(None)?;
    let values = u.u.values();
    let norm = u.u.norm_inf();
    let interior = &values[..values.len() - 1];
    let pp = mixed_nonlocal::discretization::lp_norm_pow(&u.u, params.dim, params.p);
    let rise = values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    body.checks = vec![
        Check::new("residual", cfg.tol - u.relative_residual, 0.0).with("pde_residual", u.pde_residual),
        Check::new("positivity", interior.iter().copied().fold(f64::INFINITY, f64::min) / norm, 0.0),
        Check::new("monotonicity", -rise / norm, 0.0),
        Check::new("nehari", 1e-7 - u.nehari_residual.abs() / pp.max(1.0), 0.0).with("nehari_residual", u.nehari_residual),
        Check::new("energy_identity", 1e-8 - (u.energy - (0.5 - 1.0 / params.p) * pp).abs() / u.energy.abs(), 0.0)
            .with("energy", u.energy),
    ];
    body.data.insert("energy".into(), json!(u.energy));
    body.data.insert("u_max".into(), json!(norm));
    body.data.insert("lambda1".into(), json!(solver.lambda1()));
    body.data.insert("newton_iterations".into(), json!(u.iterations));
    body.data.insert("descent_iterations".into(), json!(u.descent_iterations));
    body.provenance.cache_keys = vec![OperatorCache::key(params.dim, params.s, 0, &mesh)];
    body.file("solution.json", serde_json::to_string_pretty(&u.record())? + "\n", Format::Json);
    body.file("profile.csv", profile_csv(&[("u", &u.u)]), Format::Csv);
    let svg = LinePlot::new("ground state", "r", "u(r)").series("u", profile_points(&u.u)).render();
    body.file("profile.svg", svg, Format::Svg);
    Ok(())
}

fn spectrum(cfg: &RunConfig, cache: &OperatorCache, body: &mut Body) -> Result<(), CliError> {
    let params = cfg.params();
    let inst = Instance::prepare(params, cfg.mesh_settings(), cache, &cfg.solver())?;
    let sigma = sigma_spectrum_scaled(&inst.ground, &params, &inst.radial, cfg.eigenpairs, 1.0, 0.0)?;
    let mut checks = Vec::new();
    for (k, &res) in sigma.residuals.iter().enumerate() {
        checks.push(Check::new(format!("sigma_residual_{}", k + 1), 1e-8 - res, 0.0).with("sigma", sigma.eigenvalue(k)));
    }
    let shift = if cfg.control == Control::ShiftedPotential {
        -(params.lambda + sigma.eigenvalue(1))
    } else {
        0.0
    };
    checks.extend(nondegeneracy_checks(&shifted_margins(&inst, cache, shift)?));
    body.data.insert("sigma".into(), json!(sigma.eigenvalues));
    for sector in 0..=2usize {
        let op = inst.sector(cache, sector)?;
        let lam = lambda_spectrum(&inst.ground, &params, &op, 3)?;
        body.data.insert(format!("lambda_l{sector}"), json!(lam.eigenvalues));
        body.file(&format!("lambda_l{sector}.csv"), lam.to_csv(), Format::Csv);
    }
    body.checks = checks;
    body.provenance.cache_keys = keys_for(&RunConfig { refine: false, ..cfg.clone() }, &params, 2);
    body.file("sigma.csv", sigma.to_csv(), Format::Csv);
    let mut plot = LinePlot::new("linearized eigenfunctions", "r", "w_k(r)");
    for (k, f) in sigma.eigenfunctions.iter().enumerate() {
        plot = plot.series(&format!("w{} (σ = {:.4})", k + 1, sigma.eigenvalue(k)), profile_points(f));
    }
    body.file("sigma.svg", plot.render(), Format::Svg);
    Ok(())
}

fn verify(cfg: &RunConfig, params: ProblemParams<f64>, cache: &OperatorCache, body: &mut Body, prefix: &str) -> Result<(), CliError> {
    params.validate()?;
    let opts = cfg.battery();
    let battery = run_battery(params, cache, &opts)?;
    let mut checks = tagged(prefix, battery.checks);
    let ms = multistart_uniqueness(params, cfg.starts, cfg.seed, opts.mesh, cache, &opts.solver)?;
    checks.extend(tagged(prefix, ms.checks()));
    let inst = Instance::prepare(params, opts.mesh, cache, &opts.solver)?;
    for (tau, count) in tau_homotopy(&inst, &[0.0, 0.25, 0.5, 0.75, 1.0], SIGN_TOL)? {
        checks.push(
            Check::new(format!("{prefix}tau_sign_changes[τ={tau}]"), 0.5 - (count as f64 - 1.0).abs(), 0.0)
                .with("count", count as f64),
        );
    }
    body.checks.extend(checks);
    body.notes.extend(battery.notes.into_iter().map(|n| format!("{prefix}{n}")));
    for k in battery.provenance.cache_keys {
        if !body.provenance.cache_keys.contains(&k) {
            body.provenance.cache_keys.push(k);
        }
    }
    if prefix.is_empty() {
        let sigma = sigma_spectrum_scaled(&inst.ground, &params, &inst.radial, 3, 1.0, 0.0)?;
        let w = sigma.eigenfunction(if cfg.control == Control::ThirdEigenfunction { 2 } else { 1 });
        let u = inst.ground.u.scaled(1.0 / inst.ground.u.norm_inf());
        let w = w.scaled(1.0 / w.norm_inf());
        body.file("verify_profiles.csv", profile_csv(&[("u", &u), ("w", &w)]), Format::Csv);
        let svg = LinePlot::new("ground state and inspected eigenfunction", "r", "normalized")
            .series("u/|u|", profile_points(&u))
            .series("w/|w|", profile_points(&w))
            .render();
        body.file("verify_profiles.svg", svg, Format::Svg);
        body.data.insert("multistart_energies".into(), json!(ms.energies));
    }
    Ok(())
}

fn verify_grid(cfg: &RunConfig, cache: &OperatorCache, body: &mut Body) -> Result<(), CliError> {
    let mut instances = Vec::new();
    for &dim in &cfg.grid_dim {
        for &s in &cfg.grid_s {
            for &p in &cfg.grid_p {
                for &lambda in &cfg.grid_lambda {
                    instances.push(ProblemParams { dim, s, p, lambda });
                }
            }
        }
    }
    let parts: Vec<Result<Body, CliError>> = instances
        .par_iter()
        .map(|params| {
            let mut part = Body::default();
            let prefix = format!("N={} s={} p={} λ={}/", params.dim, params.s, params.p, params.lambda);
            verify(cfg, *params, cache, &mut part, &prefix)?;
            Ok(part)
        })
        .collect();
    for part in parts {
        let part = part?;
        body.checks.extend(part.checks);
        body.notes.extend(part.notes);
        for k in part.provenance.cache_keys {
            if !body.provenance.cache_keys.contains(&k) {
                body.provenance.cache_keys.push(k);
            }
        }
    }
    body.data.insert("instances".into(), json!(instances.len()));
    Ok(())
}

fn trace_csv(trace: &ContinuationTrace) -> String {
    let mut out = format!("{},value,w_origin,w_integral,sign_changes,gap_low,gap_high,lambda_margin_l1,lambda_margin_l2,jump\n", trace.parameter);
    for r in &trace.records {
        let (gl, gh, l1, l2) = r.margins.as_ref().map_or((f64::NAN, f64::NAN, f64::NAN, f64::NAN), |m| {
            let l = |k: usize| m.lambda_margins.get(k).map_or(f64::NAN, |x| x.1);
            (m.gap_low, m.gap_high, l(0), l(1))
        });
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{},{:e},{:e},{:e},{:e},{:e}",
            r.parameter, r.value, r.sign_data.0, r.sign_data.1, r.sign_changes, gl, gh, l1, l2, r.jump
        );
    }
    out
}

fn continuation_p(cfg: &RunConfig, cache: &OperatorCache, body: &mut Body) -> Result<(), CliError> {
    let params = cfg.params();
    let n = cfg.knots;
    let knots: Vec<f64> = (0..n).map(|i| cfg.p + (cfg.p_end - cfg.p) * i as f64 / (n - 1) as f64).collect();
    let mesh = cfg.mesh_settings();
    let solver = cfg.solver();
    body.provenance.cache_keys = (0..=2).map(|l| OperatorCache::key(params.dim, params.s, l, &mesh)).collect();
    let forward = match continue_in_p(params, &knots, mesh, cache, &solver, None) {
        Ok(t) => t,
        Err(Error::ContinuationAlarm { value, reason, .. }) => {
            body.checks.push(Check::new("continuation_alarm", -1.0, 0.0).with("p", value));
            body.notes.push(format!("continuation alarm at p = {value}: {reason}"));
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let back: Vec<f64> = knots.iter().rev().copied().collect();
    let backward = match continue_in_p(params, &back, mesh, cache, &solver, forward.solutions.last()) {
        Ok(t) => t,
        Err(Error::ContinuationAlarm { value, reason, .. }) => {
            body.checks.extend(tagged("forward/", forward.checks()));
            body.checks.push(Check::new("continuation_alarm", -1.0, 0.0).with("p", value));
            body.notes.push(format!("continuation alarm at p = {value} on the return path: {reason}"));
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let start = &forward.solutions[0].u;
    let end = &backward.solutions.last().expect("nonempty").u;
    let ret = end.distance_inf(start) / start.norm_inf();
    body.checks.extend(tagged("forward/", forward.checks()));
    body.checks.extend(tagged("backward/", backward.checks()));
    body.checks.push(Check::new("path_return", 1e-6 - ret, 0.0).with("distance", ret));
    let floor = forward.min_margin().unwrap_or(f64::NAN).min(backward.min_margin().unwrap_or(f64::NAN));
    body.checks.push(Check::new("margin_floor", floor, 0.0));
    body.data.insert("knots".into(), json!(knots));
    body.data.insert("energies".into(), json!(forward.records.iter().map(|r| r.value).collect::<Vec<_>>()));
    body.data.insert("substeps".into(), json!(forward.substeps + backward.substeps));

    body.file("continue_p.csv", trace_csv(&forward), Format::Csv);
    let series = |f: &dyn Fn(&mixed_nonlocal::spectral::NondegeneracyMargins<f64>) -> f64| -> Vec<(f64, f64)> {
        forward
            .records
            .iter()
            .filter_map(|r| r.margins.as_ref().map(|m| (r.parameter, f(m))))
            .collect()
    };
    let svg = LinePlot::new("non-degeneracy margins along the p-path", "p", "margin")
        .series("σ₂ + λ", series(&|m| m.gap_high))
        .series("-λ - σ₁", series(&|m| m.gap_low))
        .series("Λ(ℓ=1) - (p-1)", series(&|m| m.lambda_margins[0].1))
        .series("Λ(ℓ=2) - (p-1)", series(&|m| m.lambda_margins[1].1))
        .render();
    body.file("continue_p.svg", svg, Format::Svg);
    Ok(())
}

fn continuation_s(cfg: &RunConfig, cache: &OperatorCache, body: &mut Body) -> Result<(), CliError> {
    let mesh = cfg.mesh_settings();
    let trace = continue_in_s(cfg.dim, &cfg.s_knots, mesh, cache)?;
    body.checks = trace.checks();
    body.notes = trace.warnings();
    body.provenance.cache_keys = cfg
        .s_knots
        .iter()
        .flat_map(|&s| (0..=2).map(move |l| OperatorCache::key(cfg.dim, s, l, &mesh)))
        .collect();
    body.data.insert("lambda2".into(), json!(trace.records.iter().map(|r| r.value).collect::<Vec<_>>()));
    body.file("continue_s.csv", trace_csv(&trace), Format::Csv);
    let svg = LinePlot::new("second radial eigenvalue", "s", "λ₂(s)")
        .series("λ₂", trace.records.iter().map(|r| (r.parameter, r.value)).collect())
        .render();
    body.file("continue_s.svg", svg, Format::Svg);
    Ok(())
}

fn extend(cfg: &RunConfig, cache: &OperatorCache, body: &mut Body) -> Result<(), CliError> {
    let params = cfg.params();
    let inst = Instance::prepare(params, cfg.mesh_settings(), cache, &cfg.solver())?;
    let spec = KernelSpec::new(params.dim, params.s, 0)?;
    let u = &inst.ground.u;
    let trace = neumann_trace(u, &spec, &cfg.heights)?;
    let image = apply_fractional(u, &inst.radial)?;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (i, &r) in u.mesh().nodes().iter().enumerate() {
        if r <= TRACE_WINDOW {
            num = num.max((trace.value(i) - image.value(i)).abs());
            den = den.max(image.value(i).abs());
        }
    }
    let dev = num / den;
    let ratio = moment_limit(u, &spec, 50.0)?;
    body.checks = vec![
        Check::new("trace_consistency", 0.05 - dev, 0.0).with("deviation", dev),
        Check::new("moment_ratio", 0.02 - (ratio - 1.0).abs(), 0.0).with("ratio", ratio),
    ];
    let (lambda1, _) = first_eigen_lambda1(&inst.radial)?;
    body.data.insert("lambda1".into(), json!(lambda1));
    body.data.insert("moment_ratio".into(), json!(ratio));
    body.provenance.cache_keys = vec![OperatorCache::key(params.dim, params.s, 0, &cfg.mesh_settings())];

    let radii: Vec<f64> = (0..=30).map(|i| 0.05 * i as f64).collect();
    let heights = [0.5, 0.2, 0.1, 0.05];
    let sample = cs_extend(u, &radii, &heights, &spec)?;
    body.file("extension.csv", sample.to_csv(), Format::Csv);
    body.file("trace.csv", profile_csv(&[("trace", &trace), ("fractional", &image)]), Format::Csv);
    let mut plot = LinePlot::new("s-harmonic extension", "r", "W(r, t)");
    for (j, t) in heights.iter().enumerate() {
        plot = plot.series(&format!("t = {t}"), radii.iter().zip(&sample.values).map(|(&r, row)| (r, row[j])).collect());
    }
    body.file("extension.svg", plot.render(), Format::Svg);
    let window = |f: &RadialFunction<f64>| -> Vec<(f64, f64)> {
        profile_points(f).into_iter().filter(|p| p.0 <= TRACE_WINDOW).collect()
    };
    let svg = LinePlot::new("Neumann trace and fractional Laplacian", "r", "(-Δ)^s u")
        .series("trace", window(&trace))
        .series("assembled", window(&image))
        .render();
    body.file("trace.svg", svg, Format::Svg);
    Ok(())
}

/// One line per failed check, then a verdict line.
pub fn summary(report: &Report) -> String {
    let mut out = String::new();
    for r in report.results.iter().filter(|r| !r.verdict) {
        let _ = writeln!(out, "FAIL {} (margin {:e}, tolerance {:e})", r.name, r.margin, r.tolerance);
    }
    if let Some(e) = &report.error {
        let _ = writeln!(out, "error: {e}");
    }
    let passed = report.results.iter().filter(|r| r.verdict).count();
    let _ = writeln!(
        out,
        "{}: {passed}/{} checks passed",
        report.config.command.as_str(),
        report.results.len()
    );
    out
}
