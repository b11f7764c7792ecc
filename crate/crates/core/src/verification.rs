//! Quantitative checks of the qualitative results: sign structure of the
//! second linearized eigenfunction, the Hopf boundary ratio, non-degeneracy,
//! continuation in s and p, the p → 2 blow-up limit and multistart uniqueness.
//!
//! Every check is reduced to a real margin against an explicit tolerance and
//! passes iff `margin > tolerance`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{MeshSettings, OperatorCache};
use crate::discretization::{RadialFunction, SectorOperator};
use crate::error::{Error, Result};
use crate::ground_state::{random_positive_profile, GroundStateSolution, GroundStateSolver, ProblemParams, SolverOptions};
use crate::linalg::generalized_symmetric_eigen;
use crate::scalar::Real;
use crate::spectral::{lambda_spectrum, sigma_spectrum_scaled, weighted_cosine, NondegeneracyMargins};

/// Boundary layer for the Hopf ratio.
pub const HOPF_LAYER: f64 = 0.1;
/// Relative threshold below which nodal values count as zero.
pub const SIGN_TOL: f64 = 1e-6;
/// Largest accepted relative change of a margin under mesh doubling.
pub const REFINEMENT_CHANGE: f64 = 0.2;
const ZEROED_FRACTION: f64 = 0.2;
const CROSSING_WARNING: f64 = 0.05;
const JUMP_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub verdict: bool,
    pub margin: f64,
    pub tolerance: f64,
    pub details: BTreeMap<String, f64>,
}

impl Check {
    pub fn new(name: impl Into<String>, margin: f64, tolerance: f64) -> Self {
        let margin = if margin.is_nan() {
            -f64::MAX
        } else {
            margin.clamp(-f64::MAX, f64::MAX)
        };
        Self {
            name: name.into(),
            verdict: margin > tolerance,
            margin,
            tolerance,
            details: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub cache_keys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub params: ProblemParams<f64>,
    pub mesh: MeshSettings,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

impl VerificationReport {
    pub fn new(params: ProblemParams<f64>, mesh: MeshSettings) -> Self {
        Self {
            params,
            mesh,
            checks: Vec::new(),
            notes: Vec::new(),
            provenance: Provenance::default(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.verdict)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.verdict)
    }

    pub fn merge(&mut self, other: VerificationReport) {
        self.checks.extend(other.checks);
        self.notes.extend(other.notes);
        for k in other.provenance.cache_keys {
            if !self.provenance.cache_keys.contains(&k) {
                self.provenance.cache_keys.push(k);
            }
        }
        self.provenance.seed = self.provenance.seed.or(other.provenance.seed);
    }
}

/// Number of sign alternations of the interior nodal values after zeroing
/// entries below `tol`·‖f‖_∞.
pub fn count_sign_changes<T: Real>(f: &RadialFunction<T>, tol: T) -> Result<usize> {
    let v = f.values();
    let interior = &v[..v.len() - 1];
    let cut = tol * f.norm_inf();
    let zeroed = interior.iter().filter(|x| x.abs() < cut || **x == T::zero()).count();
    if zeroed as f64 > ZEROED_FRACTION * interior.len() as f64 {
        return Err(Error::IndeterminateSign {
            zeroed,
            total: interior.len(),
        });
    }
    let mut last = 0i8;
    let mut changes = 0;
    for &x in interior {
        if x.abs() < cut {
            continue;
        }
        let s = if x > T::zero() { 1 } else { -1 };
        if last != 0 && s != last {
            changes += 1;
        }
        last = s;
    }
    Ok(changes)
}

/// sign(f(0)) · min f(r)/(1-r) over the nodes with 1 - layer < r < 1.
pub fn hopf_boundary_ratio<T: Real>(f: &RadialFunction<T>, layer: T) -> Result<T> {
    if !(layer > T::zero() && layer <= T::lit(0.2)) {
        return Err(Error::Argument(format!("layer {layer} outside (0, 0.2]")));
    }
    let nodes = f.mesh().nodes();
    let sign = if f.value(0) < T::zero() { -T::one() } else { T::one() };
    let mut min: Option<T> = None;
    for (i, &r) in nodes.iter().enumerate() {
        if r > T::one() - layer && r < T::one() {
            let q = f.value(i) / (T::one() - r);
            min = Some(min.map_or(q, |m: T| m.min(q)));
        }
    }
    min.map(|m| sign * m).ok_or(Error::EmptyLayer(layer.as_f64()))
}

fn layer_nodes(f: &RadialFunction<f64>, layer: f64) -> usize {
    f.mesh().nodes().iter().filter(|&&r| r > 1.0 - layer && r < 1.0).count()
}

/// Which eigenfunction of the σ-problem the sign battery inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Control {
    #[default]
    None,
    /// Run the sign battery on w₃; must fail the sign-change count.
    ThirdEigenfunction,
    /// Shift V by -(λ + σ₂) so that -λ is an eigenvalue; must fail the σ-gap.
    ShiftedPotential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryOptions {
    pub mesh: MeshSettings,
    pub refine: bool,
    pub solver: SolverOptions<f64>,
    pub control: Control,
    pub layer: f64,
    pub sign_tol: f64,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        Self {
            mesh: MeshSettings::default(),
            refine: true,
            solver: SolverOptions::default(),
            control: Control::None,
            layer: HOPF_LAYER,
            sign_tol: SIGN_TOL,
        }
    }
}

/// Ground state on one mesh together with its operators.
#[derive(Debug, Clone)]
pub struct Instance {
    pub params: ProblemParams<f64>,
    pub mesh: MeshSettings,
    pub ground: GroundStateSolution<f64>,
    pub lambda1: f64,
    pub principal: RadialFunction<f64>,
    pub radial: Arc<SectorOperator<f64>>,
}

impl Instance {
    pub fn prepare(
        params: ProblemParams<f64>,
        mesh: MeshSettings,
        cache: &OperatorCache,
        solver: &SolverOptions<f64>,
    ) -> Result<Self> {
        params.validate()?;
        let radial = cache.operator(params.dim, params.s, 0, &mesh)?;
        let gs = GroundStateSolver::new(&radial, params, *solver)?;
        let ground = gs.solve(None)?;
        if !ground.converged {
            return Err(Error::NonConvergence {
                iterations: ground.iterations,
                residual: ground.pde_residual,
            });
        }
        let lambda1 = gs.lambda1();
        let principal = gs.principal().clone();
        Ok(Self {
            params,
            mesh,
            ground,
            lambda1,
            principal,
            radial,
        })
    }

    pub fn sector(&self, cache: &OperatorCache, sector: usize) -> Result<Arc<SectorOperator<f64>>> {
        cache.operator(self.params.dim, self.params.s, sector, &self.mesh)
    }
}

/// Raw quantities behind the sign-structure checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignStructure {
    /// index k of the inspected eigenfunction w_k (2, or 3 for the control)
    pub index: usize,
    pub eigenvalue: f64,
    pub next_eigenvalue: f64,
    pub gap: f64,
    pub origin_value: f64,
    pub origin_ratio: f64,
    pub sign_changes: usize,
    pub integral: f64,
    /// sign(w(0))∫w / ∫|w|
    pub sign_integral: f64,
    /// largest rise of sign(w(0))·w on the inner nodal interval, over ‖w‖_∞
    pub inner_rise: f64,
    pub first_zero: f64,
    /// Hopf ratio over ‖w‖_∞
    pub hopf: f64,
    pub layer_nodes: usize,
}

/// Sign data of the k-th eigenfunction (1-based) of the σ-problem.
pub fn sign_structure(
    instance: &Instance,
    index: usize,
    tau: f64,
    layer: f64,
    sign_tol: f64,
) -> Result<SignStructure> {
    let spec = sigma_spectrum_scaled(&instance.ground, &instance.params, &instance.radial, index + 1, tau, 0.0)?;
    let w = spec.eigenfunction(index - 1);
    sign_structure_of(index, w, spec.eigenvalue(index - 1), spec.eigenvalue(index), instance.params.dim, layer, sign_tol)
}

fn sign_structure_of(
    index: usize,
    w: &RadialFunction<f64>,
    eigenvalue: f64,
    next_eigenvalue: f64,
    dim: usize,
    layer: f64,
    sign_tol: f64,
) -> Result<SignStructure> {
    let norm = w.norm_inf();
    let w0 = w.value(0);
    let sign = if w0 < 0.0 { -1.0 } else { 1.0 };
    let integral = w.ball_integral(dim);
    let abs_integral = w.map(f64::abs).ball_integral(dim);
    let sign_changes = count_sign_changes(w, sign_tol)?;

    let g: Vec<f64> = w.values().iter().map(|v| sign * v).collect();
    let nodes = w.mesh().nodes();
    let k = g.iter().position(|&x| x <= sign_tol * norm).unwrap_or(g.len() - 1);
    let first_zero = nodes[k];
    let inner = &g[..k.saturating_sub(1).max(1).min(g.len())];
    let rise = inner.windows(2).map(|d| d[1] - d[0]).fold(f64::NEG_INFINITY, f64::max);

    Ok(SignStructure {
        index,
        eigenvalue,
        next_eigenvalue,
        gap: next_eigenvalue - eigenvalue,
        origin_value: w0,
        origin_ratio: w0.abs() / norm,
        sign_changes,
        integral,
        sign_integral: sign * integral / abs_integral,
        inner_rise: if rise.is_finite() { rise / norm } else { 0.0 },
        first_zero,
        hopf: hopf_boundary_ratio(w, layer)? / norm,
        layer_nodes: layer_nodes(w, layer),
    })
}

fn relative_change(coarse: f64, fine: f64) -> f64 {
    (coarse - fine).abs() / fine.abs().max(f64::MIN_POSITIVE)
}

fn refinement_check(name: &str, coarse: f64, fine: f64) -> Check {
    let change = relative_change(coarse, fine);
    Check::new(format!("{name}_refinement"), REFINEMENT_CHANGE - change, 0.0)
        .with("coarse", coarse)
        .with("fine", fine)
        .with("relative_change", change)
}

fn sign_checks(st: &SignStructure) -> Vec<Check> {
    let c_ok = st.sign_changes == 1;
    let d_ok = st.sign_integral < 0.0;
    vec![
        Check::new("sigma_gap", st.gap, 1e-6 * (1.0 + st.eigenvalue.abs()))
            .with("sigma", st.eigenvalue)
            .with("sigma_next", st.next_eigenvalue),
        Check::new("origin_value", st.origin_ratio, 1e-3).with("w_origin", st.origin_value),
        Check::new("sign_changes", 0.5 - (st.sign_changes as f64 - 1.0).abs(), 0.0)
            .with("count", st.sign_changes as f64),
        Check::new("sign_criterion", -st.sign_integral, 0.0).with("integral", st.integral),
        Check::new("inner_monotone", -st.inner_rise, -1e-12).with("first_zero", st.first_zero),
        Check::new("hopf_ratio", -st.hopf, 0.0).with("layer_nodes", st.layer_nodes as f64),
        Check::new("sign_link", if c_ok == d_ok { 1.0 } else { -1.0 }, 0.0)
            .with("single_change", f64::from(u8::from(c_ok)))
            .with("negative_integral", f64::from(u8::from(d_ok))),
    ]
}

/// Non-degeneracy margins with an optional constant shift of the potential.
pub fn shifted_margins(
    instance: &Instance,
    cache: &OperatorCache,
    shift: f64,
) -> Result<NondegeneracyMargins<f64>> {
    let (u, params) = (&instance.ground, &instance.params);
    let sigma = sigma_spectrum_scaled(u, params, &instance.radial, 2, 1.0, shift)?;
    let (sigma1, sigma2) = (sigma.eigenvalue(0), sigma.eigenvalue(1));
    let lam0 = lambda_spectrum(u, params, &instance.radial, 1)?;
    let w = instance.radial.weighted_mass(crate::discretization::MassWeight::Power {
        base: &u.u,
        exponent: params.p - 2.0,
        scale: 1.0,
    });
    let alignment = weighted_cosine(&w, &instance.radial.dofs(lam0.eigenfunction(0)), &instance.radial.dofs(&u.u));
    let mut lambda_margins = Vec::new();
    for sector in [1usize, 2] {
        let op = instance.sector(cache, sector)?;
        let spec = lambda_spectrum(u, params, &op, 1)?;
        lambda_margins.push((sector, spec.eigenvalue(0) - (params.p - 1.0)));
    }
    Ok(NondegeneracyMargins {
        sigma1,
        sigma2,
        gap_low: -params.lambda - sigma1,
        gap_high: sigma2 + params.lambda,
        lambda_margins,
        radial_lambda: lam0.eigenvalue(0),
        radial_alignment: alignment,
    })
}

pub fn nondegeneracy_checks(m: &NondegeneracyMargins<f64>) -> Vec<Check> {
    let noise = 1e-6 * (1.0 + m.sigma1.abs().max(m.sigma2.abs()));
    let mut out = vec![
        Check::new("gap_low", m.gap_low, noise).with("sigma1", m.sigma1),
        Check::new("gap_high", m.gap_high, noise).with("sigma2", m.sigma2),
    ];
    for &(l, v) in &m.lambda_margins {
        out.push(Check::new(format!("lambda_margin_l{l}"), v, 1e-6).with("sector", l as f64));
    }
    out.push(Check::new("radial_lambda_one", 1e-3 - (m.radial_lambda - 1.0).abs(), 0.0).with("lambda1", m.radial_lambda));
    out.push(Check::new("radial_alignment", m.radial_alignment - 0.999, 0.0).with("cosine", m.radial_alignment));
    out
}

fn shift_for(instance: &Instance, control: Control) -> Result<f64> {
    if control != Control::ShiftedPotential {
        return Ok(0.0);
    }
    let sigma = sigma_spectrum_scaled(&instance.ground, &instance.params, &instance.radial, 2, 1.0, 0.0)?;
    Ok(-(instance.params.lambda + sigma.eigenvalue(1)))
}

struct Levels {
    coarse: Instance,
    fine: Option<Instance>,
}

fn levels(params: ProblemParams<f64>, cache: &OperatorCache, opts: &BatteryOptions) -> Result<Levels> {
    let coarse = Instance::prepare(params, opts.mesh, cache, &opts.solver)?;
    let fine = if opts.refine {
        Some(Instance::prepare(params, opts.mesh.refined(), cache, &opts.solver)?)
    } else {
        None
    };
    Ok(Levels { coarse, fine })
}

fn sign_part(lv: &Levels, opts: &BatteryOptions) -> Result<Vec<Check>> {
    let index = if opts.control == Control::ThirdEigenfunction { 3 } else { 2 };
    let st = sign_structure(&lv.coarse, index, 1.0, opts.layer, opts.sign_tol)?;
    let mut checks = sign_checks(&st);
    if let Some(fine) = &lv.fine {
        let sf = sign_structure(fine, index, 1.0, opts.layer, opts.sign_tol)?;
        checks.push(refinement_check("sigma_gap", st.gap, sf.gap));
        checks.push(refinement_check("origin_value", st.origin_ratio, sf.origin_ratio));
        checks.push(refinement_check("sign_criterion", st.sign_integral, sf.sign_integral));
        checks.push(refinement_check("hopf_ratio", st.hopf, sf.hopf));
        checks.push(Check::new(
            "sign_changes_refinement",
            0.5 - (st.sign_changes as f64 - sf.sign_changes as f64).abs(),
            0.0,
        ));
    }
    Ok(checks)
}

fn nondegeneracy_part(lv: &Levels, cache: &OperatorCache, opts: &BatteryOptions, notes: &mut Vec<String>) -> Result<Vec<Check>> {
    let shift = shift_for(&lv.coarse, opts.control)?;
    let m = shifted_margins(&lv.coarse, cache, shift)?;
    if m.gap_low <= 0.0 {
        notes.push(
            "σ₁ ≥ -λ: precondition λ > -λ₁ holds but the instance is not a ground-state linearization".into(),
        );
    }
    let mut checks = nondegeneracy_checks(&m);
    if let Some(fine) = &lv.fine {
        let shift = shift_for(fine, opts.control)?;
        let f = shifted_margins(fine, cache, shift)?;
        checks.push(refinement_check("gap_low", m.gap_low, f.gap_low));
        checks.push(refinement_check("gap_high", m.gap_high, f.gap_high));
        for (&(l, a), &(_, b)) in m.lambda_margins.iter().zip(&f.lambda_margins) {
            checks.push(refinement_check(&format!("lambda_margin_l{l}"), a, b));
        }
    }
    Ok(checks)
}

/// Cache keys of the sectors 0..=max_sector on the battery's meshes.
pub fn instance_keys(params: &ProblemParams<f64>, opts: &BatteryOptions, max_sector: usize) -> Vec<String> {
    let mut meshes = vec![opts.mesh];
    if opts.refine {
        meshes.push(opts.mesh.refined());
    }
    meshes
        .iter()
        .flat_map(|m| (0..=max_sector).map(move |l| OperatorCache::key(params.dim, params.s, l, m)))
        .collect()
}

fn new_report(params: ProblemParams<f64>, opts: &BatteryOptions, max_sector: usize) -> VerificationReport {
    let mut r = VerificationReport::new(params, opts.mesh);
    r.provenance.cache_keys = instance_keys(&params, opts, max_sector);
    r
}

/// Sub-checks (a)-(f) of the sign structure of w₂, their (c)/(d) agreement,
/// and the change of each margin under mesh doubling.
pub fn check_theorem1(params: ProblemParams<f64>, cache: &OperatorCache, opts: &BatteryOptions) -> Result<VerificationReport> {
    let lv = levels(params, cache, opts)?;
    let checks = sign_part(&lv, opts)?;
    let mut r = new_report(params, opts, 0);
    r.checks = checks;
    Ok(r)
}

/// σ₁ < -λ < σ₂, Λ_min(ℓ) > p - 1 for ℓ = 1, 2, and the radial eigenpair (1, u).
pub fn check_nondegeneracy(params: ProblemParams<f64>, cache: &OperatorCache, opts: &BatteryOptions) -> Result<VerificationReport> {
    let lv = levels(params, cache, opts)?;
    let mut notes = Vec::new();
    let checks = nondegeneracy_part(&lv, cache, opts, &mut notes)?;
    let mut r = new_report(params, opts, 2);
    r.checks = checks;
    r.notes = notes;
    Ok(r)
}

/// Both batteries on shared ground states.
pub fn run_battery(params: ProblemParams<f64>, cache: &OperatorCache, opts: &BatteryOptions) -> Result<VerificationReport> {
    let lv = levels(params, cache, opts)?;
    let mut notes = Vec::new();
    let mut checks = sign_part(&lv, opts)?;
    checks.extend(nondegeneracy_part(&lv, cache, opts, &mut notes)?);
    let mut r = new_report(params, opts, 2);
    r.checks = checks;
    r.notes = notes;
    Ok(r)
}

/// Sign-change count of the second σ-eigenfunction of (K + τM_V, M) for each τ.
pub fn tau_homotopy(instance: &Instance, taus: &[f64], sign_tol: f64) -> Result<Vec<(f64, usize)>> {
    taus.iter()
        .map(|&tau| {
            let spec = sigma_spectrum_scaled(&instance.ground, &instance.params, &instance.radial, 2, tau, 0.0)?;
            Ok((tau, count_sign_changes(spec.eigenfunction(1), sign_tol)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotRecord {
    pub parameter: f64,
    /// λ_{2,s} for the s-continuation, the energy for the p-continuation
    pub value: f64,
    /// (w(0), ∫w) of the second eigenfunction
    pub sign_data: (f64, f64),
    pub sign_changes: usize,
    pub margins: Option<NondegeneracyMargins<f64>>,
    /// relative L∞ distance to the previous knot's profile
    pub jump: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuationTrace {
    pub parameter: String,
    pub knots: Vec<f64>,
    pub solutions: Vec<GroundStateSolution<f64>>,
    pub records: Vec<KnotRecord>,
    /// knots that needed step halving
    pub substeps: usize,
}

impl ContinuationTrace {
    /// Largest jump relative to 10·h·D, D the median of jump/h along the path.
    pub fn jump_ratio(&self) -> f64 {
        let mut rates: Vec<f64> = Vec::new();
        for k in 1..self.records.len() {
            let h = (self.knots[k] - self.knots[k - 1]).abs();
            rates.push(self.records[k].jump / h);
        }
        if rates.is_empty() {
            return 0.0;
        }
        let mut sorted = rates.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let median = sorted[sorted.len() / 2];
        if median == 0.0 {
            return 0.0;
        }
        rates.iter().fold(0.0f64, |m, &r| m.max(r / (JUMP_FACTOR * median)))
    }

    pub fn min_margin(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.margins.as_ref().map(|m| m.min_margin()))
            .reduce(f64::min)
    }

    pub fn warnings(&self) -> Vec<String> {
        self.records.iter().flat_map(|r| r.warnings.iter().cloned()).collect()
    }

    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        for r in &self.records {
            let tag = format!("{}={}", self.parameter, r.parameter);
            out.push(
                Check::new(format!("sign_changes[{tag}]"), 0.5 - (r.sign_changes as f64 - 1.0).abs(), 0.0)
                    .with("count", r.sign_changes as f64),
            );
            let (w0, int) = r.sign_data;
            out.push(
                Check::new(format!("sign_criterion[{tag}]"), -(w0.signum() * int), 0.0)
                    .with("origin", w0)
                    .with("integral", int),
            );
            if let Some(m) = &r.margins {
                out.push(Check::new(format!("min_margin[{tag}]"), m.min_margin(), 0.0));
            }
        }
        out.push(Check::new("continuity", 1.0 - self.jump_ratio(), 0.0));
        out
    }
}

/// Second radial eigenpair of the pure problem (K, M) at each s.
pub fn continue_in_s(dim: usize, knots: &[f64], mesh: MeshSettings, cache: &OperatorCache) -> Result<ContinuationTrace> {
    if knots.iter().any(|&s| !(s > 0.0 && s < 1.0)) {
        return Err(Error::Domain("s-knots must lie in (0, 1)".into()));
    }
    let mut records: Vec<KnotRecord> = Vec::with_capacity(knots.len());
    let mut previous: Option<RadialFunction<f64>> = None;
    for &s in knots {
        let op = cache.operator(dim, s, 0, &mesh)?;
        let eig = generalized_symmetric_eigen(&op.stiffness(), &op.mass)?;
        let lambda2 = eig.values[1];
        let mut v = eig.vector(1);
        if v[0] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let phi = op.function(&v)?.scaled(1.0 / v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        let mut warnings = Vec::new();
        for sector in [1usize, 2] {
            let other = cache.operator(dim, s, sector, &mesh)?;
            let e = generalized_symmetric_eigen(&other.stiffness(), &other.mass)?.values[0];
            if (e - lambda2).abs() < CROSSING_WARNING * lambda2 {
                warnings.push(format!(
                    "s = {s}: λ_2 = {lambda2:.6} within {:.0}% of the ℓ = {sector} eigenvalue {e:.6}",
                    CROSSING_WARNING * 100.0
                ));
            }
        }
        let jump = previous.as_ref().map_or(0.0, |p| phi.distance_inf(p));
        records.push(KnotRecord {
            parameter: s,
            value: lambda2,
            sign_data: (phi.value(0), phi.ball_integral(dim)),
            sign_changes: count_sign_changes(&phi, SIGN_TOL)?,
            margins: None,
            jump,
            warnings,
        });
        previous = Some(phi);
    }
    Ok(ContinuationTrace {
        parameter: "s".into(),
        knots: knots.to_vec(),
        solutions: Vec::new(),
        records,
        substeps: 0,
    })
}

fn relative_distance(a: &RadialFunction<f64>, b: &RadialFunction<f64>) -> f64 {
    a.distance_inf(b) / b.norm_inf()
}

const MAX_HALVINGS: usize = 4;

/// Natural-parameter continuation in p with warm-started Newton correctors.
///
/// A failed corrector halves the step up to four times before raising a
/// continuation alarm; so does a non-degeneracy margin crossing zero.
pub fn continue_in_p(
    params: ProblemParams<f64>,
    knots: &[f64],
    mesh: MeshSettings,
    cache: &OperatorCache,
    solver: &SolverOptions<f64>,
    start: Option<&GroundStateSolution<f64>>,
) -> Result<ContinuationTrace> {
    if knots.len() < 2 {
        return Err(Error::Argument("need at least two p-knots".into()));
    }
    let ascending = knots.windows(2).all(|w| w[1] > w[0]);
    let descending = knots.windows(2).all(|w| w[1] < w[0]);
    if !(ascending || descending) {
        return Err(Error::Argument("p-knots must be strictly monotone".into()));
    }
    let radial = cache.operator(params.dim, params.s, 0, &mesh)?;
    let ops = [
        radial.clone(),
        cache.operator(params.dim, params.s, 1, &mesh)?,
        cache.operator(params.dim, params.s, 2, &mesh)?,
    ];
    let refs: Vec<&SectorOperator<f64>> = ops.iter().map(|o| o.as_ref()).collect();

    let alarm = |p: f64, reason: String| Error::ContinuationAlarm {
        parameter: "p".into(),
        value: p,
        reason,
    };
    let corrector = |p: f64, warm: Option<&RadialFunction<f64>>| -> Result<GroundStateSolution<f64>> {
        let gs = GroundStateSolver::new(&radial, params.with_p(p), *solver)?;
        let sol = match warm {
            Some(w) => gs.refine(w)?,
            None => gs.solve(None)?,
        };
        if sol.converged {
            Ok(sol)
        } else {
            Err(Error::NonConvergence {
                iterations: sol.iterations,
                residual: sol.pde_residual,
            })
        }
    };

    let first = match start {
        Some(s) if (s.params.p - knots[0]).abs() < 1e-14 => s.clone(),
        Some(s) => corrector(knots[0], Some(&s.u))?,
        None => corrector(knots[0], None)?,
    };
    let mut solutions = vec![first];
    let mut substeps = 0;
    for w in knots.windows(2) {
        let (p0, p1) = (w[0], w[1]);
        let mut current = solutions.last().expect("nonempty").clone();
        let mut at = p0;
        let mut h = p1 - p0;
        let mut halvings = 0;
        while (p1 - at).abs() > 1e-14 {
            let target = if (p1 - at).abs() <= h.abs() * (1.0 + 1e-12) { p1 } else { at + h };
            match corrector(target, Some(&current.u)) {
                Ok(sol) => {
                    current = sol;
                    at = target;
                }
                Err(e) => {
                    halvings += 1;
                    if halvings > MAX_HALVINGS {
                        return Err(alarm(target, format!("corrector failed after {MAX_HALVINGS} step halvings: {e}")));
                    }
                    h *= 0.5;
                }
            }
        }
        if halvings > 0 {
            substeps += 1;
        }
        solutions.push(current);
    }

    let mut records = Vec::with_capacity(knots.len());
    for (k, sol) in solutions.iter().enumerate() {
        let p = knots[k];
        let local = params.with_p(p);
        let margins = crate::spectral::nondegeneracy_margins(sol, &local, &refs)?;
        if !margins.nondegenerate() {
            return Err(alarm(p, format!("non-degeneracy margin {} ≤ 0", margins.min_margin())));
        }
        let sigma = sigma_spectrum_scaled(sol, &local, &radial, 2, 1.0, 0.0)?;
        let w2 = sigma.eigenfunction(1);
        records.push(KnotRecord {
            parameter: p,
            value: sol.energy,
            sign_data: (w2.value(0), w2.ball_integral(params.dim)),
            sign_changes: count_sign_changes(w2, SIGN_TOL)?,
            margins: Some(margins),
            jump: if k == 0 { 0.0 } else { relative_distance(&sol.u.scaled(1.0 / sol.u.norm_inf()), &solutions[k - 1].u.scaled(1.0 / solutions[k - 1].u.norm_inf())) },
            warnings: Vec::new(),
        });
    }
    Ok(ContinuationTrace {
        parameter: "p".into(),
        knots: knots.to_vec(),
        solutions,
        records,
        substeps,
    })
}

/// p → 2 limit of the ground state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticRow {
    pub p: f64,
    pub amplitude_power: f64,
    pub lambda_shift: f64,
    pub ratio: f64,
    pub profile_distance: f64,
}

/// ‖u‖_∞^{p-2}/(λ₁ + λ) and ‖u/‖u‖_∞ - φ₁/‖φ₁‖_∞‖_∞ at p = 2 + ε.
pub fn small_p_asymptotics(
    params: ProblemParams<f64>,
    eps: &[f64],
    mesh: MeshSettings,
    cache: &OperatorCache,
    solver: &SolverOptions<f64>,
) -> Result<Vec<AsymptoticRow>> {
    let radial = cache.operator(params.dim, params.s, 0, &mesh)?;
    eps.iter()
        .map(|&e| {
            let p = 2.0 + e;
            let gs = GroundStateSolver::new(&radial, params.with_p(p), *solver)?;
            let sol = gs.solve(None)?;
            let amp = sol.u.norm_inf();
            let phi = gs.principal();
            let shift = gs.lambda1() + params.lambda;
            let amplitude_power = amp.powf(e);
            Ok(AsymptoticRow {
                p,
                amplitude_power,
                lambda_shift: shift,
                ratio: amplitude_power / shift,
                profile_distance: sol.u.scaled(1.0 / amp).distance_inf(&phi.scaled(1.0 / phi.norm_inf())),
            })
        })
        .collect()
}

pub fn asymptotics_checks(rows: &[AsymptoticRow]) -> Vec<Check> {
    let mut out = Vec::new();
    let Some(last) = rows.last() else { return out };
    out.push(Check::new("blowup_ratio", 0.1 - (last.ratio - 1.0).abs(), 0.0).with("ratio", last.ratio));
    out.push(Check::new("blowup_profile", 0.05 - last.profile_distance, 0.0).with("distance", last.profile_distance));
    let worst_ratio = rows
        .windows(2)
        .map(|w| (w[0].ratio - 1.0).abs() - (w[1].ratio - 1.0).abs())
        .fold(f64::INFINITY, f64::min);
    let worst_profile = rows
        .windows(2)
        .map(|w| w[0].profile_distance - w[1].profile_distance)
        .fold(f64::INFINITY, f64::min);
    if rows.len() > 1 {
        out.push(Check::new("blowup_ratio_monotone", worst_ratio, 0.0));
        out.push(Check::new("blowup_profile_monotone", worst_profile, 0.0));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultistartReport {
    pub seed: u64,
    pub energies: Vec<f64>,
    pub failures: Vec<(usize, String)>,
    /// largest pairwise relative L∞ distance
    pub max_distance: f64,
    /// largest pairwise relative energy difference
    pub max_energy_spread: f64,
    /// greedy clusters at the 1e-6 threshold, as start indices
    pub clusters: Vec<Vec<usize>>,
    pub representative: Option<GroundStateSolution<f64>>,
}

pub const CLUSTER_DISTANCE: f64 = 1e-6;
pub const CLUSTER_ENERGY: f64 = 1e-10;

impl MultistartReport {
    pub fn checks(&self) -> Vec<Check> {
        vec![
            Check::new("multistart_failures", 0.5 - self.failures.len() as f64, 0.0),
            Check::new("multistart_distance", CLUSTER_DISTANCE - self.max_distance, 0.0)
                .with("max_distance", self.max_distance),
            Check::new("multistart_energy", CLUSTER_ENERGY - self.max_energy_spread, 0.0)
                .with("max_spread", self.max_energy_spread),
            Check::new("multistart_clusters", 1.5 - self.clusters.len() as f64, 0.0)
                .with("clusters", self.clusters.len() as f64),
        ]
    }
}

/// Solves from `n_starts` seeded random positive profiles; start i draws from
/// stream i of ChaCha8 seeded with `seed`.
pub fn multistart_uniqueness(
    params: ProblemParams<f64>,
    n_starts: usize,
    seed: u64,
    mesh: MeshSettings,
    cache: &OperatorCache,
    solver: &SolverOptions<f64>,
) -> Result<MultistartReport> {
    if n_starts < 10 {
        return Err(Error::Argument(format!("{n_starts} starts; need at least 10")));
    }
    let radial = cache.operator(params.dim, params.s, 0, &mesh)?;
    let gs = GroundStateSolver::new(&radial, params, *solver)?;
    let grid = cache.mesh(&mesh)?;
    let runs: Vec<Result<GroundStateSolution<f64>>> = (0..n_starts)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let init = random_positive_profile(&grid, &mut rng);
            let sol = gs.solve(Some(&init))?;
            if sol.converged {
                Ok(sol)
            } else {
                Err(Error::NonConvergence {
                    iterations: sol.iterations,
                    residual: sol.pde_residual,
                })
            }
        })
        .collect();
    let mut sols: Vec<(usize, GroundStateSolution<f64>)> = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in runs.into_iter().enumerate() {
        match r {
            Ok(s) => sols.push((i, s)),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    let mut max_distance = 0.0f64;
    let mut max_energy_spread = 0.0f64;
    for a in 0..sols.len() {
        for b in a + 1..sols.len() {
            let (ua, ub) = (&sols[a].1, &sols[b].1);
            max_distance = max_distance.max(relative_distance(&ua.u, &ub.u));
            max_energy_spread = max_energy_spread.max((ua.energy - ub.energy).abs() / ub.energy.abs());
        }
    }
    // clusters hold positions into `sols`; the first member is the representative
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (k, (_, s)) in sols.iter().enumerate() {
        match clusters
            .iter_mut()
            .find(|c| relative_distance(&s.u, &sols[c[0]].1.u) < CLUSTER_DISTANCE)
        {
            Some(c) => c.push(k),
            None => clusters.push(vec![k]),
        }
    }
    let clusters: Vec<Vec<usize>> = clusters
        .into_iter()
        .map(|c| c.into_iter().map(|k| sols[k].0).collect())
        .collect();
    Ok(MultistartReport {
        seed,
        energies: sols.iter().map(|(_, s)| s.energy).collect(),
        failures,
        max_distance,
        max_energy_spread,
        clusters,
        representative: sols.first().map(|(_, s)| s.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::RadialMesh;

    fn mesh() -> Arc<RadialMesh<f64>> {
        Arc::new(RadialMesh::build(64, 2.0, 4.0).unwrap())
    }

    #[test]
    fn sign_changes_of_simple_profiles() {
        let m = mesh();
        assert_eq!(count_sign_changes(&RadialFunction::from_fn(m.clone(), |r| 1.0 - 2.0 * r * r), 1e-8).unwrap(), 1);
        assert_eq!(count_sign_changes(&RadialFunction::from_fn(m.clone(), |r| 1.0 - r), 1e-8).unwrap(), 0);
        let f = RadialFunction::from_fn(m.clone(), |r| (3.0 * std::f64::consts::PI * r).cos() * (1.0 - r));
        assert_eq!(count_sign_changes(&f, 1e-8).unwrap(), 3);
        let mostly_zero = RadialFunction::from_fn(m, |r| if r < 0.5 { 1.0 } else { 0.0 });
        assert!(matches!(
            count_sign_changes(&mostly_zero, 1e-8),
            Err(Error::IndeterminateSign { .. })
        ));
    }

    #[test]
    fn hopf_ratio_of_simple_profiles() {
        let m = mesh();
        let linear = RadialFunction::from_fn(m.clone(), |r| 1.0 - r);
        assert!((hopf_boundary_ratio(&linear, 0.1).unwrap() - 1.0).abs() < 1e-12);
        let factored = RadialFunction::from_fn(m.clone(), |r| (1.0 - r) * (1.0 - 2.0 * r));
        assert!(hopf_boundary_ratio(&factored, 0.1).unwrap() < -0.75);
        let flipped = factored.scaled(-1.0);
        assert!(hopf_boundary_ratio(&flipped, 0.1).unwrap() < -0.75);
        assert!(hopf_boundary_ratio(&linear, 0.3).is_err());
        let coarse = Arc::new(RadialMesh::build(16, 1.0, 4.0).unwrap());
        let f = RadialFunction::from_fn(coarse, |r| 1.0 - r);
        assert!(matches!(hopf_boundary_ratio(&f, 0.05), Err(Error::EmptyLayer(_))));
    }

    #[test]
    fn checks_compare_margin_with_tolerance() {
        assert!(Check::new("a", 1.0, 0.5).verdict);
        assert!(!Check::new("a", 0.5, 0.5).verdict);
        let nan = Check::new("a", f64::NAN, 0.0);
        assert!(!nan.verdict && nan.margin.is_finite());
    }

    fn link(c: f64) -> (bool, SignStructure) {
        let w = RadialFunction::from_fn(mesh(), |r| (1.0 - c * r * r) * (1.0 - r));
        let st = sign_structure_of(2, &w, 1.0, 2.0, 2, 0.1, 1e-8).unwrap();
        let verdict = sign_checks(&st).iter().find(|c| c.name == "sign_link").unwrap().verdict;
        (verdict, st)
    }

    #[test]
    fn sign_link_flags_disagreement() {
        // one interior zero in both cases; only the steeper profile has negative mass
        let (agree, st) = link(8.0);
        assert!(agree && st.sign_changes == 1 && st.sign_integral < 0.0);
        let (agree, st) = link(1.5);
        assert!(!agree && st.sign_changes == 1 && st.sign_integral > 0.0);
    }

    #[test]
    fn inner_interval_stops_before_the_zero() {
        let (_, st) = link(8.0);
        assert!(st.inner_rise <= 0.0);
        assert!((st.first_zero - (1.0f64 / 8.0).sqrt()).abs() < 0.05);
        assert!(st.hopf < 0.0);
    }
}
