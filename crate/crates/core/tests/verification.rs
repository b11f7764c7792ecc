use std::sync::OnceLock;

use mixed_nonlocal::cache::{MeshSettings, OperatorCache};
use mixed_nonlocal::ground_state::{ProblemParams, SolverOptions};
use mixed_nonlocal::verification::{
    check_nondegeneracy, check_theorem1, continue_in_p, continue_in_s, count_sign_changes, multistart_uniqueness,
    run_battery, small_p_asymptotics, tau_homotopy, BatteryOptions, Control, Instance, SIGN_TOL,
};

fn cache() -> &'static OperatorCache {
    static CACHE: OnceLock<OperatorCache> = OnceLock::new();
    CACHE.get_or_init(OperatorCache::in_memory)
}

fn base() -> ProblemParams<f64> {
    ProblemParams::new(2, 0.5, 3.0, 0.0).unwrap()
}

#[test]
fn battery_passes_on_reference_instances() {
    for params in [base(), ProblemParams::new(3, 0.25, 2.5, 1.0).unwrap()] {
        let report = run_battery(params, cache(), &BatteryOptions::default()).unwrap();
        let failed: Vec<_> = report.failures().map(|c| c.name.clone()).collect();
        assert!(report.passed(), "{params:?}: {failed:?}");
        assert!(report.checks.iter().all(|c| c.margin.is_finite()));
        assert_eq!(report.check("sign_changes").unwrap().details["count"], 1.0);
        assert!(!report.provenance.cache_keys.is_empty());
    }
}

#[test]
fn third_eigenfunction_fails_the_sign_count() {
    let opts = BatteryOptions {
        control: Control::ThirdEigenfunction,
        refine: false,
        ..Default::default()
    };
    let report = check_theorem1(base(), cache(), &opts).unwrap();
    let c = report.check("sign_changes").unwrap();
    assert!(!c.verdict);
    assert!(c.details["count"] >= 2.0);
    assert!(report.check("sign_link").unwrap().verdict);
}

#[test]
fn shifted_potential_fails_the_gap() {
    let opts = BatteryOptions {
        control: Control::ShiftedPotential,
        refine: false,
        ..Default::default()
    };
    let report = check_nondegeneracy(base(), cache(), &opts).unwrap();
    assert!(!report.check("gap_high").unwrap().verdict);
    assert!(report.check("gap_low").unwrap().verdict);
    assert!(report.check("lambda_margin_l1").unwrap().verdict);
}

#[test]
fn potential_homotopy_keeps_one_sign_change() {
    let inst = Instance::prepare(base(), MeshSettings::default(), cache(), &SolverOptions::default()).unwrap();
    for (tau, count) in tau_homotopy(&inst, &[0.0, 0.25, 0.5, 0.75, 1.0], SIGN_TOL).unwrap() {
        assert_eq!(count, 1, "τ = {tau}");
    }
    let w3 = mixed_nonlocal::spectral::sigma_spectrum(&inst.ground, &base(), &inst.radial, 3).unwrap();
    assert_eq!(count_sign_changes(w3.eigenfunction(2), SIGN_TOL).unwrap(), 2);
}

#[test]
fn sign_invariant_persists_in_s() {
    let knots = [0.1, 0.3, 0.5, 0.7, 0.9];
    let trace = continue_in_s(2, &knots, MeshSettings::default(), cache()).unwrap();
    for c in trace.checks() {
        assert!(c.verdict, "{} margin {}", c.name, c.margin);
    }
    assert!(trace.records.windows(2).all(|w| w[1].value > w[0].value));
}

#[test]
fn continuation_in_p_retraces_its_path() {
    let mesh = MeshSettings::default();
    let solver = SolverOptions::default();
    let params = base().with_p(2.2);
    let knots: Vec<f64> = (0..14).map(|i| 2.2 + 1.3 * i as f64 / 13.0).collect();
    let forward = continue_in_p(params, &knots, mesh, cache(), &solver, None).unwrap();
    assert!(forward.min_margin().unwrap() > 0.1);
    assert!(forward.checks().iter().all(|c| c.verdict));
    let back: Vec<f64> = knots.iter().rev().copied().collect();
    let backward = continue_in_p(params, &back, mesh, cache(), &solver, forward.solutions.last()).unwrap();
    let (start, end) = (&forward.solutions[0].u, &backward.solutions.last().unwrap().u);
    assert!(end.distance_inf(start) < 1e-6 * start.norm_inf());

    // a finer path lands on the same endpoint
    let fine: Vec<f64> = (0..27).map(|i| 2.2 + 1.3 * i as f64 / 26.0).collect();
    let refined = continue_in_p(params, &fine, mesh, cache(), &solver, None).unwrap();
    let (a, b) = (&forward.solutions.last().unwrap().u, &refined.solutions.last().unwrap().u);
    assert!(a.distance_inf(b) < 1e-8 * b.norm_inf());
}

#[test]
fn amplitude_tracks_the_principal_eigenvalue_near_two() {
    let rows = small_p_asymptotics(base(), &[0.2, 0.1, 0.05], MeshSettings::default(), cache(), &SolverOptions::default())
        .unwrap();
    let last = rows.last().unwrap();
    assert!((0.9..=1.1).contains(&last.ratio));
    assert!(last.profile_distance < 0.05);
    for w in rows.windows(2) {
        assert!((w[1].ratio - 1.0).abs() < (w[0].ratio - 1.0).abs());
        assert!(w[1].profile_distance < w[0].profile_distance);
    }
}

#[test]
fn multistart_is_single_clustered_and_reproducible() {
    let mesh = MeshSettings::default();
    let solver = SolverOptions::default();
    let params = ProblemParams::new(3, 0.75, 4.0, 1.0).unwrap();
    let a = multistart_uniqueness(params, 20, 2024, mesh, cache(), &solver).unwrap();
    assert_eq!(a.clusters.len(), 1);
    assert!(a.failures.is_empty());
    assert!(a.checks().iter().all(|c| c.verdict));
    let b = multistart_uniqueness(params, 20, 2024, mesh, cache(), &solver).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn disk_cache_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = MeshSettings::default().with_elements(48);
    let opts = BatteryOptions {
        mesh,
        refine: false,
        ..Default::default()
    };
    let fresh = run_battery(base(), &OperatorCache::with_directory(dir.path()).unwrap(), &opts).unwrap();
    let reloaded = run_battery(base(), &OperatorCache::with_directory(dir.path()).unwrap(), &opts).unwrap();
    assert_eq!(serde_json::to_string(&fresh).unwrap(), serde_json::to_string(&reloaded).unwrap());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 3);
}
