use std::sync::{Arc, OnceLock};

use mixed_nonlocal::cache::{MeshSettings, OperatorCache};
use mixed_nonlocal::discretization::{lp_norm_pow, power_load, RadialFunction, RadialMesh, SectorOperator};
use mixed_nonlocal::ground_state::{
    energy, first_eigen_lambda1, nehari_scale, random_positive_profile, solve_ground_state, GroundStateSolver,
    ProblemParams, SolverOptions,
};
use mixed_nonlocal::special::KernelSpec;
use mixed_nonlocal::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cache() -> &'static OperatorCache {
    static CACHE: OnceLock<OperatorCache> = OnceLock::new();
    CACHE.get_or_init(OperatorCache::in_memory)
}

fn radial(dim: usize, s: f64) -> Arc<SectorOperator<f64>> {
    cache().operator(dim, s, 0, &MeshSettings::default()).unwrap()
}

fn small_op() -> Arc<SectorOperator<f64>> {
    cache()
        .operator(2, 0.5, 0, &MeshSettings::default().with_elements(32))
        .unwrap()
}

#[test]
fn ground_state_contract() {
    for &(n, s, p, lambda) in &[(2usize, 0.5, 3.0, 0.0), (3, 0.25, 2.5, 1.0), (3, 0.75, 4.0, -2.0)] {
        let params = ProblemParams::new(n, s, p, lambda).unwrap();
        let op = radial(n, s);
        let u = solve_ground_state(&params, &op, None, 1e-10).unwrap();
        assert!(u.converged);
        assert!(u.relative_residual < 1e-8, "residual {}", u.relative_residual);
        assert!(u.is_monotone(), "N={n} s={s}: not positive and decreasing");
        let pp = lp_norm_pow(&u.u, n, p);
        assert!(u.nehari_residual.abs() < 1e-7 * pp.max(1.0));
        let identity = (0.5 - 1.0 / p) * pp;
        assert!((u.energy - identity).abs() < 1e-8 * identity);
        // the strict inequality holds node by node
        let v = u.u.values();
        assert!(v[..v.len() - 1].windows(2).all(|w| w[1] < w[0]));
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let op = small_op();
    let params = ProblemParams::new(2, 0.5, 3.0, 0.5).unwrap();
    let mesh = op.mesh.clone();
    let f = RadialFunction::from_fn(mesh.clone(), |r| 2.0 * (1.0 - r * r) + 0.3 * r);
    let g = RadialFunction::from_fn(mesh.clone(), |r| (3.0 * r).cos() * (1.0 - r));
    let x = op.dofs(&f);
    let a = op.stiffness().add_scaled(&op.mass, params.lambda);
    let b = power_load(&f, 2, 0, params.p);
    let grad: Vec<f64> = a.mul_vec(&x).iter().zip(&b).map(|(l, r)| l - r).collect();
    let directional: f64 = grad.iter().zip(op.dofs(&g)).map(|(a, b)| a * b).sum();
    let h = 1e-5;
    let shifted = |t: f64| {
        let vals: Vec<f64> = f.values().iter().zip(g.values()).map(|(a, b)| a + t * b).collect();
        energy(&RadialFunction::new(mesh.clone(), vals).unwrap(), &params, &op)
    };
    let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
    assert!((fd - directional).abs() < 1e-6 * directional.abs().max(1.0), "{fd} vs {directional}");
}

/// argmax of t ↦ I(t f) by golden-section search on the energy alone.
fn golden_max(phi: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if phi(a) < phi(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn nehari_scale_maximizes_the_fibre() {
    let op = small_op();
    let params = ProblemParams::new(2, 0.5, 3.5, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let f = random_positive_profile(&op.mesh, &mut rng);
        let t = nehari_scale(&f, &params, &op).unwrap();
        let best = golden_max(|c| energy(&f.scaled(c), &params, &op), 0.0, 10.0 * t);
        assert!((best - t).abs() < 1e-6 * t, "{best} vs {t}");
    }
}

#[test]
fn ground_state_undercuts_random_nehari_profiles() {
    let op = radial(2, 0.5);
    let params = ProblemParams::new(2, 0.5, 3.0, 0.0).unwrap();
    let u = solve_ground_state(&params, &op, None, 1e-10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let f = random_positive_profile(&op.mesh, &mut rng);
        let t = nehari_scale(&f, &params, &op).unwrap();
        let e = energy(&f.scaled(t), &params, &op);
        assert!(e >= u.energy * (1.0 - 1e-12), "{e} < {}", u.energy);
    }
}

#[test]
fn principal_eigenvalue_exceeds_the_dirichlet_value() {
    // j_{0,1}² for the disk, π² for the 3-ball
    for &(n, j2) in &[(2usize, 5.783185962946784f64), (3, std::f64::consts::PI * std::f64::consts::PI)] {
        for s in [0.25, 0.75] {
            let (lambda1, phi) = first_eigen_lambda1(&radial(n, s)).unwrap();
            assert!(lambda1 > j2, "N={n} s={s}: {lambda1}");
            assert!(phi.values()[..phi.values().len() - 1].iter().all(|&v| v > 0.0));
        }
    }
}

#[test]
fn energy_increases_with_lambda() {
    let op = radial(2, 0.5);
    let mut previous = 0.0;
    for lambda in [-3.0, 0.0, 1.0, 4.0] {
        let params = ProblemParams::new(2, 0.5, 3.0, lambda).unwrap();
        let u = solve_ground_state(&params, &op, None, 1e-10).unwrap();
        assert!(u.energy > previous);
        previous = u.energy;
    }
}

#[test]
fn multistarts_collapse() {
    let op = radial(3, 0.5);
    let params = ProblemParams::new(3, 0.5, 3.0, 1.0).unwrap();
    let solver = GroundStateSolver::new(&op, params, SolverOptions::default()).unwrap();
    let reference = solver.solve(None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let init = random_positive_profile(&op.mesh, &mut rng);
        let u = solver.solve(Some(&init)).unwrap();
        assert!(u.u.distance_inf(&reference.u) < 1e-6 * reference.u.norm_inf());
    }
}

#[test]
fn admissibility_is_enforced() {
    let op = small_op();
    let (lambda1, _) = first_eigen_lambda1(&op).unwrap();
    let params = ProblemParams::new(2, 0.5, 3.0, -lambda1 - 0.1).unwrap();
    assert!(matches!(
        GroundStateSolver::new(&op, params, SolverOptions::default()),
        Err(Error::Domain(_))
    ));
    let params = ProblemParams::new(2, 0.4, 3.0, 0.0).unwrap();
    assert!(GroundStateSolver::new(&op, params, SolverOptions::default()).is_err());
    let zero = RadialFunction::zero(op.mesh.clone());
    let params = ProblemParams::new(2, 0.5, 3.0, 0.0).unwrap();
    assert!(matches!(nehari_scale(&zero, &params, &op), Err(Error::Degenerate(_))));
}

#[test]
fn single_precision_tracks_double() {
    let mesh64 = Arc::new(RadialMesh::<f64>::build(32, 2.0, 4.0).unwrap());
    let mesh32 = Arc::new(RadialMesh::<f32>::build(32, 2.0, 4.0).unwrap());
    let op64 = SectorOperator::assemble(mesh64, KernelSpec::new(2, 0.5, 0).unwrap()).unwrap();
    let op32 = SectorOperator::assemble(mesh32, KernelSpec::new(2, 0.5f32, 0).unwrap()).unwrap();
    let u64 = solve_ground_state(&ProblemParams::new(2, 0.5, 3.0, 0.0).unwrap(), &op64, None, 1e-10).unwrap();
    let u32 = solve_ground_state(&ProblemParams::new(2, 0.5f32, 3.0, 0.0).unwrap(), &op32, None, 1e-4).unwrap();
    assert!(u32.converged);
    let rel = (f64::from(u32.energy) - u64.energy).abs() / u64.energy;
    assert!(rel < 1e-3, "f32 energy off by {rel}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn nehari_scale_is_inverse_homogeneous(c in 0.05f64..20.0, seed in 0u64..1000) {
        let op = small_op();
        let params = ProblemParams::new(2, 0.5, 3.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_positive_profile(&op.mesh, &mut rng);
        let t = nehari_scale(&f, &params, &op).unwrap();
        let tc = nehari_scale(&f.scaled(c), &params, &op).unwrap();
        prop_assert!((tc * c - t).abs() < 1e-10 * t);
    }

    #[test]
    fn fibre_energy_is_a_two_term_polynomial(t in 0.1f64..5.0, p in 2.1f64..5.0, seed in 0u64..1000) {
        let op = small_op();
        let params = ProblemParams::new(2, 0.5, p, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_positive_profile(&op.mesh, &mut rng);
        let x = op.dofs(&f);
        let q = op.stiffness().add_scaled(&op.mass, 0.3).quad_form(&x);
        let pp = lp_norm_pow(&f, 2, p);
        let expected = 0.5 * t * t * q - t.powf(p) * pp / p;
        let got = energy(&f.scaled(t), &params, &op);
        prop_assert!((got - expected).abs() < 1e-9 * (0.5 * t * t * q + t.powf(p) * pp / p));
    }
}
