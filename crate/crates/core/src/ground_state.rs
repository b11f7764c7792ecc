//! Positive radial ground state of
//!
//! ```text
//! -Δu + (-Δ)^s u + λu = |u|^{p-2}u  in B,   u = 0 outside B
//! ```
//!
//! on the discrete Nehari set Q_λ(u) = ‖u‖_p^p where
//! Q_λ(u) = uᵀ(K_loc + K_nl + λM)u.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::discretization::{
    lp_norm_pow, power_load, MassWeight, MeshDescriptor, RadialFunction, SectorOperator,
};
use crate::error::{Error, Result};
use crate::linalg::{dot, generalized_symmetric_eigen, Cholesky, DenseMatrix, Lu};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams<T> {
    pub dim: usize,
    pub s: T,
    pub p: T,
    pub lambda: T,
}

impl<T: Real> ProblemParams<T> {
    pub fn new(dim: usize, s: T, p: T, lambda: T) -> Result<Self> {
        let params = Self { dim, s, p, lambda };
        params.validate()?;
        Ok(params)
    }

    /// 2N/(N-2) for N ≥ 3, none for N = 2.
    pub fn critical_exponent(dim: usize) -> Option<T> {
        (dim > 2).then(|| T::from_count(2 * dim) / T::from_count(dim - 2))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Domain(format!("dimension {} < 2", self.dim)));
        }
        if !(self.s > T::zero() && self.s < T::one()) {
            return Err(Error::Domain(format!("order s = {} outside (0,1)", self.s)));
        }
        if !(self.p > T::lit(2.0)) {
            return Err(Error::Domain(format!("exponent p = {} must exceed 2", self.p)));
        }
        if let Some(crit) = Self::critical_exponent(self.dim) {
            if !(self.p < crit) {
                return Err(Error::Domain(format!(
                    "exponent p = {} not below the critical exponent {crit}",
                    self.p
                )));
            }
        }
        if !self.lambda.is_finite() {
            return Err(Error::Domain("λ must be finite".into()));
        }
        Ok(())
    }

    pub fn with_p(mut self, p: T) -> Self {
        self.p = p;
        self
    }

    pub fn with_s(mut self, s: T) -> Self {
        self.s = s;
        self
    }

    pub fn with_lambda(mut self, lambda: T) -> Self {
        self.lambda = lambda;
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundStateSolution<T> {
    pub params: ProblemParams<T>,
    pub u: RadialFunction<T>,
    pub energy: T,
    /// ⟨I'(u), u⟩ = Q_λ(u) - ‖u‖_p^p
    pub nehari_residual: T,
    /// sqrt(Fᵀ M⁻¹ F) for F = (K + λM)u - b(u)
    pub pde_residual: T,
    /// pde_residual divided by the dual norm of the load b(u)
    pub relative_residual: T,
    pub iterations: usize,
    pub descent_iterations: usize,
    pub converged: bool,
}

/// Flat JSON form of a solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionRecord<T> {
    pub params: ProblemParams<T>,
    pub mesh: MeshDescriptor,
    pub values: Vec<T>,
    pub energy: T,
    pub nehari_residual: T,
    pub pde_residual: T,
    pub iterations: usize,
}

impl<T: Real> GroundStateSolution<T> {
    pub fn record(&self) -> SolutionRecord<T> {
        SolutionRecord {
            params: self.params,
            mesh: self.u.mesh().descriptor(),
            values: self.u.values().to_vec(),
            energy: self.energy,
            nehari_residual: self.nehari_residual,
            pde_residual: self.pde_residual,
            iterations: self.iterations,
        }
    }

    /// Is u positive and non-increasing on the interior nodes?
    pub fn is_monotone(&self) -> bool {
        let v = self.u.values();
        v[..v.len() - 1].iter().all(|&x| x > T::zero()) && v.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Smallest eigenpair of (K_loc + K_nl, M) with ‖φ₁‖₂ = 1 and φ₁(0) > 0.
pub fn first_eigen_lambda1<T: Real>(op: &SectorOperator<T>) -> Result<(T, RadialFunction<T>)> {
    let eig = generalized_symmetric_eigen(&op.stiffness(), &op.mass)?;
    let mut v = eig.vector(0);
    if v[0] < T::zero() {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    if let Some(i) = v.iter().position(|&x| x <= T::zero()) {
        return Err(Error::Eigensolver(format!(
            "first eigenvector not positive at dof {i}; mesh defect"
        )));
    }
    Ok((eig.values[0], op.function(&v)?))
}

fn shifted_stiffness<T: Real>(op: &SectorOperator<T>, lambda: T) -> DenseMatrix<T> {
    op.stiffness().add_scaled(&op.mass, lambda)
}

fn nehari_scale_parts<T: Real>(q: T, pp: T, p: T) -> Result<T> {
    if !(q > T::zero()) {
        return Err(Error::Degenerate(format!("Q_λ(f) = {q} is not positive")));
    }
    if !(pp > T::zero()) {
        return Err(Error::Degenerate("‖f‖_p vanishes".into()));
    }
    Ok((q / pp).powf(T::one() / (p - T::lit(2.0))))
}

/// t* = (Q_λ(f)/‖f‖_p^p)^{1/(p-2)}, which puts t*·f on the Nehari set.
pub fn nehari_scale<T: Real>(f: &RadialFunction<T>, params: &ProblemParams<T>, op: &SectorOperator<T>) -> Result<T> {
    let x = op.dofs(f);
    let q = shifted_stiffness(op, params.lambda).quad_form(&x);
    nehari_scale_parts(q, lp_norm_pow(f, params.dim, params.p), params.p)
}

/// I(f) = ½Q_λ(f) - ‖f‖_p^p / p.
pub fn energy<T: Real>(f: &RadialFunction<T>, params: &ProblemParams<T>, op: &SectorOperator<T>) -> T {
    let x = op.dofs(f);
    let q = shifted_stiffness(op, params.lambda).quad_form(&x);
    T::lit(0.5) * q - lp_norm_pow(f, params.dim, params.p) / params.p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions<T> {
    pub tol: T,
    pub max_descent: usize,
    pub max_newton: usize,
    /// Phase 1 stops when the Nehari quotient improves by less than this, relatively.
    pub stagnation: T,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            max_descent: 2000,
            max_newton: 60,
            stagnation: T::lit(1e-10),
        }
    }
}

/// Random positive, radially non-trivial starting profile.
pub fn random_positive_profile<T: Real, R: Rng>(
    mesh: &std::sync::Arc<crate::discretization::RadialMesh<T>>,
    rng: &mut R,
) -> RadialFunction<T> {
    let a = rng.gen_range(1.0..3.0);
    let c = rng.gen_range(0.0..0.9);
    let k = rng.gen_range(1..5) as f64;
    let shift = rng.gen_range(0.0..std::f64::consts::TAU);
    let amp = rng.gen_range(0.1..10.0);
    let mut f = RadialFunction::from_fn(mesh.clone(), |r| {
        let r = r.as_f64();
        T::lit(amp * (1.0 - r.powf(a)) * (1.0 + c * (k * std::f64::consts::PI * r + shift).cos()))
    });
    let noisy: Vec<T> = f
        .values()
        .iter()
        .map(|&v| v * T::lit(1.0 + 0.2 * rng.gen::<f64>()))
        .collect();
    f = RadialFunction::new(mesh.clone(), noisy).expect("same mesh");
    f
}

/// Two-phase solver bound to one assembled ℓ = 0 operator and parameter set.
#[derive(Debug, Clone)]
pub struct GroundStateSolver<'a, T: Real> {
    op: &'a SectorOperator<T>,
    params: ProblemParams<T>,
    options: SolverOptions<T>,
    a: DenseMatrix<T>,
    a_chol: Cholesky<T>,
    m_chol: Cholesky<T>,
    lambda1: T,
    phi1: RadialFunction<T>,
}

enum NewtonFailure<T> {
    Positivity,
    Stalled { iterations: usize, residual: T },
}

impl<'a, T: Real> GroundStateSolver<'a, T> {
    pub fn new(op: &'a SectorOperator<T>, params: ProblemParams<T>, options: SolverOptions<T>) -> Result<Self> {
        params.validate()?;
        if op.sector() != 0 {
            return Err(Error::Argument(format!(
                "ground states live in the radial sector, got ℓ = {}",
                op.sector()
            )));
        }
        if op.dim() != params.dim || (op.order() - params.s).abs() > T::lit(1e-12) {
            return Err(Error::Argument("operator does not match (N, s)".into()));
        }
        let (lambda1, phi1) = first_eigen_lambda1(op)?;
        if !(params.lambda > -lambda1) {
            return Err(Error::Domain(format!(
                "λ = {} must exceed -λ₁ = {}",
                params.lambda, -lambda1
            )));
        }
        let a = shifted_stiffness(op, params.lambda);
        let a_chol = Cholesky::new(&a)?;
        let m_chol = Cholesky::new(&op.mass)?;
        Ok(Self {
            op,
            params,
            options,
            a,
            a_chol,
            m_chol,
            lambda1,
            phi1,
        })
    }

    pub fn lambda1(&self) -> T {
        self.lambda1
    }

    pub fn principal(&self) -> &RadialFunction<T> {
        &self.phi1
    }

    pub fn params(&self) -> &ProblemParams<T> {
        &self.params
    }

    pub fn operator(&self) -> &SectorOperator<T> {
        self.op
    }

    /// K + λM.
    pub fn shifted(&self) -> &DenseMatrix<T> {
        &self.a
    }

    fn function(&self, x: &[T]) -> RadialFunction<T> {
        self.op.function(x).expect("dof count matches operator")
    }

    fn p_norm(&self, x: &[T]) -> T {
        lp_norm_pow(&self.function(x), self.params.dim, self.params.p)
    }

    fn load(&self, x: &[T]) -> Vec<T> {
        power_load(&self.function(x), self.params.dim, 0, self.params.p)
    }

    /// sqrt(gᵀ M⁻¹ g).
    pub fn dual_norm(&self, g: &[T]) -> T {
        dot(g, &self.m_chol.solve(g)).max(T::zero()).sqrt()
    }

    /// F(u), its dual norm, and the dual norm of the load.
    fn residual(&self, x: &[T]) -> (Vec<T>, T, T) {
        let b = self.load(x);
        let f: Vec<T> = self.a.mul_vec(x).iter().zip(&b).map(|(&l, &r)| l - r).collect();
        let res = self.dual_norm(&f);
        let scale = self.dual_norm(&b);
        (f, res, scale)
    }

    fn quotient(&self, x: &[T]) -> T {
        self.a.quad_form(x) / self.p_norm(x).powf(T::lit(2.0) / self.params.p)
    }

    fn normalized(&self, mut x: Vec<T>) -> Vec<T> {
        let q = self.a.quad_form(&x).sqrt();
        x.iter_mut().for_each(|v| *v /= q);
        x
    }

    /// Phase 1: projected Sobolev-gradient descent of the Nehari quotient
    /// Q_λ(f)/‖f‖_p² over nonnegative profiles. Returns an A-normalized profile.
    pub fn descend(&self, init: &[T], stagnation: T) -> Result<(Vec<T>, usize)> {
        let positive: Vec<T> = init.iter().map(|&v| v.max(T::zero())).collect();
        if positive.iter().all(|&v| v == T::zero()) {
            return Err(Error::Degenerate("initial profile has no positive part".into()));
        }
        let mut f = self.normalized(positive);
        let mut r = self.quotient(&f);
        let mut iterations = 0;
        for it in 0..self.options.max_descent {
            iterations = it + 1;
            let b = self.load(&f);
            let pp = dot(&f, &b);
            let g = self.a_chol.solve(&b);
            let dir: Vec<T> = g.iter().zip(&f).map(|(&gi, &fi)| gi / pp - fi).collect();
            let mut tau = T::one();
            let mut accepted = None;
            while tau > T::lit(1e-10) {
                let cand: Vec<T> = f
                    .iter()
                    .zip(&dir)
                    .map(|(&fi, &di)| (fi + tau * di).max(T::zero()))
                    .collect();
                if cand.iter().any(|&v| v > T::zero()) {
                    let rc = self.quotient(&cand);
                    if rc <= r {
                        accepted = Some((cand, rc));
                        break;
                    }
                }
                tau *= T::lit(0.5);
            }
            let Some((cand, rc)) = accepted else { break };
            let gain = (r - rc) / r;
            f = self.normalized(cand);
            r = rc;
            if gain < stagnation {
                break;
            }
        }
        Ok((f, iterations))
    }

    fn newton_inner(&self, x0: Vec<T>) -> std::result::Result<(Vec<T>, usize), NewtonFailure<T>> {
        let p = self.params.p;
        let mut u = x0;
        let (mut f, mut res, mut scale) = self.residual(&u);
        let mut polish = 0;
        for it in 0..self.options.max_newton {
            if res <= self.options.tol * scale.max(T::one()) {
                polish += 1;
                if polish > 2 {
                    return Ok((u, it));
                }
            }
            let base = self.function(&u);
            let jac = self.a.add_scaled(
                &self.op.weighted_mass(MassWeight::Power {
                    base: &base,
                    exponent: p - T::lit(2.0),
                    scale: T::one(),
                }),
                -(p - T::one()),
            );
            let lu = Lu::new(&jac).map_err(|_| NewtonFailure::Stalled {
                iterations: it,
                residual: res,
            })?;
            let neg: Vec<T> = f.iter().map(|&v| -v).collect();
            let step = lu.solve(&neg);
            let mut alpha = T::one();
            let mut lost_positivity = false;
            let mut next = None;
            for _ in 0..40 {
                let cand: Vec<T> = u.iter().zip(&step).map(|(&a, &d)| a + alpha * d).collect();
                if cand.iter().any(|&v| v <= T::zero()) {
                    lost_positivity = true;
                } else {
                    let (fc, rc, sc) = self.residual(&cand);
                    let decrease = T::one() - T::lit(1e-4) * alpha;
                    if rc < decrease * res || (polish > 0 && rc <= res) {
                        next = Some((cand, fc, rc, sc));
                        break;
                    }
                }
                alpha *= T::lit(0.5);
            }
            match next {
                Some((cand, fc, rc, sc)) => {
                    u = cand;
                    f = fc;
                    res = rc;
                    scale = sc;
                }
                None if polish > 0 => return Ok((u, it)),
                None if lost_positivity => return Err(NewtonFailure::Positivity),
                None => {
                    return Err(NewtonFailure::Stalled {
                        iterations: it,
                        residual: res,
                    })
                }
            }
        }
        if res <= self.options.tol * scale.max(T::one()) {
            Ok((u, self.options.max_newton))
        } else {
            Err(NewtonFailure::Stalled {
                iterations: self.options.max_newton,
                residual: res,
            })
        }
    }

    /// Phase 2 alone: Newton from a positive starting point.
    pub fn newton(&self, x0: &[T]) -> Result<(Vec<T>, usize)> {
        self.newton_inner(x0.to_vec()).map_err(|e| match e {
            NewtonFailure::Positivity => Error::PositivityLoss,
            NewtonFailure::Stalled {
                iterations,
                residual,
            } => Error::NonConvergence {
                iterations,
                residual: residual.as_f64(),
            },
        })
    }

    fn nehari_projected(&self, x: &[T]) -> Result<Vec<T>> {
        let t = nehari_scale_parts(self.a.quad_form(x), self.p_norm(x), self.params.p)?;
        Ok(x.iter().map(|&v| v * t).collect())
    }

    /// Full two-phase solve; `init` defaults to the clipped principal eigenfunction.
    pub fn solve(&self, init: Option<&RadialFunction<T>>) -> Result<GroundStateSolution<T>> {
        let start = init.unwrap_or(&self.phi1);
        if start.mesh().as_ref() != self.op.mesh.as_ref() {
            return Err(Error::Argument("initial profile lives on another mesh".into()));
        }
        let (f, descent) = self.descend(&self.op.dofs(start), self.options.stagnation)?;
        let u0 = self.nehari_projected(&f)?;
        match self.newton_inner(u0) {
            Ok((u, it)) => Ok(self.finish(u, it, descent)),
            Err(_) => {
                // fall back to a tighter descent before a second Newton attempt
                let (f2, more) = self.descend(&f, T::lit(1e-14))?;
                let u0 = self.nehari_projected(&f2)?;
                let (u, it) = self.newton(&u0)?;
                Ok(self.finish(u, it, descent + more))
            }
        }
    }

    /// Newton warm-started from the Nehari projection of `warm`.
    pub fn refine(&self, warm: &RadialFunction<T>) -> Result<GroundStateSolution<T>> {
        let x = self.op.dofs(warm);
        if x.iter().any(|&v| v <= T::zero()) {
            return Err(Error::PositivityLoss);
        }
        let u0 = self.nehari_projected(&x)?;
        let (u, it) = self.newton(&u0)?;
        Ok(self.finish(u, it, 0))
    }

    fn finish(&self, u: Vec<T>, iterations: usize, descent_iterations: usize) -> GroundStateSolution<T> {
        let (_, res, scale) = self.residual(&u);
        let q = self.a.quad_form(&u);
        let pp = self.p_norm(&u);
        let converged = res <= self.options.tol * scale.max(T::one());
        GroundStateSolution {
            params: self.params,
            u: self.function(&u),
            energy: T::lit(0.5) * q - pp / self.params.p,
            nehari_residual: q - pp,
            pde_residual: res,
            relative_residual: res / scale,
            iterations,
            descent_iterations,
            converged,
        }
    }
}

/// One-shot solve with default options apart from the tolerance.
pub fn solve_ground_state<T: Real>(
    params: &ProblemParams<T>,
    op: &SectorOperator<T>,
    init: Option<&RadialFunction<T>>,
    tol: T,
) -> Result<GroundStateSolution<T>> {
    let options = SolverOptions {
        tol,
        ..SolverOptions::default()
    };
    GroundStateSolver::new(op, *params, options)?.solve(init)
}
