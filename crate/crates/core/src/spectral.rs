//! Linearized spectra at a ground state u.
//!
//! σ-problem (radial sector): (K + M_V) v = σ M v,  V = -(p-1)u^{p-2}.
//! Λ-problem (any sector ℓ):  (K + λM) v = Λ M_w v,  w = u^{p-2},
//! solved in reciprocal form M_w v = (1/Λ)(K + λM) v so that only K + λM
//! needs a Cholesky factor (M_w degenerates toward r = 1).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::discretization::{MassWeight, RadialFunction, SectorOperator};
use crate::error::{Error, Result};
use crate::ground_state::{GroundStateSolution, ProblemParams};
use crate::linalg::{generalized_symmetric_eigen, DenseMatrix};
use crate::scalar::Real;

/// Gap below which σ₁ is flagged as numerically multiple.
pub const SIMPLE_GAP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectrumKind {
    Sigma,
    Lambda,
}

/// What the weight of a spectrum was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSource<T> {
    pub p: T,
    pub lambda: T,
    pub weight_exponent: T,
    /// Multiplier τ on V (1 for the plain linearization).
    pub tau: T,
    /// Constant added to V.
    pub shift: T,
    pub u_max: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumResult<T> {
    pub sector: usize,
    pub kind: SpectrumKind,
    pub eigenvalues: Vec<T>,
    pub eigenfunctions: Vec<RadialFunction<T>>,
    /// ‖(A - θB)v‖_∞ / ‖A‖_max per pair.
    pub residuals: Vec<T>,
    pub source: PotentialSource<T>,
}

impl<T: Real> SpectrumResult<T> {
    pub fn eigenvalue(&self, k: usize) -> T {
        self.eigenvalues[k]
    }

    pub fn eigenfunction(&self, k: usize) -> &RadialFunction<T> {
        &self.eigenfunctions[k]
    }

    /// Table with columns r, v_1, ..., v_k.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r");
        for k in 0..self.eigenfunctions.len() {
            let _ = write!(out, ",v{}", k + 1);
        }
        out.push('\n');
        let Some(first) = self.eigenfunctions.first() else {
            return out;
        };
        for (i, r) in first.mesh().nodes().iter().enumerate() {
            let _ = write!(out, "{:e}", r.as_f64());
            for f in &self.eigenfunctions {
                let _ = write!(out, ",{:e}", f.value(i).as_f64());
            }
            out.push('\n');
        }
        out
    }
}

fn check_solution<T: Real>(u: &GroundStateSolution<T>, op: &SectorOperator<T>) -> Result<()> {
    if u.u.mesh().as_ref() != op.mesh.as_ref() {
        return Err(Error::Argument("ground state and operator use different meshes".into()));
    }
    Ok(())
}

fn relative_residual<T: Real>(a: &DenseMatrix<T>, b: &DenseMatrix<T>, theta: T, v: &[T]) -> T {
    let av = a.mul_vec(v);
    let bv = b.mul_vec(v);
    let r = av
        .iter()
        .zip(&bv)
        .fold(T::zero(), |m, (&x, &y)| m.max((x - theta * y).abs()));
    r / a.max_abs()
}

/// First k eigenpairs of (K + τ M_V + shift·M, M), V = -(p-1)u^{p-2}.
pub fn sigma_spectrum_scaled<T: Real>(
    u: &GroundStateSolution<T>,
    params: &ProblemParams<T>,
    op: &SectorOperator<T>,
    k: usize,
    tau: T,
    shift: T,
) -> Result<SpectrumResult<T>> {
    check_solution(u, op)?;
    if op.sector() != 0 {
        return Err(Error::Argument("the σ-problem is posed in the radial sector".into()));
    }
    if k == 0 || k > op.size() {
        return Err(Error::Argument(format!("cannot return {k} eigenpairs")));
    }
    let p = params.p;
    let potential = op.weighted_mass(MassWeight::Power {
        base: &u.u,
        exponent: p - T::lit(2.0),
        scale: -(p - T::one()) * tau,
    });
    let a = op
        .stiffness()
        .add_scaled(&potential, T::one())
        .add_scaled(&op.mass, shift);
    let eig = generalized_symmetric_eigen(&a, &op.mass)?;
    if eig.values.len() > 1 {
        let gap = eig.values[1] - eig.values[0];
        if gap < T::lit(SIMPLE_GAP) * (T::one() + eig.values[0].abs()) {
            return Err(Error::Eigensolver(format!(
                "σ₁ is numerically multiple (gap {gap}); discretization defect"
            )));
        }
    }
    let mut eigenvalues = Vec::with_capacity(k);
    let mut eigenfunctions = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for j in 0..k {
        let mut v = eig.vector(j);
        if v[0] < T::zero() {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        residuals.push(relative_residual(&a, &op.mass, eig.values[j], &v));
        eigenvalues.push(eig.values[j]);
        eigenfunctions.push(op.function(&v)?);
    }
    Ok(SpectrumResult {
        sector: 0,
        kind: SpectrumKind::Sigma,
        eigenvalues,
        eigenfunctions,
        residuals,
        source: PotentialSource {
            p,
            lambda: params.lambda,
            weight_exponent: p - T::lit(2.0),
            tau,
            shift,
            u_max: u.u.norm_inf(),
        },
    })
}

/// First k eigenpairs of the linearization (K + M_V) v = σ M v.
pub fn sigma_spectrum<T: Real>(
    u: &GroundStateSolution<T>,
    params: &ProblemParams<T>,
    op: &SectorOperator<T>,
    k: usize,
) -> Result<SpectrumResult<T>> {
    sigma_spectrum_scaled(u, params, op, k, T::one(), T::zero())
}

/// Smallest k eigenvalues of (K + λM) v = Λ M_w v with w = u^{p-2} in sector op.sector().
pub fn lambda_spectrum<T: Real>(
    u: &GroundStateSolution<T>,
    params: &ProblemParams<T>,
    op: &SectorOperator<T>,
    k: usize,
) -> Result<SpectrumResult<T>> {
    check_solution(u, op)?;
    let values = u.u.values();
    if let Some(i) = values[..values.len() - 1].iter().position(|&x| x <= T::zero()) {
        return Err(Error::WeightDegeneracy(format!(
            "ground state not positive at interior node {i}"
        )));
    }
    if k == 0 || k > op.size() {
        return Err(Error::Argument(format!("cannot return {k} eigenpairs")));
    }
    let p = params.p;
    let a = op.stiffness().add_scaled(&op.mass, params.lambda);
    let w = op.weighted_mass(MassWeight::Power {
        base: &u.u,
        exponent: p - T::lit(2.0),
        scale: T::one(),
    });
    // μ = 1/Λ, largest μ first
    let eig = generalized_symmetric_eigen(&w, &a)?;
    let n = eig.values.len();
    let mut eigenvalues = Vec::with_capacity(k);
    let mut eigenfunctions = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for j in 0..k {
        let idx = n - 1 - j;
        let mu = eig.values[idx];
        if !(mu > T::zero()) {
            return Err(Error::WeightDegeneracy(format!(
                "weighted mass is singular on the sector (μ = {mu})"
            )));
        }
        let lam = T::one() / mu;
        let scale = T::one() / mu.sqrt();
        let mut v: Vec<T> = eig.vector(idx).iter().map(|&x| x * scale).collect();
        let lead = v.iter().copied().find(|x| *x != T::zero()).unwrap_or(T::one());
        if lead < T::zero() {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        residuals.push(relative_residual(&a, &w, lam, &v));
        eigenvalues.push(lam);
        eigenfunctions.push(op.function(&v)?);
    }
    Ok(SpectrumResult {
        sector: op.sector(),
        kind: SpectrumKind::Lambda,
        eigenvalues,
        eigenfunctions,
        residuals,
        source: PotentialSource {
            p,
            lambda: params.lambda,
            weight_exponent: p - T::lit(2.0),
            tau: T::one(),
            shift: T::zero(),
            u_max: u.u.norm_inf(),
        },
    })
}

/// |⟨f, g⟩_W| / (‖f‖_W ‖g‖_W) in the inner product of `weight`.
pub fn weighted_cosine<T: Real>(weight: &DenseMatrix<T>, f: &[T], g: &[T]) -> T {
    let fg = weight.bilinear(f, g);
    (fg / (weight.quad_form(f) * weight.quad_form(g)).sqrt()).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyMargins<T> {
    pub sigma1: T,
    pub sigma2: T,
    /// -λ - σ₁
    pub gap_low: T,
    /// σ₂ + λ
    pub gap_high: T,
    /// Λ_min(ℓ) - (p-1) for each nonradial sector supplied.
    pub lambda_margins: Vec<(usize, T)>,
    /// Λ₁ in the radial sector (should be 1).
    pub radial_lambda: T,
    /// cosine between the radial Λ₁ eigenvector and u.
    pub radial_alignment: T,
}

impl<T: Real> NondegeneracyMargins<T> {
    pub fn min_margin(&self) -> T {
        self.lambda_margins
            .iter()
            .fold(self.gap_low.min(self.gap_high), |m, &(_, v)| m.min(v))
    }

    pub fn nondegenerate(&self) -> bool {
        self.min_margin() > T::zero()
    }
}

/// σ- and Λ-margins from operators for sectors 0, 1, 2, ... (`ops[0]` radial).
pub fn nondegeneracy_margins<T: Real>(
    u: &GroundStateSolution<T>,
    params: &ProblemParams<T>,
    ops: &[&SectorOperator<T>],
) -> Result<NondegeneracyMargins<T>> {
    let radial = ops
        .iter()
        .find(|op| op.sector() == 0)
        .ok_or_else(|| Error::Argument("radial operator missing".into()))?;
    let sigma = sigma_spectrum(u, params, radial, 2)?;
    let (sigma1, sigma2) = (sigma.eigenvalues[0], sigma.eigenvalues[1]);

    let lam0 = lambda_spectrum(u, params, radial, 1)?;
    let w = radial.weighted_mass(MassWeight::Power {
        base: &u.u,
        exponent: params.p - T::lit(2.0),
        scale: T::one(),
    });
    let alignment = weighted_cosine(&w, &radial.dofs(lam0.eigenfunction(0)), &radial.dofs(&u.u));

    let mut lambda_margins = Vec::new();
    for op in ops.iter().filter(|op| op.sector() > 0) {
        let spec = lambda_spectrum(u, params, op, 1)?;
        lambda_margins.push((op.sector(), spec.eigenvalues[0] - (params.p - T::one())));
    }
    Ok(NondegeneracyMargins {
        sigma1,
        sigma2,
        gap_low: -params.lambda - sigma1,
        gap_high: sigma2 + params.lambda,
        lambda_margins,
        radial_lambda: lam0.eigenvalues[0],
        radial_alignment: alignment,
    })
}
