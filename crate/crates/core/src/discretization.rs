//! Graded radial meshes and Galerkin assembly per spherical-harmonic sector.
//!
//! Functions are piecewise linear on a mesh of [0, 1] and vanish outside
//! the ball. Sector ℓ ≥ 1 drops the hat function at the origin.
//!
//! The nonlocal form of a sector f(r)Y_ℓ is split as
//!
//! ```text
//! a(f,g) = (C ω/2) ∬_{[0,1]²} (f(r)-f(ρ))(g(r)-g(ρ)) κ_ℓ(r,ρ) (rρ)^{N-1} dρ dr
//!        + ∫₀¹ f g Z_ℓ(r) r^{N-1} dr
//! Z_ℓ(r) = C ω [ ∫₀¹ (κ₀-κ_ℓ)(r,ρ) ρ^{N-1} dρ + ∫₁^∞ κ₀(r,ρ) ρ^{N-1} dρ ]
//! ```
//!
//! where ω = |S^{N-1}|. The second integral in Z is split at R_max; the
//! piece beyond R_max is mapped onto [0, 1] through ρ = R_max v^{-1/(2s)}.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, DenseMatrix};
use crate::quadrature::{endpoint_singular_rule, CompositeRule, GaussRule};
use crate::scalar::Real;
use crate::special::{normalization_cns, surface_area, KernelSpec, ZonalKernel};

pub const MIN_ELEMENTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialMesh<T> {
    nodes: Vec<T>,
    grading: T,
    exterior_cutoff: T,
}

/// Parameters that reproduce a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshDescriptor {
    pub elements: usize,
    pub grading: f64,
    pub exterior_cutoff: f64,
}

impl<T: Real> RadialMesh<T> {
    /// Nodes r_i = 1 - (1 - i/M)^γ.
    pub fn build(elements: usize, grading: T, exterior_cutoff: T) -> Result<Self> {
        if elements < MIN_ELEMENTS {
            return Err(Error::Argument(format!(
                "mesh needs at least {MIN_ELEMENTS} elements, got {elements}"
            )));
        }
        if !(grading >= T::one()) {
            return Err(Error::Argument(format!("grading exponent {grading} < 1")));
        }
        if !(exterior_cutoff >= T::lit(2.0)) {
            return Err(Error::Argument(format!(
                "exterior cutoff {exterior_cutoff} < 2"
            )));
        }
        let m = T::from_count(elements);
        let mut nodes: Vec<T> = (0..=elements)
            .map(|i| T::one() - (T::one() - T::from_count(i) / m).powf(grading))
            .collect();
        nodes[0] = T::zero();
        nodes[elements] = T::one();
        Ok(Self {
            nodes,
            grading,
            exterior_cutoff,
        })
    }

    pub fn from_descriptor(desc: &MeshDescriptor) -> Result<Self> {
        Self::build(
            desc.elements,
            T::lit(desc.grading),
            T::lit(desc.exterior_cutoff),
        )
    }

    pub fn descriptor(&self) -> MeshDescriptor {
        MeshDescriptor {
            elements: self.elements(),
            grading: self.grading.as_f64(),
            exterior_cutoff: self.exterior_cutoff.as_f64(),
        }
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> T {
        self.nodes[i]
    }

    pub fn elements(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn width(&self, e: usize) -> T {
        self.nodes[e + 1] - self.nodes[e]
    }

    pub fn grading(&self) -> T {
        self.grading
    }

    pub fn exterior_cutoff(&self) -> T {
        self.exterior_cutoff
    }

    /// Element containing r (last element for r = 1).
    pub fn locate(&self, r: T) -> usize {
        let m = self.elements();
        match self
            .nodes
            .binary_search_by(|x| x.partial_cmp(&r).expect("finite nodes"))
        {
            Ok(i) => i.min(m - 1),
            Err(i) => i.saturating_sub(1).min(m - 1),
        }
    }
}

/// First active node of a sector: the origin hat is dropped for ℓ ≥ 1.
pub fn first_dof(sector: usize) -> usize {
    usize::from(sector > 0)
}

pub fn dof_count<T: Real>(mesh: &RadialMesh<T>, sector: usize) -> usize {
    mesh.elements() - first_dof(sector)
}

/// Nodal values of a radial profile; the value at r = 1 is always zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialFunction<T> {
    mesh: Arc<RadialMesh<T>>,
    values: Vec<T>,
}

impl<T: Real> RadialFunction<T> {
    pub fn new(mesh: Arc<RadialMesh<T>>, mut values: Vec<T>) -> Result<Self> {
        if values.len() != mesh.nodes().len() {
            return Err(Error::Argument(format!(
                "expected {} nodal values, got {}",
                mesh.nodes().len(),
                values.len()
            )));
        }
        *values.last_mut().expect("non-empty mesh") = T::zero();
        Ok(Self { mesh, values })
    }

    pub fn zero(mesh: Arc<RadialMesh<T>>) -> Self {
        let values = vec![T::zero(); mesh.nodes().len()];
        Self { mesh, values }
    }

    pub fn from_fn<F: Fn(T) -> T>(mesh: Arc<RadialMesh<T>>, f: F) -> Self {
        let mut values: Vec<T> = mesh.nodes().iter().map(|&r| f(r)).collect();
        *values.last_mut().expect("non-empty mesh") = T::zero();
        Self { mesh, values }
    }

    /// Expands sector degrees of freedom into nodal values.
    pub fn from_dofs(mesh: Arc<RadialMesh<T>>, sector: usize, dofs: &[T]) -> Result<Self> {
        let first = first_dof(sector);
        if dofs.len() != mesh.elements() - first {
            return Err(Error::Argument(format!(
                "expected {} sector dofs, got {}",
                mesh.elements() - first,
                dofs.len()
            )));
        }
        let mut values = vec![T::zero(); mesh.nodes().len()];
        values[first..first + dofs.len()].copy_from_slice(dofs);
        Ok(Self { mesh, values })
    }

    pub fn dofs(&self, sector: usize) -> Vec<T> {
        let first = first_dof(sector);
        self.values[first..self.values.len() - 1].to_vec()
    }

    pub fn mesh(&self) -> &Arc<RadialMesh<T>> {
        &self.mesh
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn value(&self, i: usize) -> T {
        self.values[i]
    }

    /// Piecewise-linear interpolant, extended by zero outside [0, 1].
    pub fn eval(&self, r: T) -> T {
        if r >= T::one() || r < T::zero() {
            return T::zero();
        }
        let e = self.mesh.locate(r);
        self.eval_in(e, r)
    }

    #[inline]
    fn eval_in(&self, e: usize, r: T) -> T {
        let (x0, x1) = (self.mesh.node(e), self.mesh.node(e + 1));
        let t = (r - x0) / (x1 - x0);
        self.values[e] * (T::one() - t) + self.values[e + 1] * t
    }

    pub fn norm_inf(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            mesh: self.mesh.clone(),
            values: self.values.iter().map(|&v| v * c).collect(),
        }
    }

    pub fn map<F: Fn(T) -> T>(&self, f: F) -> Self {
        let mut values: Vec<T> = self.values.iter().map(|&v| f(v)).collect();
        *values.last_mut().expect("non-empty mesh") = T::zero();
        Self {
            mesh: self.mesh.clone(),
            values,
        }
    }

    /// max |f - g| over nodes (same mesh assumed).
    pub fn distance_inf(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// ω_{N-1} ∫₀¹ f r^{N-1} dr, the integral over the ball.
    pub fn ball_integral(&self, dim: usize) -> T {
        let rule = GaussRule::legendre(4);
        let omega = surface_area::<T>(dim);
        let mut acc = T::zero();
        for e in 0..self.mesh.elements() {
            let (a, b) = (self.mesh.node(e), self.mesh.node(e + 1));
            acc += rule.integrate(a, b, |r| self.eval_in(e, r) * r.powi(dim as i32 - 1));
        }
        omega * acc
    }
}

/// Weight function of a mass-type matrix.
#[derive(Debug, Clone, Copy)]
pub enum MassWeight<'a, T> {
    Unit,
    /// Nodal values, interpolated linearly.
    Nodal(&'a RadialFunction<T>),
    /// scale·|u_h(r)|^exponent evaluated at the quadrature points.
    Power {
        base: &'a RadialFunction<T>,
        exponent: T,
        scale: T,
    },
}

impl<T: Real> MassWeight<'_, T> {
    fn at(&self, e: usize, r: T) -> T {
        match self {
            MassWeight::Unit => T::one(),
            MassWeight::Nodal(w) => w.eval_in(e, r),
            MassWeight::Power {
                base,
                exponent,
                scale,
            } => *scale * base.eval_in(e, r).abs().powf(*exponent),
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            MassWeight::Unit => false,
            MassWeight::Nodal(w) => w.values().iter().all(|v| *v == T::zero()),
            MassWeight::Power { scale, .. } => *scale == T::zero(),
        }
    }
}

/// Hat functions of element e at r: (node e, node e+1).
#[inline]
fn hats<T: Real>(mesh: &RadialMesh<T>, e: usize, r: T) -> (T, T) {
    let (x0, x1) = (mesh.node(e), mesh.node(e + 1));
    let h = x1 - x0;
    ((x1 - r) / h, (r - x0) / h)
}

fn scatter<T: Real>(
    out: &mut DenseMatrix<T>,
    first: usize,
    elements: usize,
    nodes: &[usize],
    local: &[[T; 4]; 4],
) {
    for (a, &na) in nodes.iter().enumerate() {
        if na < first || na >= elements {
            continue;
        }
        for (b, &nb) in nodes.iter().enumerate() {
            if nb < first || nb >= elements {
                continue;
            }
            out[(na - first, nb - first)] += local[a][b];
        }
    }
}

/// ω_{N-1}[∫ f'g' r^{N-1} + ℓ(ℓ+N-2) ∫ f g r^{N-3}].
pub fn assemble_local<T: Real>(mesh: &RadialMesh<T>, sector: usize, dim: usize) -> DenseMatrix<T> {
    let first = first_dof(sector);
    let m = mesh.elements();
    let n = m - first;
    let mut out = DenseMatrix::zeros(n, n);
    let rule = GaussRule::legendre(4);
    let omega = surface_area::<T>(dim);
    let mu = T::from_count(sector * (sector + dim - 2));
    for e in 0..m {
        let (a, b) = (mesh.node(e), mesh.node(e + 1));
        let h = b - a;
        let mut local = [[T::zero(); 4]; 4];
        let slopes = [-T::one() / h, T::one() / h];
        for (r, w) in rule.mapped(a, b) {
            let (p0, p1) = hats(mesh, e, r);
            let vals = [p0, p1];
            let wr = w * r.powi(dim as i32 - 1);
            let wa = if sector > 0 {
                w * mu * r.powi(dim as i32 - 3)
            } else {
                T::zero()
            };
            for i in 0..2 {
                for j in 0..2 {
                    local[i][j] += wr * slopes[i] * slopes[j] + wa * vals[i] * vals[j];
                }
            }
        }
        for row in local.iter_mut() {
            for v in row.iter_mut() {
                *v *= omega;
            }
        }
        scatter(&mut out, first, m, &[e, e + 1], &local);
    }
    out
}

/// ω_{N-1} ∫₀¹ f g W r^{N-1} dr with 4-point Gauss per element.
pub fn assemble_mass<T: Real>(
    mesh: &RadialMesh<T>,
    dim: usize,
    sector: usize,
    weight: MassWeight<'_, T>,
) -> DenseMatrix<T> {
    let first = first_dof(sector);
    let m = mesh.elements();
    let n = m - first;
    let mut out = DenseMatrix::zeros(n, n);
    if weight.is_zero() {
        return out;
    }
    let rule = GaussRule::legendre(4);
    let omega = surface_area::<T>(dim);
    for e in 0..m {
        let (a, b) = (mesh.node(e), mesh.node(e + 1));
        let mut local = [[T::zero(); 4]; 4];
        for (r, w) in rule.mapped(a, b) {
            let (p0, p1) = hats(mesh, e, r);
            let vals = [p0, p1];
            let wr = omega * w * r.powi(dim as i32 - 1) * weight.at(e, r);
            for i in 0..2 {
                for j in 0..2 {
                    local[i][j] += wr * vals[i] * vals[j];
                }
            }
        }
        scatter(&mut out, first, m, &[e, e + 1], &local);
    }
    out
}

/// Load vector ω ∫ |u|^{p-2} u φ_i r^{N-1} dr (4-point Gauss per element).
pub fn power_load<T: Real>(u: &RadialFunction<T>, dim: usize, sector: usize, p: T) -> Vec<T> {
    let mesh = u.mesh();
    let first = first_dof(sector);
    let m = mesh.elements();
    let mut out = vec![T::zero(); m - first];
    let rule = GaussRule::legendre(4);
    let omega = surface_area::<T>(dim);
    let pm2 = p - T::lit(2.0);
    for e in 0..m {
        let (a, b) = (mesh.node(e), mesh.node(e + 1));
        let mut loc = [T::zero(); 2];
        for (r, w) in rule.mapped(a, b) {
            let (p0, p1) = hats(mesh, e, r);
            let v = u.eval_in(e, r);
            let g = v.abs().powf(pm2) * v * omega * w * r.powi(dim as i32 - 1);
            loc[0] += g * p0;
            loc[1] += g * p1;
        }
        for (k, node) in [e, e + 1].into_iter().enumerate() {
            if node >= first && node < m {
                out[node - first] += loc[k];
            }
        }
    }
    out
}

/// ‖u‖_p^p = ω ∫₀¹ |u_h|^p r^{N-1} dr.
pub fn lp_norm_pow<T: Real>(u: &RadialFunction<T>, dim: usize, p: T) -> T {
    let mesh = u.mesh();
    let rule = GaussRule::legendre(4);
    let omega = surface_area::<T>(dim);
    let mut acc = T::zero();
    for e in 0..mesh.elements() {
        let (a, b) = (mesh.node(e), mesh.node(e + 1));
        acc += rule.integrate(a, b, |r| u.eval_in(e, r).abs().powf(p) * r.powi(dim as i32 - 1));
    }
    omega * acc
}

/// Relative tolerance for the self-element refinement check.
const SELF_PAIR_TOL: f64 = 1e-6;
const SELF_PAIR_MAX_ORDER: usize = 28;

struct NonlocalAssembler<'a, T: Real> {
    mesh: &'a RadialMesh<T>,
    dim: usize,
    order: T,
    sector: usize,
    kernel: ZonalKernel<T>,
    /// C(N,s) ω / 2
    pref: T,
    gl3: GaussRule<T>,
    gl5: GaussRule<T>,
    gl6: GaussRule<T>,
    gl8: GaussRule<T>,
    gl10: GaussRule<T>,
    gl16: GaussRule<T>,
}

impl<'a, T: Real> NonlocalAssembler<'a, T> {
    fn new(mesh: &'a RadialMesh<T>, spec: &KernelSpec<T>) -> Result<Self> {
        let kernel = ZonalKernel::new(spec)?;
        let cns = normalization_cns(spec.dim, spec.order)?;
        Ok(Self {
            mesh,
            dim: spec.dim,
            order: spec.order,
            sector: spec.sector,
            kernel,
            pref: cns * surface_area::<T>(spec.dim) * T::lit(0.5),
            gl3: GaussRule::legendre(3),
            gl5: GaussRule::legendre(5),
            gl6: GaussRule::legendre(6),
            gl8: GaussRule::legendre(8),
            gl10: GaussRule::legendre(10),
            gl16: GaussRule::legendre(16),
        })
    }

    /// (Cω/2) κ_ℓ(r,ρ) (rρ)^{N-1}.
    #[inline]
    fn pair_kernel(&self, r: T, rho: T, gap: T) -> T {
        let k = self.kernel.eval_gap(r, rho, gap, T::zero()).sector;
        self.pref * k * (r * rho).powi(self.dim as i32 - 1)
    }

    /// Element pair contributions for row element `a`: returns (nodes, local)
    /// blocks for all b ≥ a, already doubled for b > a.
    fn row_blocks(&self, a: usize) -> Result<Vec<([usize; 4], [[T; 4]; 4])>> {
        let m = self.mesh.elements();
        let mut out = Vec::with_capacity(m - a);
        out.push(self.self_block(a)?);
        if a + 1 < m {
            out.push(self.touching_block(a));
        }
        for b in a + 2..m {
            out.push(self.separated_block(a, b));
        }
        Ok(out)
    }

    fn self_pair_integral(&self, a: usize, base: &GaussRule<T>) -> T {
        let x0 = self.mesh.node(a);
        let h = self.mesh.width(a);
        let beta = T::one() - T::lit(2.0) * self.order;
        let outer = endpoint_singular_rule(base, T::one(), beta);
        let mut acc = T::zero();
        for &(d, wd) in &outer.points {
            let gap = h * d;
            let g = |y: T| {
                let rho = x0 + h * y;
                self.pair_kernel(rho + gap, rho, gap)
            };
            let inner = if x0 < h {
                // the kernel changes character where ρ ~ gap near the origin
                let split = d.min(T::one() - d);
                base.integrate(T::zero(), split, g)
                    + CompositeRule::doubling(base, split, T::one() - d).integrate(g)
            } else {
                base.integrate(T::zero(), T::one() - d, g)
            };
            acc += wd * d * d * inner;
        }
        T::lit(2.0) * h.powi(4) * acc
    }

    fn self_block(&self, a: usize) -> Result<([usize; 4], [[T; 4]; 4])> {
        let mut coarse = self.self_pair_integral(a, &self.gl6);
        let mut fine = self.self_pair_integral(a, &self.gl10);
        let mut order = 10;
        while (fine - coarse).abs() > T::lit(SELF_PAIR_TOL) * fine.abs() {
            if order >= SELF_PAIR_MAX_ORDER {
                return Err(Error::QuadratureFailure(format!(
                    "self-element integral on element {a} unstable: {coarse} vs {fine}"
                )));
            }
            order += 6;
            coarse = fine;
            fine = self.self_pair_integral(a, &GaussRule::legendre(order));
        }
        let h = self.mesh.width(a);
        let slopes = [-T::one() / h, T::one() / h];
        let mut local = [[T::zero(); 4]; 4];
        for i in 0..2 {
            for j in 0..2 {
                local[i][j] = fine * slopes[i] * slopes[j];
            }
        }
        Ok(([a, a + 1, usize::MAX, usize::MAX], local))
    }

    /// Elements a and a+1 sharing the vertex v; Duffy split around (v, v).
    fn touching_block(&self, a: usize) -> ([usize; 4], [[T; 4]; 4]) {
        let v = self.mesh.node(a + 1);
        let h1 = self.mesh.width(a);
        let h2 = self.mesh.width(a + 1);
        let beta = T::lit(2.0) - T::lit(2.0) * self.order;
        let radial = endpoint_singular_rule(&self.gl8, T::one(), beta);
        let mut local = [[T::zero(); 4]; 4];
        for triangle in 0..2 {
            for &(u, wu) in &radial.points {
                for (w, ww) in self.gl8.mapped(T::zero(), T::one()) {
                    // ψ/u for nodes (a, a+1, a+2) and the scaled gap
                    let (x, y) = if triangle == 0 { (T::one(), w) } else { (w, T::one()) };
                    let psi = [x, y - x, -y];
                    let gap = u * (h1 * x + h2 * y);
                    let r = v - h1 * u * x;
                    let rho = v + h2 * u * y;
                    let f = self.pair_kernel(r, rho, gap) * u * u * u * wu * ww;
                    for i in 0..3 {
                        for j in 0..3 {
                            local[i][j] += f * psi[i] * psi[j];
                        }
                    }
                }
            }
        }
        let scale = T::lit(2.0) * h1 * h2;
        for row in local.iter_mut() {
            for val in row.iter_mut() {
                *val *= scale;
            }
        }
        ([a, a + 1, a + 2, usize::MAX], local)
    }

    fn separated_block(&self, a: usize, b: usize) -> ([usize; 4], [[T; 4]; 4]) {
        let mut local = [[T::zero(); 4]; 4];
        let (r0, r1) = (self.mesh.node(a), self.mesh.node(a + 1));
        let (p0, p1) = (self.mesh.node(b), self.mesh.node(b + 1));
        self.separated_box(a, b, (r0, r1), (p0, p1), &mut local);
        for row in local.iter_mut() {
            for val in row.iter_mut() {
                *val *= T::lit(2.0);
            }
        }
        ([a, a + 1, b, b + 1], local)
    }

    fn separated_box(
        &self,
        a: usize,
        b: usize,
        (r0, r1): (T, T),
        (p0, p1): (T, T),
        local: &mut [[T; 4]; 4],
    ) {
        let gap = p0 - r1;
        let (hr, hp) = (r1 - r0, p1 - p0);
        let ratio = hr.max(hp) / gap;
        if ratio > T::one() {
            if hr >= hp {
                let mid = (r0 + r1) * T::lit(0.5);
                self.separated_box(a, b, (r0, mid), (p0, p1), local);
                self.separated_box(a, b, (mid, r1), (p0, p1), local);
            } else {
                let mid = (p0 + p1) * T::lit(0.5);
                self.separated_box(a, b, (r0, r1), (p0, mid), local);
                self.separated_box(a, b, (r0, r1), (mid, p1), local);
            }
            return;
        }
        let rule = if ratio <= T::lit(0.15) {
            &self.gl3
        } else if ratio <= T::lit(0.4) {
            &self.gl5
        } else {
            &self.gl8
        };
        for (r, wr) in rule.mapped(r0, r1) {
            let (fa0, fa1) = hats(self.mesh, a, r);
            for (rho, wp) in rule.mapped(p0, p1) {
                let (fb0, fb1) = hats(self.mesh, b, rho);
                let psi = [fa0, fa1, -fb0, -fb1];
                let f = wr * wp * self.pair_kernel(r, rho, rho - r);
                for i in 0..4 {
                    for j in 0..4 {
                        local[i][j] += f * psi[i] * psi[j];
                    }
                }
            }
        }
    }

    /// Z_ℓ(r), the zero-order weight of the split form.
    fn zero_order_weight(&self, r: T) -> T {
        let n1 = self.dim as i32 - 1;
        let one = T::one();
        let two_s = T::lit(2.0) * self.order;
        let mut acc = T::zero();
        if self.sector > 0 {
            let beta = one - two_s;
            let left = endpoint_singular_rule(&self.gl8, r, beta);
            acc += left.integrate(|d| {
                let rho = r - d;
                self.kernel.eval_gap(r, rho, d, T::zero()).deficit * rho.powi(n1)
            });
            let right = endpoint_singular_rule(&self.gl8, one - r, beta);
            acc += right.integrate(|d| {
                let rho = r + d;
                self.kernel.eval_gap(r, rho, d, T::zero()).deficit * rho.powi(n1)
            });
        }
        let cutoff = self.mesh.exterior_cutoff();
        let near = CompositeRule::doubling(&self.gl8, one - r, cutoff - r);
        acc += near.integrate(|d| {
            let rho = r + d;
            self.kernel.full_gap(r, rho, d, T::zero()) * rho.powi(n1)
        });
        // ∫_R^∞ κ₀ ρ^{N-1} dρ = R^{-2s}/(2s) ∫₀¹ κ₀(q, 1) dv, q = (r/R) v^{1/(2s)}
        let tail: T = self
            .gl16
            .mapped(T::zero(), one)
            .map(|(v, w)| {
                let q = r / cutoff * v.powf(one / two_s);
                w * self.kernel.full_gap(q, one, one - q, T::zero())
            })
            .sum();
        acc += cutoff.powf(-two_s) / two_s * tail;
        T::lit(2.0) * self.pref * acc
    }

    /// Quadrature points for the Z-mass on element e.
    fn zero_order_points(&self, e: usize) -> Vec<(T, T)> {
        let m = self.mesh.elements();
        let (a, b) = (self.mesh.node(e), self.mesh.node(e + 1));
        let two_s = T::lit(2.0) * self.order;
        if e == m - 1 {
            // integrand ~ (1-r)^{2-2s}
            let beta = T::lit(2.0) - two_s;
            return endpoint_singular_rule(&self.gl6, b - a, beta)
                .points
                .into_iter()
                .map(|(x, w)| (b - x, w))
                .collect();
        }
        if e == 0 && self.sector > 0 {
            let beta = T::from_count(self.dim + 1) - two_s;
            return endpoint_singular_rule(&self.gl6, b - a, beta).points;
        }
        self.gl6.mapped(a, b).collect()
    }

    fn zero_order_block(&self, e: usize) -> ([usize; 4], [[T; 4]; 4]) {
        let n1 = self.dim as i32 - 1;
        let mut local = [[T::zero(); 4]; 4];
        for (r, w) in self.zero_order_points(e) {
            let (f0, f1) = hats(self.mesh, e, r);
            let vals = [f0, f1];
            let z = w * self.zero_order_weight(r) * r.powi(n1);
            for i in 0..2 {
                for j in 0..2 {
                    local[i][j] += z * vals[i] * vals[j];
                }
            }
        }
        ([e, e + 1, usize::MAX, usize::MAX], local)
    }
}

/// Galerkin matrix of the sector-ℓ nonlocal form (C(N,s)/2)[f]_s².
pub fn assemble_nonlocal<T: Real>(mesh: &RadialMesh<T>, spec: &KernelSpec<T>) -> Result<DenseMatrix<T>> {
    let asm = NonlocalAssembler::new(mesh, spec)?;
    let m = mesh.elements();
    let first = first_dof(spec.sector);
    let n = m - first;

    let rows: Vec<Result<Vec<([usize; 4], [[T; 4]; 4])>>> = (0..m)
        .into_par_iter()
        .map(|a| {
            let mut blocks = asm.row_blocks(a)?;
            blocks.push(asm.zero_order_block(a));
            Ok(blocks)
        })
        .collect();

    let mut out = DenseMatrix::zeros(n, n);
    for row in rows {
        for (nodes, local) in row? {
            for (i, &ni) in nodes.iter().enumerate() {
                if ni == usize::MAX || ni < first || ni >= m {
                    continue;
                }
                for (j, &nj) in nodes.iter().enumerate() {
                    if nj == usize::MAX || nj < first || nj >= m {
                        continue;
                    }
                    out[(ni - first, nj - first)] += local[i][j];
                }
            }
        }
    }
    out.symmetrize();
    Ok(out)
}

/// Assembled local, nonlocal and mass matrices for one sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorOperator<T> {
    pub spec: KernelSpec<T>,
    pub mesh: Arc<RadialMesh<T>>,
    pub local: DenseMatrix<T>,
    pub nonlocal: DenseMatrix<T>,
    pub mass: DenseMatrix<T>,
}

impl<T: Real> SectorOperator<T> {
    pub fn assemble(mesh: Arc<RadialMesh<T>>, spec: KernelSpec<T>) -> Result<Self> {
        spec.validate()?;
        let local = assemble_local(&mesh, spec.sector, spec.dim);
        let mass = assemble_mass(&mesh, spec.dim, spec.sector, MassWeight::Unit);
        let nonlocal = assemble_nonlocal(&mesh, &spec)?;
        Ok(Self {
            spec,
            mesh,
            local,
            nonlocal,
            mass,
        })
    }

    pub fn sector(&self) -> usize {
        self.spec.sector
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn order(&self) -> T {
        self.spec.order
    }

    pub fn size(&self) -> usize {
        self.mass.rows()
    }

    /// K_loc + K_nl.
    pub fn stiffness(&self) -> DenseMatrix<T> {
        self.local.add_scaled(&self.nonlocal, T::one())
    }

    pub fn weighted_mass(&self, weight: MassWeight<'_, T>) -> DenseMatrix<T> {
        assemble_mass(&self.mesh, self.spec.dim, self.spec.sector, weight)
    }

    pub fn dofs(&self, f: &RadialFunction<T>) -> Vec<T> {
        f.dofs(self.spec.sector)
    }

    pub fn function(&self, dofs: &[T]) -> Result<RadialFunction<T>> {
        RadialFunction::from_dofs(self.mesh.clone(), self.spec.sector, dofs)
    }
}

/// [f]_s = sqrt(fᵀ K_nl f).
pub fn gagliardo_seminorm<T: Real>(f: &RadialFunction<T>, op: &SectorOperator<T>) -> T {
    let x = op.dofs(f);
    op.nonlocal.quad_form(&x).max(T::zero()).sqrt()
}

/// Discrete Riesz representative M⁻¹ K_nl f of (-Δ)^s f.
pub fn apply_fractional<T: Real>(f: &RadialFunction<T>, op: &SectorOperator<T>) -> Result<RadialFunction<T>> {
    let chol = Cholesky::new(&op.mass)?;
    let x = op.dofs(f);
    let y = chol.solve(&op.nonlocal.mul_vec(&x));
    op.function(&y)
}
