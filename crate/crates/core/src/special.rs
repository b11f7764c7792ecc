//! Constants of the mixed operator and the zonal (polar-angle) kernels.
//!
//! Sphere integrals of |x - y|^{-(N+2s)} over one radius reduce, via the
//! Funk–Hecke formula, to one-dimensional integrals in the polar angle
//! against the normalized Gegenbauer polynomial of the sector degree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussRule;
use crate::scalar::Real;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    if x < half {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        return (T::PI() / (T::PI() * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = T::lit(LANCZOS[0]);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += T::lit(c) / (x + T::from_count(i));
    }
    let t = x + T::lit(LANCZOS_G) + half;
    half * (T::lit(2.0) * T::PI()).ln() + (x + half) * t.ln() - t + acc.ln()
}

pub fn gamma<T: Real>(x: T) -> T {
    if x < T::lit(0.5) {
        T::PI() / ((T::PI() * x).sin() * gamma(T::one() - x))
    } else {
        ln_gamma(x).exp()
    }
}

fn check_order<T: Real>(s: T) -> Result<()> {
    if s > T::zero() && s < T::one() {
        Ok(())
    } else {
        Err(Error::Domain(format!("fractional order s = {s} outside (0, 1)")))
    }
}

/// C(N,s) = 2^{2s} s Γ((N+2s)/2) / (π^{N/2} Γ(1-s)).
pub fn normalization_cns<T: Real>(dim: usize, s: T) -> Result<T> {
    check_order(s)?;
    if dim == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    let two = T::lit(2.0);
    let n = T::from_count(dim);
    let log = two * s * two.ln() + s.ln() + ln_gamma((n + two * s) / two)
        - n / two * T::PI().ln()
        - ln_gamma(T::one() - s);
    Ok(log.exp())
}

/// d_s = 2^{2s-1} Γ(s) / Γ(1-s), the Neumann-trace constant of the extension.
pub fn extension_ds<T: Real>(s: T) -> Result<T> {
    check_order(s)?;
    let two = T::lit(2.0);
    Ok(((two * s - T::one()) * two.ln() + ln_gamma(s) - ln_gamma(T::one() - s)).exp())
}

/// P(N,s) with 1/P = ∫ (1+|x|²)^{-(N+2s)/2} dx = π^{N/2} Γ(s) / Γ((N+2s)/2).
pub fn poisson_pns<T: Real>(dim: usize, s: T) -> Result<T> {
    check_order(s)?;
    if dim == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    let two = T::lit(2.0);
    let n = T::from_count(dim);
    Ok((ln_gamma((n + two * s) / two) - n / two * T::PI().ln() - ln_gamma(s)).exp())
}

/// ω_{N-1} = 2π^{N/2}/Γ(N/2), the area of the unit sphere in ℝ^N.
pub fn surface_area<T: Real>(dim: usize) -> T {
    let two = T::lit(2.0);
    let n = T::from_count(dim);
    two * (n / two * T::PI().ln() - ln_gamma(n / two)).exp()
}

/// Measure of S^{N-2} as seen from the polar-angle reduction (2 for N = 2).
fn polar_measure<T: Real>(dim: usize) -> T {
    if dim == 2 {
        T::lit(2.0)
    } else {
        surface_area(dim - 1)
    }
}

/// G_ℓ(t): the Gegenbauer polynomial C_ℓ^{(N-2)/2} normalized to G_ℓ(1) = 1
/// (Chebyshev T_ℓ for N = 2).
pub fn zonal_weight<T: Real>(degree: usize, dim: usize, t: T) -> Result<T> {
    if t.abs() > T::one() {
        return Err(Error::Domain(format!("zonal argument {t} outside [-1, 1]")));
    }
    if dim < 2 {
        return Err(Error::Domain("zonal weights need N >= 2".into()));
    }
    Ok(zonal_recurrence(degree, dim, t))
}

fn zonal_recurrence<T: Real>(degree: usize, dim: usize, t: T) -> T {
    if degree == 0 {
        return T::one();
    }
    let one = T::one();
    let two = T::lit(2.0);
    if dim == 2 {
        let (mut a, mut b) = (one, t);
        for _ in 1..degree {
            let c = two * t * b - a;
            a = b;
            b = c;
        }
        return b;
    }
    let alpha = T::from_count(dim - 2) / two;
    let (mut a, mut b) = (one, two * alpha * t);
    let (mut a1, mut b1) = (one, two * alpha);
    for n in 1..degree {
        let nf = T::from_count(n);
        let k = (two * (nf + alpha) * t * b - (nf + two * alpha - one) * a) / (nf + one);
        let k1 = (two * (nf + alpha) * b1 - (nf + two * alpha - one) * a1) / (nf + one);
        a = b;
        b = k;
        a1 = b1;
        b1 = k1;
    }
    b / b1
}

/// Coefficients c_k of 1 - G_ℓ(cos θ) = Σ_{k≥1} c_k y^k with y = sin²(θ/2).
///
/// Uses G_ℓ(t) = ₂F₁(-ℓ, ℓ+N-2; (N-1)/2; (1-t)/2), which keeps 1 - G_ℓ
/// accurate to full relative precision near θ = 0.
fn deficit_coefficients<T: Real>(degree: usize, dim: usize) -> Vec<T> {
    let mut coeffs = Vec::with_capacity(degree);
    let l = T::from_count(degree);
    let b = T::from_count(degree + dim - 2);
    let c = T::from_count(dim - 1) / T::lit(2.0);
    let mut term = T::one();
    for k in 0..degree {
        let kf = T::from_count(k);
        term = term * (kf - l) * (b + kf) / ((c + kf) * (kf + T::one()));
        coeffs.push(-term);
    }
    coeffs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec<T> {
    pub dim: usize,
    pub order: T,
    pub sector: usize,
    pub quad_order: usize,
}

impl<T: Real> KernelSpec<T> {
    pub const DEFAULT_QUAD_ORDER: usize = 96;

    pub fn new(dim: usize, order: T, sector: usize) -> Result<Self> {
        let spec = Self {
            dim,
            order,
            sector,
            quad_order: Self::DEFAULT_QUAD_ORDER,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_quad_order(mut self, quad_order: usize) -> Result<Self> {
        self.quad_order = quad_order;
        self.validate()?;
        Ok(self)
    }

    pub fn with_sector(mut self, sector: usize) -> Self {
        self.sector = sector;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_order(self.order)?;
        if self.dim < 2 {
            return Err(Error::Domain(format!("dimension {} < 2", self.dim)));
        }
        if self.quad_order < 8 {
            return Err(Error::Domain(format!(
                "polar quadrature order {} < 8",
                self.quad_order
            )));
        }
        Ok(())
    }
}

/// κ₀, κ_ℓ and their difference at one radius pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZonalValues<T> {
    pub full: T,
    pub sector: T,
    /// κ₀ - κ_ℓ, computed without cancellation.
    pub deficit: T,
}

/// Polar-angle kernel engine for a fixed (N, exponent, ℓ).
///
/// Evaluates ω_{N-2} ∫₀^π (δ² + c + 4rρ sin²(θ/2))^{-e/2} G(cos θ) sin^{N-2}θ dθ
/// where δ = |r - ρ| is passed separately so that nearly coincident radii
/// keep their relative precision, and c ≥ 0 is an optional offset (t² for
/// the extension kernel).
#[derive(Debug, Clone)]
pub struct ZonalKernel<T> {
    dim: usize,
    sector: usize,
    half_exponent: T,
    polar: T,
    main: GaussRule<T>,
    panel: GaussRule<T>,
    deficit: Vec<T>,
}

impl<T: Real> ZonalKernel<T> {
    /// Width (in θ) below which the graded composite rule replaces the
    /// single Gauss rule.
    const GRADED_BELOW: f64 = 0.5;

    /// Kernel with the operator's exponent N + 2s.
    pub fn new(spec: &KernelSpec<T>) -> Result<Self> {
        spec.validate()?;
        let exponent = T::from_count(spec.dim) + T::lit(2.0) * spec.order;
        Self::with_exponent(spec, exponent)
    }

    /// Kernel with an arbitrary exponent in (N, N+2).
    pub fn with_exponent(spec: &KernelSpec<T>, exponent: T) -> Result<Self> {
        spec.validate()?;
        let n = T::from_count(spec.dim);
        if !(exponent > n && exponent < n + T::lit(2.0)) {
            return Err(Error::Domain(format!(
                "kernel exponent {exponent} outside (N, N+2)"
            )));
        }
        Ok(Self {
            dim: spec.dim,
            sector: spec.sector,
            half_exponent: exponent / T::lit(2.0),
            polar: polar_measure(spec.dim),
            main: GaussRule::legendre(spec.quad_order),
            panel: GaussRule::legendre(16),
            deficit: deficit_coefficients(spec.sector, spec.dim),
        })
    }

    pub fn sector(&self) -> usize {
        self.sector
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// κ at (r, ρ); errors on the diagonal.
    pub fn eval(&self, r: T, rho: T) -> Result<ZonalValues<T>> {
        if r == rho {
            return Err(Error::Singularity(r.as_f64()));
        }
        Ok(self.eval_gap(r, rho, (r - rho).abs(), T::zero()))
    }

    /// κ₀ only, at (r, ρ) with explicit gap |r - ρ| and offset.
    pub fn full_gap(&self, r: T, rho: T, gap: T, offset: T) -> T {
        let base = gap * gap + offset;
        let four_rr = T::lit(4.0) * r * rho;
        self.sum_angles(base, four_rr, |_| T::one())
    }

    pub fn eval_gap(&self, r: T, rho: T, gap: T, offset: T) -> ZonalValues<T> {
        let base = gap * gap + offset;
        let four_rr = T::lit(4.0) * r * rho;
        if self.sector == 0 {
            let full = self.sum_angles(base, four_rr, |_| T::one());
            return ZonalValues {
                full,
                sector: full,
                deficit: T::zero(),
            };
        }
        let mut full = T::zero();
        let mut deficit = T::zero();
        self.visit_angles(base, four_rr, |y, w| {
            full += w;
            deficit += w * self.deficit_at(y);
        });
        ZonalValues {
            full,
            sector: full - deficit,
            deficit,
        }
    }

    fn deficit_at(&self, y: T) -> T {
        let mut acc = T::zero();
        for &c in self.deficit.iter().rev() {
            acc = (acc + c) * y;
        }
        acc
    }

    fn sum_angles<F: Fn(T) -> T>(&self, base: T, four_rr: T, g: F) -> T {
        let mut total = T::zero();
        self.visit_angles(base, four_rr, |y, w| total += w * g(y));
        total
    }

    /// Calls `visit(y, w)` with y = sin²(θ/2) and w the kernel weight at each
    /// polar node (including ω_{N-2} and sin^{N-2}θ).
    fn visit_angles<F: FnMut(T, T)>(&self, base: T, four_rr: T, mut visit: F) {
        let neg_a = -self.half_exponent;
        let sin_pow = self.dim - 2;
        let width = if four_rr > T::zero() {
            T::lit(2.0) * (base / four_rr).sqrt()
        } else {
            T::infinity()
        };
        let mut node = |theta: T, w: T| {
            let half = theta * T::lit(0.5);
            let sh = half.sin();
            let y = sh * sh;
            let k = (base + four_rr * y).powf(neg_a);
            let jac = if sin_pow == 0 {
                T::one()
            } else {
                theta.sin().powi(sin_pow as i32)
            };
            visit(y, self.polar * w * k * jac);
        };
        let pi = T::PI();
        if width >= T::lit(Self::GRADED_BELOW) {
            for (theta, w) in self.main.mapped(T::zero(), pi) {
                node(theta, w);
            }
            return;
        }
        let mut lo = T::zero();
        let mut hi = width;
        loop {
            for (theta, w) in self.panel.mapped(lo, hi) {
                node(theta, w);
            }
            if hi >= pi {
                break;
            }
            // the integrand is a near power law in θ beyond a few widths
            let grow = if hi < T::lit(4.0) * width { 2.0 } else { 4.0 };
            lo = hi;
            hi = (hi * T::lit(grow)).min(pi);
        }
    }
}

/// One-shot evaluation of (κ₀, κ_ℓ) at (r, ρ).
pub fn zonal_kernel<T: Real>(r: T, rho: T, spec: &KernelSpec<T>) -> Result<ZonalValues<T>> {
    if !(r >= T::zero() && rho >= T::zero()) {
        return Err(Error::Domain("radii must be non-negative".into()));
    }
    ZonalKernel::new(spec)?.eval(r, rho)
}
