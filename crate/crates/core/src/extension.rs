//! s-harmonic extension of radial profiles by Poisson-kernel quadrature.
//!
//! ```text
//! W(x,t) = P(N,s) t^{2s} ∫ w(y) (t² + |x-y|²)^{-(N+2s)/2} dy
//! ```
//!
//! For radial w the angular part is the sector-0 zonal kernel with offset
//! t², leaving one radial integral over the support [0, 1].

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::RadialFunction;
use crate::error::{Error, Result};
use crate::quadrature::GaussRule;
use crate::scalar::Real;
use crate::special::{extension_ds, poisson_pns, KernelSpec, ZonalKernel};

/// Smallest height evaluated by direct quadrature.
pub const MIN_HEIGHT: f64 = 1e-4;
/// Radii on which the Neumann trace is required to extrapolate stably.
pub const TRACE_WINDOW: f64 = 0.8;
const DIVERGENCE: f64 = 0.2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtensionSample<T> {
    pub base: RadialFunction<T>,
    pub radii: Vec<T>,
    pub heights: Vec<T>,
    /// values[i][j] = W(radii[i], heights[j])
    pub values: Vec<Vec<T>>,
}

impl<T: Real> ExtensionSample<T> {
    /// Long-format table with columns r, t, W.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,t,W\n");
        for (r, row) in self.radii.iter().zip(&self.values) {
            for (t, w) in self.heights.iter().zip(row) {
                let _ = writeln!(out, "{:e},{:e},{:e}", r.as_f64(), t.as_f64(), w.as_f64());
            }
        }
        out
    }
}

/// Extension evaluator for one (N, s).
#[derive(Debug, Clone)]
pub struct Extender<T> {
    kernel: ZonalKernel<T>,
    dim: usize,
    order: T,
    poisson: T,
    rule: GaussRule<T>,
}

impl<T: Real> Extender<T> {
    pub fn new(spec: &KernelSpec<T>) -> Result<Self> {
        let radial = spec.with_sector(0);
        Ok(Self {
            kernel: ZonalKernel::new(&radial)?,
            dim: spec.dim,
            order: spec.order,
            poisson: poisson_pns(spec.dim, spec.order)?,
            rule: GaussRule::legendre(8),
        })
    }

    /// Break points: mesh nodes plus a geometric cluster of spacing ~t around r.
    fn breakpoints(&self, w: &RadialFunction<T>, r: T, t: T) -> Vec<T> {
        let mut pts: Vec<T> = w.mesh().nodes().to_vec();
        let mut d = t * T::lit(0.25);
        while d < T::one() {
            for c in [r - d, r + d] {
                if c > T::zero() && c < T::one() {
                    pts.push(c);
                }
            }
            d *= T::lit(2.0);
        }
        if r > T::zero() && r < T::one() {
            pts.push(r);
        }
        pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        pts.dedup();
        pts
    }

    /// W(r, t).
    pub fn eval(&self, w: &RadialFunction<T>, r: T, t: T) -> Result<T> {
        if !(t >= T::lit(MIN_HEIGHT)) {
            return Err(Error::QuadratureFailure(format!(
                "height {t} below {MIN_HEIGHT}; use the Neumann trace extrapolation"
            )));
        }
        if !(r >= T::zero()) {
            return Err(Error::Domain(format!("radius {r} is negative")));
        }
        let t2 = t * t;
        let n1 = self.dim as i32 - 1;
        let pts = self.breakpoints(w, r, t);
        let mut acc = T::zero();
        for seg in pts.windows(2) {
            for (rho, wt) in self.rule.mapped(seg[0], seg[1]) {
                let v = w.eval(rho);
                if v != T::zero() {
                    let k = self.kernel.full_gap(r, rho, (r - rho).abs(), t2);
                    acc += wt * v * k * rho.powi(n1);
                }
            }
        }
        Ok(self.poisson * t.powf(T::lit(2.0) * self.order) * acc)
    }

    /// -d_s t^{1-2s} ∂_t W(r, t), with ∂_t by a centred difference of step t/8
    /// corrected for the exact t^{2s} leading term.
    fn flux(&self, w: &RadialFunction<T>, r: T, t: T, ds: T) -> Result<T> {
        let two_s = T::lit(2.0) * self.order;
        let h = t / T::lit(8.0);
        let up = self.eval(w, r, t + h)?;
        let down = self.eval(w, r, t - h)?;
        let bias = (T::lit(1.125).powf(two_s) - T::lit(0.875).powf(two_s)) / (two_s / T::lit(4.0));
        let derivative = (up - down) / (T::lit(2.0) * h) / bias;
        Ok(-ds * t.powf(T::one() - two_s) * derivative)
    }

    /// Richardson-extrapolated Neumann trace at one radius.
    pub fn trace_at(&self, w: &RadialFunction<T>, r: T, heights: &[T]) -> Result<(T, T)> {
        check_heights(heights)?;
        let ds = extension_ds(self.order)?;
        let raw: Vec<T> = heights
            .iter()
            .map(|&t| self.flux(w, r, t, ds))
            .collect::<Result<_>>()?;
        let q = T::lit(2.0) - T::lit(2.0) * self.order;
        let mut extrapolated = Vec::with_capacity(raw.len() - 1);
        for k in 0..raw.len() - 1 {
            let ratio = heights[k] / heights[k + 1];
            let f = ratio.powf(q);
            extrapolated.push((f * raw[k + 1] - raw[k]) / (f - T::one()));
        }
        let last = *extrapolated.last().expect("at least two heights");
        let spread = if extrapolated.len() > 1 {
            (last - extrapolated[extrapolated.len() - 2]).abs()
        } else {
            (raw[raw.len() - 1] - raw[raw.len() - 2]).abs()
        };
        Ok((last, spread))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn poisson_constant(&self) -> T {
        self.poisson
    }
}

fn check_heights<T: Real>(heights: &[T]) -> Result<()> {
    if heights.len() < 2 {
        return Err(Error::Argument("need at least two heights".into()));
    }
    if heights.windows(2).any(|h| !(h[1] < h[0])) {
        return Err(Error::Argument("heights must decrease".into()));
    }
    Ok(())
}

/// W on the grid radii × heights.
pub fn cs_extend<T: Real>(
    w: &RadialFunction<T>,
    radii: &[T],
    heights: &[T],
    spec: &KernelSpec<T>,
) -> Result<ExtensionSample<T>> {
    let ext = Extender::new(spec)?;
    let values = radii
        .par_iter()
        .map(|&r| heights.iter().map(|&t| ext.eval(w, r, t)).collect::<Result<Vec<T>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(ExtensionSample {
        base: w.clone(),
        radii: radii.to_vec(),
        heights: heights.to_vec(),
        values,
    })
}

/// (-Δ)^s w at the mesh nodes from the extension's Neumann data.
///
/// Stability of the extrapolation is enforced on r ≤ 0.8; closer to the
/// boundary the corner of w makes the trace O(1) accurate only.
pub fn neumann_trace<T: Real>(w: &RadialFunction<T>, spec: &KernelSpec<T>, heights: &[T]) -> Result<RadialFunction<T>> {
    check_heights(heights)?;
    let ext = Extender::new(spec)?;
    let nodes = w.mesh().nodes();
    let values = nodes[..nodes.len() - 1]
        .par_iter()
        .map(|&r| {
            let (v, spread) = ext.trace_at(w, r, heights)?;
            if r <= T::lit(TRACE_WINDOW) && spread > T::lit(DIVERGENCE) * v.abs() {
                return Err(Error::ExtrapolationDivergence(format!(
                    "trace at r = {r}: successive estimates differ by {spread} (value {v})"
                )));
            }
            Ok(v)
        })
        .collect::<Result<Vec<T>>>()?;
    let mut all = values;
    all.push(T::zero());
    RadialFunction::new(w.mesh().clone(), all)
}

/// t^N W(0,t) / (P(N,s) ∫ w), which tends to 1 as t → ∞.
pub fn moment_limit<T: Real>(w: &RadialFunction<T>, spec: &KernelSpec<T>, t_large: T) -> Result<T> {
    if !(t_large >= T::lit(20.0)) {
        return Err(Error::Argument(format!("far-field height {t_large} < 20")));
    }
    let ext = Extender::new(spec)?;
    let moment = w.ball_integral(spec.dim);
    let far = t_large.powi(spec.dim as i32) * ext.eval(w, T::zero(), t_large)?;
    Ok(far / (ext.poisson_constant() * moment))
}

/// t^N W(0,t) itself, for profiles whose integral may vanish.
pub fn far_field_moment<T: Real>(w: &RadialFunction<T>, spec: &KernelSpec<T>, t_large: T) -> Result<T> {
    let ext = Extender::new(spec)?;
    Ok(t_large.powi(spec.dim as i32) * ext.eval(w, T::zero(), t_large)?)
}

/// W(0, t) along the axis.
pub fn axis_profile<T: Real>(w: &RadialFunction<T>, spec: &KernelSpec<T>, heights: &[T]) -> Result<Vec<T>> {
    let ext = Extender::new(spec)?;
    heights.par_iter().map(|&t| ext.eval(w, T::zero(), t)).collect()
}

/// t^{2s-1} div(t^{1-2s}∇W) at (r, t) by centred differences of step h.
pub fn harmonicity_residual<T: Real>(w: &RadialFunction<T>, spec: &KernelSpec<T>, r: T, t: T, h: T) -> Result<T> {
    if !(r > h && t > h) {
        return Err(Error::Argument("stencil leaves the open quarter plane".into()));
    }
    let ext = Extender::new(spec)?;
    let a = T::one() - T::lit(2.0) * spec.order;
    let two = T::lit(2.0);
    let c = ext.eval(w, r, t)?;
    let (rp, rm) = (ext.eval(w, r + h, t)?, ext.eval(w, r - h, t)?);
    let (tp, tm) = (ext.eval(w, r, t + h)?, ext.eval(w, r, t - h)?);
    let n1 = T::from_count(spec.dim - 1);
    let radial = (rp - two * c + rm) / (h * h) + n1 / r * (rp - rm) / (two * h);
    let half_up = (t + h / two).powf(a) * (tp - c) / h;
    let half_down = (t - h / two).powf(a) * (c - tm) / h;
    let vertical = (half_up - half_down) / h;
    Ok(radial + t.powf(-a) * vertical)
}
