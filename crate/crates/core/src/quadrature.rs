//! Gauss–Legendre rules and the graded composite rules built on them.

use crate::scalar::Real;

/// Gauss–Legendre rule on the reference interval [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussRule<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> GaussRule<T> {
    /// Nodes are the roots of P_n, found by Newton iteration from the
    /// Tricomi initial guesses.
    pub fn legendre(n: usize) -> Self {
        assert!(n >= 1, "Gauss rule needs at least one node");
        let mut nodes = vec![T::zero(); n];
        let mut weights = vec![T::zero(); n];
        let one = T::one();
        let two = T::lit(2.0);
        let nf = T::from_count(n);
        let tol = T::epsilon() * T::lit(4.0);
        for i in 0..n.div_ceil(2) {
            let guess = (T::PI() * (T::from_count(i) + T::lit(0.75)) / (nf + T::lit(0.5))).cos();
            let mut x = guess;
            let mut dp = one;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= tol {
                    let (_, d) = legendre_with_derivative(n, x);
                    dp = d;
                    break;
                }
            }
            let w = two / ((one - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = T::zero();
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Nodes and weights mapped affinely onto [a, b].
    pub fn mapped(&self, a: T, b: T) -> impl Iterator<Item = (T, T)> + '_ {
        let half = (b - a) * T::lit(0.5);
        let mid = (a + b) * T::lit(0.5);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(T) -> T>(&self, a: T, b: T, mut f: F) -> T {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative<T: Real>(n: usize, x: T) -> (T, T) {
    let one = T::one();
    let mut p0 = one;
    let mut p1 = x;
    for k in 2..=n {
        let kf = T::from_count(k);
        let p2 = ((T::lit(2.0) * kf - one) * x * p1 - (kf - one) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = T::from_count(n);
    let d = nf * (x * p1 - p0) / (x * x - one);
    (p1, d)
}

/// A list of (node, weight) pairs on an arbitrary interval.
#[derive(Debug, Clone, Default)]
pub struct CompositeRule<T> {
    pub points: Vec<(T, T)>,
}

impl<T: Real> CompositeRule<T> {
    pub fn integrate<F: FnMut(T) -> T>(&self, mut f: F) -> T {
        self.points.iter().map(|&(x, w)| w * f(x)).sum()
    }

    fn push_panel(&mut self, rule: &GaussRule<T>, a: T, b: T) {
        self.points.extend(rule.mapped(a, b));
    }

    /// Panels on [0, len] shrinking geometrically toward 0 by `ratio`.
    pub fn geometric_toward_zero(rule: &GaussRule<T>, len: T, ratio: T, levels: usize) -> Self {
        let mut out = Self::default();
        let mut hi = len;
        for _ in 0..levels {
            let lo = hi * ratio;
            out.push_panel(rule, lo, hi);
            hi = lo;
        }
        out.push_panel(rule, T::zero(), hi);
        out
    }

    /// Panels [d0·2^k, d0·2^(k+1)] covering [d0, d1].
    pub fn doubling(rule: &GaussRule<T>, d0: T, d1: T) -> Self {
        let mut out = Self::default();
        let mut lo = d0;
        while lo < d1 {
            let hi = (lo * T::lit(2.0)).min(d1);
            out.push_panel(rule, lo, hi);
            if hi >= d1 {
                break;
            }
            lo = hi;
        }
        out
    }
}

/// Rule for ∫₀^len g(d) dd when g(d) ~ d^β as d → 0 (β > -1).
///
/// Substitutes d = len·τ^m with m = 1/(β+1) so the leading term becomes
/// constant in τ, then integrates τ over a short geometric panel sequence.
///
/// When β is close to -1 the map sends τ-nodes to absurdly small d; once
/// d/len would drop below `LUMP_BELOW` the remaining inner panel [0, τ] is
/// lumped into a single node, exact for the constant leading term.
pub fn endpoint_singular_rule<T: Real>(rule: &GaussRule<T>, len: T, beta: T) -> CompositeRule<T> {
    const LUMP_BELOW: f64 = 1e-12;
    let m = T::one() / (beta + T::one());
    // each panel shrinks d by at most a factor 100
    let ratio = T::lit(0.15).max(T::lit(0.01).powf(T::one() / m));
    let map = |t: T| (len * t.powf(m), len * m * t.powf(m - T::one()));
    let mut tau = CompositeRule::default();
    let mut hi = T::one();
    let mut lumped = false;
    for _ in 0..6 {
        let lo = hi * ratio;
        if lo.powf(m) < T::lit(LUMP_BELOW) {
            lumped = true;
            break;
        }
        tau.push_panel(rule, lo, hi);
        hi = lo;
    }
    let mut points: Vec<(T, T)> = tau
        .points
        .into_iter()
        .map(|(t, w)| {
            let (d, jac) = map(t);
            (d, w * jac)
        })
        .collect();
    if lumped {
        let (d, jac) = map(hi);
        points.push((d, hi * jac));
    } else {
        points.extend(rule.mapped(T::zero(), hi).map(|(t, w)| {
            let (d, jac) = map(t);
            (d, w * jac)
        }));
    }
    CompositeRule { points }
}
