//! Gauss-Legendre rules and composite panel integration.
//!
//! An `n`-point rule integrates polynomials of degree `2n - 1` exactly on
//! each panel. Nodes are the roots of the Legendre polynomial `P_n`, found
//! by Newton iteration from the usual cosine guesses.

use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Returns `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a Gauss-Legendre rule needs at least one node");
        if n == 1 {
            return Self { nodes: vec![0.0], weights: vec![2.0] };
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() <= 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre(n, x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Calls `f(x, w)` for every node mapped onto `[a, b]`.
    pub fn for_each<F: FnMut(f64, f64)>(&self, a: f64, b: f64, mut f: F) {
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            f(c + h * x, w * h);
        }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let mut sum = 0.0;
        self.for_each(a, b, |x, w| sum += w * f(x));
        sum
    }
}

/// Composite rule: `panels` equal panels per density piece, each carrying
/// a fixed Gauss-Legendre rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub panels: usize,
    /// Relative change allowed when the panel count is doubled.
    pub tolerance: f64,
    rule: GaussLegendre,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self::new(64, 8)
    }
}

impl Quadrature {
    pub fn new(panels: usize, order: usize) -> Self {
        Self { panels: panels.max(1), tolerance: 1e-6, rule: GaussLegendre::new(order) }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn order(&self) -> usize {
        self.rule.order()
    }

    pub fn rule(&self) -> &GaussLegendre {
        &self.rule
    }

    /// Same rule with twice the panels.
    pub fn refined(&self) -> Self {
        Self { panels: self.panels * 2, tolerance: self.tolerance, rule: self.rule.clone() }
    }

    /// Panel count for a sub-interval of length `len` cut from a piece of
    /// length `piece_len`, so that panel width stays roughly constant.
    pub(crate) fn panels_for(&self, len: f64, piece_len: f64) -> usize {
        if piece_len <= 0.0 || len >= piece_len {
            return self.panels;
        }
        ((self.panels as f64 * len / piece_len - 1e-9).ceil() as usize).max(1)
    }

    pub fn for_each_node<F: FnMut(f64, f64)>(&self, a: f64, b: f64, panels: usize, mut f: F) {
        if b <= a {
            return;
        }
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        for p in 0..panels {
            let lo = a + h * p as f64;
            let hi = if p + 1 == panels { b } else { a + h * (p + 1) as f64 };
            self.rule.for_each(lo, hi, &mut f);
        }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, panels: usize, mut f: F) -> f64 {
        let mut sum = 0.0;
        self.for_each_node(a, b, panels, |x, w| sum += w * f(x));
        sum
    }
}
