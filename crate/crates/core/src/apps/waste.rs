//! Distributed waste collector: a unit-speed vehicle on a unit circle picks
//! up items (time `p`) wherever they appear and discards each one at the
//! collection point `x_d` (time `d`).

use super::optimize::{golden_section, local_minima};
use crate::error::{check_stable, Error, Result};
use crate::measure::{MixedMeasure, MomentProfile, PollingSpec, StageSpec};
use crate::quadrature::Quadrature;

#[derive(Debug, Clone, PartialEq)]
pub struct WasteSpec {
    pub pickup: f64,
    pub discard: f64,
    pub lambda: f64,
    /// Distribution of item positions on the unit circle; must be atomless.
    pub density: MixedMeasure,
    pub x_d: f64,
}

impl WasteSpec {
    pub fn validate(&self) -> Result<()> {
        if (self.density.circumference() - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid("the waste model lives on the unit circle".into()));
        }
        if self.density.has_atoms() {
            return Err(Error::Invalid("item positions must have a density".into()));
        }
        if !(self.pickup >= 0.0 && self.discard >= 0.0 && self.lambda >= 0.0) {
            return Err(Error::Invalid("pickup, discard and lambda must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.x_d) {
            return Err(Error::Domain(format!("collection point {} outside [0, 1]", self.x_d)));
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.lambda * (self.pickup + self.discard)
    }

    pub fn with_x_d(&self, x_d: f64) -> Self {
        Self { x_d, ..self.clone() }
    }

    /// Two stages: pickup anywhere, then discard at `x_d` (1 is the same
    /// point as 0).
    pub fn polling_spec(&self) -> Result<PollingSpec> {
        self.validate()?;
        let x = if self.x_d >= 1.0 { 0.0 } else { self.x_d };
        PollingSpec::new(
            self.lambda,
            1.0,
            vec![
                StageSpec::new(1.0, self.density.clone(), MomentProfile::constant(self.pickup, self.pickup.powi(2))),
                StageSpec::new(
                    1.0,
                    MixedMeasure::point(1.0, x)?,
                    MomentProfile::constant(self.discard, self.discard.powi(2)),
                ),
            ],
        )
    }
}

fn density_breaks(m: &MixedMeasure) -> Vec<f64> {
    m.pieces().iter().flat_map(|p| [p.start, p.end]).collect()
}

/// Workload from its closed terms plus the double integral over the item
/// density.
pub fn waste_workload(ws: &WasteSpec, quad: &Quadrature) -> Result<f64> {
    ws.validate()?;
    let (p, d, lam, xd) = (ws.pickup, ws.discard, ws.lambda, ws.x_d);
    let rho = ws.rho();
    check_stable(rho)?;
    let m = &ws.density;
    let cdf = |x: f64| m.cdf(x.clamp(0.0, 1.0)).unwrap_or(0.0);
    let e_q = m.integrate(|q| q, quad)?;
    let closed = rho * lam * (p * p + d * d) / (2.0 * (1.0 - rho))
        + rho * lam * p * d / (1.0 - rho)
        + rho / 2.0
        + lam * d / (1.0 - rho) * (xd - e_q + (1.0 - cdf(xd)));

    let mut breaks = density_breaks(m);
    breaks.push(xd);
    let rule = quad.rule();
    let inner = |q: f64| -> f64 {
        let mut cuts: Vec<f64> = breaks.iter().copied().chain([0.0, q, 1.0]).filter(|x| (0.0..=1.0).contains(x)).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let fq = cdf(q);
        let at_q = if xd <= q { 1.0 } else { 0.0 };
        let mut sum = 0.0;
        for w in cuts.windows(2) {
            sum += rule.integrate(w[0], w[1], |y| {
                let before = if y < q { 1.0 } else { 0.0 };
                let past = if xd <= y { 1.0 } else { 0.0 };
                p * (cdf(y) - fq + before) + d * (past - at_q + before)
            });
        }
        lam * sum
    };
    let double = m.integrate_split(inner, &[xd], quad)?;
    Ok(closed + rho / (1.0 - rho) * double)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WasteOptimum {
    /// First global minimizer of `x − F(x)`.
    pub x_star: f64,
    /// Every global minimizer found, within `1e-9` of the minimum.
    pub minimizers: Vec<f64>,
    pub value: f64,
    /// The objective varies by less than `1e-9` over the grid; every point
    /// is then optimal.
    pub flat: bool,
    pub curve: Vec<(f64, f64)>,
}

pub const WASTE_GRID_POINTS: usize = 10_000;

/// Minimizes `x − F(x)` over `[0, 1]` by a grid of `points` spacing
/// `1/(points−1)`, shifted by `offset` spacings (endpoints always
/// included), then golden-section refinement around each local minimum.
pub fn waste_optimize(density: &MixedMeasure, points: usize, offset: f64) -> Result<WasteOptimum> {
    if density.has_atoms() || (density.circumference() - 1.0).abs() > 1e-12 {
        return Err(Error::Invalid("need an atomless distribution on the unit circle".into()));
    }
    if points < 3 || !(0.0..1.0).contains(&offset) {
        return Err(Error::Domain("need at least 3 grid points and an offset in [0, 1)".into()));
    }
    let g = |x: f64| x - density.cdf(x.clamp(0.0, 1.0)).unwrap_or(0.0);
    let h = 1.0 / (points - 1) as f64;
    let mut xs: Vec<f64> = Vec::with_capacity(points + 2);
    if offset > 0.0 {
        xs.push(0.0);
    }
    xs.extend((0..points).map(|k| (k as f64 + offset) * h).filter(|&x| x <= 1.0));
    if *xs.last().unwrap() < 1.0 {
        xs.push(1.0);
    }
    let curve: Vec<(f64, f64)> = xs.iter().map(|&x| (x, g(x))).collect();
    let values: Vec<f64> = curve.iter().map(|c| c.1).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-9 {
        return Ok(WasteOptimum { x_star: 0.0, minimizers: vec![0.0], value: lo, flat: true, curve });
    }
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    for i in local_minima(&values) {
        let a = xs[i.saturating_sub(1)];
        let b = xs[(i + 1).min(xs.len() - 1)];
        let (x, v) = golden_section(g, a, b, 1e-12);
        candidates.push(if v < values[i] { (x, v) } else { (xs[i], values[i]) });
    }
    let best = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let mut minimizers: Vec<f64> = candidates.iter().filter(|c| c.1 <= best + 1e-9).map(|c| c.0).collect();
    minimizers.sort_by(f64::total_cmp);
    minimizers.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    Ok(WasteOptimum { x_star: minimizers[0], minimizers, value: best, flat: false, curve })
}
