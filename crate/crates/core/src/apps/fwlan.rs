//! Ferry-assisted wireless LAN on a `2D1 × 2D2` rectangle.
//!
//! Nodes are uniform on the rectangle and the ferry drives a rectangular
//! path at distance `d` inside the boundary. A node is served from the
//! nearest point of the path, so every request lands either on a side of
//! the path (density `p1 f_ψ`) or, for nodes in a `d × d` corner square,
//! on a path corner (atom `p0 = d² p1`). Transfer time grows with distance
//! as `η (1 + dist²)^{β/2}`.
//!
//! In the autonomous architecture each request is picked up at the
//! source's point and delivered at the destination's point (two stages,
//! both distributed as Ψ). In the hybrid one the ferry first hands the
//! data to a base station next to path position 0, then delivers it.

use std::sync::Arc;

use super::optimize::golden_section;
use crate::error::{check_stable, Error, Result};
use crate::measure::{
    Atom, Cumulative, DensityPiece, MixedMeasure, MomentFn, MomentProfile, PointMoments, PollingSpec, StageSpec,
};
use crate::quadrature::{GaussLegendre, Quadrature};

#[derive(Debug, Clone, PartialEq)]
pub struct FwlanGeometry {
    /// Half-length of the short side.
    pub d1: f64,
    /// Half-length of the long side.
    pub d2: f64,
    /// Distance of the path from the boundary.
    pub d: f64,
    /// Bytes per transfer, channel constant included.
    pub eta: f64,
    /// Path-loss exponent.
    pub beta: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// Hybrid only: transfer size to the base station.
    pub eta1: f64,
    /// Hybrid only: distance of the base station from the path.
    pub d_bs: f64,
}

impl FwlanGeometry {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.d1, self.d2, self.d, self.eta, self.beta, self.alpha, self.lambda, self.eta1, self.d_bs]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Invalid("geometry parameters must be finite".into()));
        }
        if !(self.d > 0.0 && self.d <= self.d1 && self.d1 <= self.d2) {
            return Err(Error::Invalid(format!(
                "need 0 < d <= D1 <= D2, got d = {}, D1 = {}, D2 = {}",
                self.d, self.d1, self.d2
            )));
        }
        if self.d == self.d2 {
            return Err(Error::Invalid("the path degenerates to a point when d = D2".into()));
        }
        if !(self.eta > 0.0 && self.beta >= 0.0 && self.alpha > 0.0 && self.lambda >= 0.0) {
            return Err(Error::Invalid("need eta > 0, beta >= 0, alpha > 0, lambda >= 0".into()));
        }
        if !(self.eta1 >= 0.0 && self.d_bs >= 0.0) {
            return Err(Error::Invalid("need eta1 >= 0 and d_bs >= 0".into()));
        }
        Ok(())
    }

    pub fn with_d(&self, d: f64) -> Self {
        Self { d, ..self.clone() }
    }

    pub fn circumference(&self) -> f64 {
        4.0 * (self.d1 - self.d) + 4.0 * (self.d2 - self.d)
    }

    /// `q0 = 0, …, q4 = |C|`.
    pub fn corners(&self) -> [f64; 5] {
        let short = 2.0 * (self.d1 - self.d);
        let long = 2.0 * (self.d2 - self.d);
        let q1 = short;
        let q2 = q1 + long;
        let q3 = q2 + short;
        [0.0, q1, q2, q3, self.circumference()]
    }

    /// Density normalizer `1/(4 D1 D2)`.
    pub fn p1(&self) -> f64 {
        1.0 / (4.0 * self.d1 * self.d2)
    }

    /// Mass of each corner atom.
    pub fn p0(&self) -> f64 {
        self.d * self.d * self.p1()
    }

    /// Base-station transfer time `η1 (1 + d_bs²)^{β/2}`.
    pub fn b_bs(&self) -> f64 {
        self.eta1 * (1.0 + self.d_bs * self.d_bs).powf(self.beta / 2.0)
    }

    /// Width of the strip served from position `q` of a side.
    pub fn f_psi(&self, q: f64) -> f64 {
        let c = self.corners();
        for i in 0..4 {
            if q >= c[i] && q <= c[i + 1] {
                let into = q - c[i];
                let left = c[i + 1] - q;
                return (self.d + into.min(left)).min(self.d1);
            }
        }
        self.d1
    }
}

/// `x ↦ ∫_0^x (1 + l²)^e dl`, tabulated on unit cells with a local
/// Gauss-Legendre rule for the remainder.
#[derive(Clone)]
struct PowerIntegral {
    exponent: f64,
    cells: Vec<f64>,
    rule: GaussLegendre,
}

impl PowerIntegral {
    fn new(exponent: f64, max: f64) -> Self {
        let mut t = Self { exponent, cells: vec![0.0], rule: GaussLegendre::new(10) };
        let n = max.ceil().max(1.0) as usize;
        for k in 0..n {
            let v = t.piece(k as f64, (k + 1) as f64);
            t.cells.push(t.cells[k] + v);
        }
        t
    }

    fn piece(&self, a: f64, b: f64) -> f64 {
        let e = self.exponent;
        if e.fract() == 0.0 && e.abs() < 64.0 {
            let k = e as i32;
            self.rule.integrate(a, b, |l| (1.0 + l * l).powi(k))
        } else {
            self.rule.integrate(a, b, |l| (1.0 + l * l).powf(e))
        }
    }

    fn eval(&self, x: f64) -> f64 {
        if x < 0.0 {
            return -self.eval(-x);
        }
        let k = (x.floor() as usize).min(self.cells.len() - 1);
        self.cells[k] + self.piece(k as f64, x)
    }
}

/// `∬_{[0,d]²} (1 + x² + y²)^e`.
fn corner_integral(d: f64, exponent: f64) -> f64 {
    let rule = GaussLegendre::new(32);
    let mut sum = 0.0;
    rule.for_each(0.0, d, |x, wx| {
        rule.for_each(0.0, d, |y, wy| sum += wx * wy * (1.0 + x * x + y * y).powf(exponent));
    });
    sum
}

/// The common arrival measure Ψ of sources and destinations.
pub fn fwlan_measure(geo: &FwlanGeometry) -> Result<MixedMeasure> {
    geo.validate()?;
    let c = geo.corners();
    let p1 = geo.p1();
    let p0 = geo.p0();
    let mut atoms: Vec<Atom> = Vec::new();
    for &q in &c[..4] {
        match atoms.last_mut() {
            Some(a) if a.position == q => a.mass += p0,
            _ => atoms.push(Atom { position: q, mass: p0 }),
        }
    }
    let ramp = geo.d1 - geo.d;
    let mut knots: Vec<f64> = Vec::new();
    for i in 0..4 {
        if c[i + 1] > c[i] {
            let mid = 0.5 * (c[i] + c[i + 1]);
            knots.extend([c[i], (c[i] + ramp).min(mid), (c[i + 1] - ramp).max(mid)]);
        }
    }
    knots.push(c[4]);
    knots.dedup();
    let pieces = knots
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| DensityPiece { start: w[0], end: w[1], start_value: p1 * geo.f_psi(w[0]), end_value: p1 * geo.f_psi(w[1]) })
        .collect();
    MixedMeasure::new(geo.circumference(), atoms, pieces)
}

/// Transfer-time moments `b(q)`, `b⁽²⁾(q)` of a request placed at `q`.
pub fn fwlan_moments(geo: &FwlanGeometry) -> Result<MomentProfile> {
    geo.validate()?;
    let max = geo.d1;
    let moment = |power: i32| -> MomentFn {
        let exponent = geo.beta / 2.0 * power as f64;
        let scale = geo.eta.powi(power);
        let table = PowerIntegral::new(exponent, max);
        let g = geo.clone();
        let label = if power == 1 { "fwlan b" } else { "fwlan b2" };
        MomentFn::Custom {
            label: label.into(),
            f: Arc::new(move |q| {
                let f = g.f_psi(q);
                scale * (table.eval(f - g.d) + table.eval(g.d)) / f
            }),
        }
    };
    let d2 = geo.d * geo.d;
    let bc = geo.eta * corner_integral(geo.d, geo.beta / 2.0) / d2;
    let bc2 = geo.eta * geo.eta * corner_integral(geo.d, geo.beta) / d2;
    let mut points: Vec<PointMoments> = Vec::new();
    for &q in &geo.corners()[..4] {
        if points.last().is_none_or(|p| p.position != q) {
            points.push(PointMoments { position: q, first: bc, second: bc2 });
        }
    }
    Ok(MomentProfile::new(moment(1), moment(2)).with_points(points))
}

/// Closed form of the mean transfer time `b̄ = ∫ b dΨ`.
pub fn fwlan_mean_closed_form(geo: &FwlanGeometry) -> Result<f64> {
    geo.validate()?;
    let e = geo.beta / 2.0;
    let g1 = PowerIntegral::new(e, geo.d1);
    let h = g1.eval(geo.d1 - geo.d) + g1.eval(geo.d);
    let g = corner_integral(geo.d, e);
    let edge = (1.0 + (geo.d1 - geo.d).powi(2)).powf(e + 1.0) - 1.0;
    Ok(geo.eta * geo.p1() * (geo.circumference() * h - 8.0 * edge / (geo.beta + 2.0) + 4.0 * g))
}

/// Two-stage autonomous model.
pub fn fwlan_spec(geo: &FwlanGeometry) -> Result<PollingSpec> {
    let psi = fwlan_measure(geo)?;
    let m = fwlan_moments(geo)?;
    PollingSpec::new(
        geo.lambda,
        geo.alpha,
        vec![StageSpec::new(1.0, psi.clone(), m.clone()), StageSpec::new(1.0, psi, m)],
    )
}

/// Three-stage hybrid model with the base station at position 0.
pub fn fwlan_hybrid_spec(geo: &FwlanGeometry) -> Result<PollingSpec> {
    let psi = fwlan_measure(geo)?;
    let m = fwlan_moments(geo)?;
    let b = geo.b_bs();
    PollingSpec::new(
        geo.lambda,
        geo.alpha,
        vec![
            StageSpec::new(1.0, psi.clone(), m.clone()),
            StageSpec::new(1.0, MixedMeasure::point(geo.circumference(), 0.0)?, MomentProfile::constant(b, b * b)),
            StageSpec::new(1.0, psi, m),
        ],
    )
}

/// Ψ-expectations entering the closed forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwlanTerms {
    pub circumference: f64,
    pub bbar: f64,
    pub bbar2: f64,
    /// `E[Q b(Q)]`.
    pub e_qb: f64,
    /// `E[Q]`.
    pub e_q: f64,
    /// `E[b̂(Q)]` with `b̂(q) = ∫_{[0,q)} b dΨ`.
    pub e_bhat: f64,
    /// `E[b(Q) b̂(Q)]`.
    pub e_b_bhat: f64,
    pub p0: f64,
    pub corner_b: f64,
}

pub fn fwlan_terms(geo: &FwlanGeometry, quad: &Quadrature) -> Result<FwlanTerms> {
    let psi = fwlan_measure(geo)?;
    let m = fwlan_moments(geo)?;
    let b = |q: f64| m.first(q);
    let cum = Cumulative::new(&psi, b, quad)?;
    let atoms: Vec<f64> = psi.atoms().iter().map(|a| a.position).collect();
    Ok(FwlanTerms {
        circumference: geo.circumference(),
        bbar: psi.integrate(b, quad)?,
        bbar2: psi.integrate(|q| m.second(q), quad)?,
        e_qb: psi.integrate(|q| q * b(q), quad)?,
        e_q: psi.integrate(|q| q, quad)?,
        e_bhat: psi.integrate_split(|q| cum.below(q), &atoms, quad)?,
        e_b_bhat: psi.integrate_split(|q| b(q) * cum.below(q), &atoms, quad)?,
        p0: geo.p0(),
        corner_b: m.first(0.0),
    })
}

/// Autonomous workload. `E[b b̂]` is kept as is: it equals `b̄²/2` only
/// when Ψ has no atoms.
pub fn fwlan_workload(geo: &FwlanGeometry, quad: &Quadrature) -> Result<f64> {
    let t = fwlan_terms(geo, quad)?;
    autonomous_from_terms(geo, &t)
}

fn autonomous_from_terms(geo: &FwlanGeometry, t: &FwlanTerms) -> Result<f64> {
    let (lam, c, b) = (geo.lambda, t.circumference, t.bbar);
    let rho = 2.0 * lam * b;
    check_stable(rho)?;
    let a_inv = 1.0 / geo.alpha;
    Ok(rho * lam * (t.bbar2 + b * b) / (1.0 - rho)
        + rho * c * a_inv / 2.0
        + lam * a_inv / (1.0 - rho) * (4.0 * lam * b * b * c - 2.0 * lam * c * t.e_b_bhat)
        + lam * a_inv * (t.e_qb - b * t.e_q + c * t.e_bhat))
}

/// The simplified autonomous form that substitutes `E[b b̂] = b̄²/2`.
pub fn fwlan_workload_atomless_form(geo: &FwlanGeometry, quad: &Quadrature) -> Result<f64> {
    let t = fwlan_terms(geo, quad)?;
    let (lam, c, b) = (geo.lambda, t.circumference, t.bbar);
    let rho = 2.0 * lam * b;
    check_stable(rho)?;
    let a_inv = 1.0 / geo.alpha;
    Ok(rho * lam / (1.0 - rho) * (t.bbar2 + b * b)
        + rho * c * a_inv * (2.0 + rho) / (4.0 * (1.0 - rho))
        + lam * a_inv * (t.e_qb - b * t.e_q + c * t.e_bhat))
}

/// Hybrid workload for any base-station transfer time.
pub fn fwlan_hybrid_workload(geo: &FwlanGeometry, quad: &Quadrature) -> Result<f64> {
    let t = fwlan_terms(geo, quad)?;
    hybrid_from_terms(geo, &t)
}

fn hybrid_from_terms(geo: &FwlanGeometry, t: &FwlanTerms) -> Result<f64> {
    let (lam, c, b) = (geo.lambda, t.circumference, t.bbar);
    let be = geo.b_bs();
    let rho = 2.0 * lam * b + lam * be;
    check_stable(rho)?;
    let a_inv = 1.0 / geo.alpha;
    let psi0 = t.p0;
    let service = rho * lam * (2.0 * t.bbar2 + 2.0 * b * b + be * be + 4.0 * be * b) / (2.0 * (1.0 - rho));
    let bracket = 2.0 * rho * c * b - 2.0 * lam * c * t.e_b_bhat - 2.0 * lam * c * (be + b) * t.e_bhat
        + (be + b) * c * (1.0 - psi0)
        + c * lam * be * psi0 * (t.corner_b + be + b);
    Ok(service + rho * c * a_inv / 2.0 + lam * a_inv * (t.e_qb - (be + b) * t.e_q) + lam * a_inv / (1.0 - rho) * bracket)
}

/// Simplified hybrid form for general `b_bs`, valid for atomless Ψ.
pub fn fwlan_hybrid_atomless_form(geo: &FwlanGeometry, quad: &Quadrature) -> Result<f64> {
    let t = fwlan_terms(geo, quad)?;
    let (lam, c, b) = (geo.lambda, t.circumference, t.bbar);
    let be = geo.b_bs();
    let rho = 2.0 * lam * b + lam * be;
    check_stable(rho)?;
    let a_inv = 1.0 / geo.alpha;
    Ok(rho * lam * (2.0 * t.bbar2 + 2.0 * b * b + be * be + 4.0 * be * b) / (2.0 * (1.0 - rho))
        + c * a_inv * (2.0 * rho + 2.0 * lam * lam * b * b - lam * lam * be * be) / (4.0 * (1.0 - rho))
        + lam * c * a_inv * (be + b) / (1.0 - rho)
        + lam * a_inv * (t.e_qb - (b + be) * t.e_q)
        - 2.0 * lam * lam * c * a_inv * (be + b) * t.e_bhat / (1.0 - rho))
}

/// Simplified hybrid form at `b_bs = 0`, valid for atomless Ψ.
pub fn fwlan_hybrid_zero_bs_form(geo: &FwlanGeometry, quad: &Quadrature) -> Result<f64> {
    let t = fwlan_terms(geo, quad)?;
    let (lam, c, b) = (geo.lambda, t.circumference, t.bbar);
    let rho = 2.0 * lam * b;
    check_stable(rho)?;
    let a_inv = 1.0 / geo.alpha;
    Ok(rho * lam * (t.bbar2 + b * b) / (1.0 - rho)
        + c * a_inv * (2.0 * rho + lam * lam * b * b) / (2.0 * (1.0 - rho))
        + lam * a_inv * (t.e_qb - b * t.e_q - rho / (1.0 - rho) * c * t.e_bhat))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Workload,
    /// Mean transfer time `b̄`.
    FirstMoment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Autonomous,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FwlanOptimum {
    pub d_star: f64,
    pub value: f64,
    /// Grid points with their objective, `None` where unstable.
    pub curve: Vec<(f64, Option<f64>)>,
    /// Set when the objective varies by less than `1e-9` relative over the grid.
    pub flat: bool,
}

pub const FWLAN_GRID_POINTS: usize = 41;

pub fn fwlan_objective(geo: &FwlanGeometry, objective: Objective, arch: Architecture, quad: &Quadrature) -> Result<f64> {
    let t = fwlan_terms(geo, quad)?;
    match (objective, arch) {
        (Objective::FirstMoment, _) => Ok(t.bbar),
        (Objective::Workload, Architecture::Autonomous) => autonomous_from_terms(geo, &t),
        (Objective::Workload, Architecture::Hybrid) => hybrid_from_terms(geo, &t),
    }
}

/// Minimizes the objective over the path parameter `d ∈ (0, D1]`: a
/// 41-point grid, then golden-section search between the neighbours of
/// the best grid point.
pub fn fwlan_optimize(
    geo: &FwlanGeometry,
    objective: Objective,
    arch: Architecture,
    quad: &Quadrature,
) -> Result<FwlanOptimum> {
    geo.validate()?;
    let eval = |d: f64| -> Result<Option<f64>> {
        match fwlan_objective(&geo.with_d(d), objective, arch, quad) {
            Ok(v) => Ok(Some(v)),
            Err(Error::Instability { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let n = FWLAN_GRID_POINTS;
    let grid: Vec<f64> = (1..=n).map(|i| geo.d1 * i as f64 / n as f64).collect();
    let curve = grid.iter().map(|&d| Ok((d, eval(d)?))).collect::<Result<Vec<_>>>()?;
    let feasible: Vec<(usize, f64)> = curve.iter().enumerate().filter_map(|(i, (_, v))| v.map(|v| (i, v))).collect();
    let &(best, best_v) = feasible
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Infeasible("every path parameter gives an unstable system".into()))?;
    let max_v = feasible.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let flat = max_v - best_v <= 1e-9 * best_v.abs().max(f64::MIN_POSITIVE);
    if flat {
        return Ok(FwlanOptimum { d_star: grid[best], value: best_v, curve, flat });
    }
    let lo = if best == 0 { 0.0 } else { grid[best - 1] };
    let hi = grid[(best + 1).min(n - 1)];
    let (d, v) = golden_section(
        |d| if d > 0.0 { eval(d).ok().flatten().unwrap_or(f64::INFINITY) } else { f64::INFINITY },
        lo,
        hi,
        1e-7 * geo.d1,
    );
    let (d_star, value) = if v < best_v { (d, v) } else { (grid[best], best_v) };
    Ok(FwlanOptimum { d_star, value, curve, flat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::workload_rrt;

    fn geo(d: f64, beta: f64) -> FwlanGeometry {
        FwlanGeometry { d1: 10.0, d2: 20.0, d, eta: 1.0, beta, alpha: 1.0, lambda: 0.002, eta1: 0.0, d_bs: 0.0 }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn corners_and_measure_mass() {
        let g = geo(3.0, 2.0);
        assert_eq!(g.corners(), [0.0, 14.0, 48.0, 62.0, 96.0]);
        let m = fwlan_measure(&g).unwrap();
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
        let atoms: f64 = m.atoms().iter().map(|a| a.mass).sum();
        assert!((atoms - 9.0 / 200.0).abs() < 1e-15);
        assert!((4.0 * g.p0() - 9.0 / 200.0).abs() < 1e-15);
        assert_eq!(g.f_psi(31.0), 10.0);
        assert_eq!(g.f_psi(7.0), 10.0);
        assert_eq!(g.f_psi(2.0), 5.0);
        assert_eq!(g.f_psi(47.0), 4.0);
    }

    #[test]
    fn measure_at_full_depth_merges_corners() {
        let g = geo(10.0, 2.0);
        let m = fwlan_measure(&g).unwrap();
        assert_eq!(m.atoms().len(), 2);
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
        assert!(fwlan_spec(&g).is_ok());
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(fwlan_measure(&geo(0.0, 2.0)).is_err());
        assert!(fwlan_measure(&geo(11.0, 2.0)).is_err());
    }

    #[test]
    fn flat_rate_without_path_loss() {
        let g = geo(3.0, 0.0);
        let m = fwlan_moments(&g).unwrap();
        for q in [0.0, 1.0, 14.0, 30.0, 95.0] {
            assert!((m.first(q) - 1.0).abs() < 1e-13);
            assert!((m.second(q) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn power_integral_matches_polynomial() {
        let t = PowerIntegral::new(1.0, 12.0);
        for x in [0.0, 0.3, 2.5, 7.0, 12.0, -4.0] {
            assert!((t.eval(x) - (x + x * x * x / 3.0)).abs() < 1e-10 * (1.0 + x.abs().powi(3)));
        }
        let s = PowerIntegral::new(2.0, 5.0);
        let x: f64 = 4.2;
        assert!((s.eval(x) - (x + 2.0 * x.powi(3) / 3.0 + x.powi(5) / 5.0)).abs() < 1e-9);
    }

    #[test]
    fn corner_mean_by_hand_for_quadratic_loss() {
        // β = 2: ∬ (1 + x² + y²) over [0,d]² = d² + 2d⁴/3.
        let g = geo(3.0, 2.0);
        let m = fwlan_moments(&g).unwrap();
        assert!((m.first(0.0) - (1.0 + 2.0 * 9.0 / 3.0)).abs() < 1e-12);
        assert!((m.first(48.0) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn moments_are_valid() {
        let g = geo(3.0, 3.3);
        let m = fwlan_moments(&g).unwrap();
        for k in 0..100 {
            let q = 96.0 * k as f64 / 100.0;
            assert!(m.second(q) >= m.first(q).powi(2));
        }
    }

    #[test]
    fn mean_closed_form_matches_integral() {
        let q = Quadrature::default();
        for (d, beta) in [(3.0, 2.0), (3.0, 3.3), (1.0, 1.0), (7.5, 2.0)] {
            let g = geo(d, beta);
            let t = fwlan_terms(&g, &q).unwrap();
            let cf = fwlan_mean_closed_form(&g).unwrap();
            assert!(rel(t.bbar, cf) < 1e-10, "d={d} β={beta}: {} vs {cf}", t.bbar);
        }
    }

    #[test]
    fn workload_matches_general_formula() {
        let q = Quadrature::default();
        for (d, beta) in [(3.0, 2.0), (5.0, 3.3)] {
            let g = geo(d, beta);
            let want = workload_rrt(&fwlan_spec(&g).unwrap(), &q).unwrap().total;
            assert!(rel(fwlan_workload(&g, &q).unwrap(), want) < 1e-9);
        }
    }

    #[test]
    fn atomless_form_misses_only_the_atom_correction() {
        let q = Quadrature::default();
        let g = geo(3.0, 2.0);
        let t = fwlan_terms(&g, &q).unwrap();
        let exact = fwlan_workload(&g, &q).unwrap();
        let simple = fwlan_workload_atomless_form(&g, &q).unwrap();
        let rho = 2.0 * g.lambda * t.bbar;
        let correction = g.lambda.powi(2) * t.circumference / (g.alpha * (1.0 - rho)) * 4.0 * (t.p0 * t.corner_b).powi(2);
        assert!(rel(exact, simple + correction) < 1e-10);
        // E[b b̂] = (b̄² − Σ atom contributions²)/2.
        let atom_sq = 4.0 * (t.p0 * t.corner_b).powi(2);
        assert!((t.e_b_bhat - (t.bbar.powi(2) - atom_sq) / 2.0).abs() < 1e-10 * t.bbar.powi(2));
    }

    #[test]
    fn hybrid_matches_general_formula() {
        let q = Quadrature::default();
        for (eta1, d_bs) in [(0.0, 0.0), (1.0, 1.0)] {
            let mut g = geo(3.0, 2.0);
            g.eta1 = eta1;
            g.d_bs = d_bs;
            let want = workload_rrt(&fwlan_hybrid_spec(&g).unwrap(), &q).unwrap().total;
            assert!(rel(fwlan_hybrid_workload(&g, &q).unwrap(), want) < 1e-9);
        }
    }

    #[test]
    fn simplified_hybrid_forms_agree_at_zero_bs() {
        let q = Quadrature::default();
        let g = geo(3.0, 2.0);
        let a = fwlan_hybrid_atomless_form(&g, &q).unwrap();
        let b = fwlan_hybrid_zero_bs_form(&g, &q).unwrap();
        assert!(rel(a, b) < 1e-12);
    }

    #[test]
    fn far_base_station_is_unstable() {
        let mut g = geo(3.0, 2.0);
        g.eta1 = 1.0;
        g.d_bs = 1e4;
        assert!(matches!(fwlan_hybrid_workload(&g, &Quadrature::default()), Err(Error::Instability { .. })));
    }

    #[test]
    fn vanishing_load() {
        let q = Quadrature::default();
        let mut g = geo(3.0, 2.0);
        g.lambda = 0.0;
        assert_eq!(fwlan_workload(&g, &q).unwrap(), 0.0);
        g.lambda = 1e-9;
        assert!(fwlan_workload(&g, &q).unwrap() < 1e-5);
    }

    #[test]
    fn flat_first_moment_without_path_loss() {
        let q = Quadrature::new(16, 8);
        let opt = fwlan_optimize(&geo(3.0, 0.0), Objective::FirstMoment, Architecture::Autonomous, &q).unwrap();
        assert!(opt.flat);
        assert_eq!(opt.curve.len(), 41);
    }

    #[test]
    fn all_unstable_is_infeasible() {
        let mut g = geo(3.0, 2.0);
        g.lambda = 10.0;
        let r = fwlan_optimize(&g, Objective::Workload, Architecture::Autonomous, &Quadrature::new(16, 8));
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }
}
