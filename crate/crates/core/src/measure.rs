//! Mixed atom-plus-density probability measures on the circle `[0, |C|)`,
//! position-dependent service moments, and the polling model built on them.
//!
//! All intervals are half-open `[a, c)`: an atom sitting exactly at `c` is
//! not part of `[a, c)`. In particular `hat_rho(spec, q)` never counts an
//! atom located at `q` itself.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::Quadrature;

/// Allowed deviation of the total mass from one.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub position: f64,
    pub mass: f64,
}

/// A linear density on `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityPiece {
    pub start: f64,
    pub end: f64,
    pub start_value: f64,
    pub end_value: f64,
}

impl DensityPiece {
    pub fn value(&self, q: f64) -> f64 {
        let w = (q - self.start) / (self.end - self.start);
        self.start_value + (self.end_value - self.start_value) * w
    }

    pub fn mass(&self) -> f64 {
        0.5 * (self.start_value + self.end_value) * (self.end - self.start)
    }

    fn mass_between(&self, a: f64, b: f64) -> f64 {
        let lo = a.max(self.start);
        let hi = b.min(self.end);
        if hi <= lo {
            return 0.0;
        }
        0.5 * (self.value(lo) + self.value(hi)) * (hi - lo)
    }

    /// Offset `t` such that the piece carries mass `r` on `[start, start + t]`.
    fn invert(&self, r: f64) -> f64 {
        let len = self.end - self.start;
        let f0 = self.start_value;
        let slope = (self.end_value - self.start_value) / len;
        let root = (f0 * f0 + 2.0 * slope * r).max(0.0).sqrt();
        let denom = f0 + root;
        let t = if denom > 0.0 { 2.0 * r / denom } else { 0.0 };
        t.clamp(0.0, len)
    }
}

/// Shape of the continuous part, before scaling to its mass.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityForm {
    /// Constant density over the whole circle.
    Uniform,
    /// `values[i]` on `[breaks[i], breaks[i + 1])`.
    PiecewiseConstant { breaks: Vec<f64>, values: Vec<f64> },
    /// Linear interpolation between `(knots[i], values[i])`; zero outside.
    PiecewiseLinear { knots: Vec<f64>, values: Vec<f64> },
}

fn check_increasing(xs: &[f64], what: &str, circumference: f64) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid(format!("{what} must be finite")));
    }
    if xs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid(format!("{what} must be strictly increasing")));
    }
    if xs.first().is_some_and(|&x| x < 0.0) || xs.last().is_some_and(|&x| x > circumference) {
        return Err(Error::Invalid(format!("{what} must lie in [0, {circumference}]")));
    }
    Ok(())
}

impl DensityForm {
    /// Pieces of this shape scaled to total mass `mass`.
    pub fn pieces(&self, circumference: f64, mass: f64) -> Result<Vec<DensityPiece>> {
        let raw: Vec<DensityPiece> = match self {
            DensityForm::Uniform => vec![DensityPiece {
                start: 0.0,
                end: circumference,
                start_value: 1.0,
                end_value: 1.0,
            }],
            DensityForm::PiecewiseConstant { breaks, values } => {
                if breaks.len() != values.len() + 1 || values.is_empty() {
                    return Err(Error::Invalid(
                        "piecewise-constant density needs one more break than values".into(),
                    ));
                }
                check_increasing(breaks, "density breaks", circumference)?;
                breaks
                    .windows(2)
                    .zip(values)
                    .map(|(w, &v)| DensityPiece { start: w[0], end: w[1], start_value: v, end_value: v })
                    .collect()
            }
            DensityForm::PiecewiseLinear { knots, values } => {
                if knots.len() != values.len() || knots.len() < 2 {
                    return Err(Error::Invalid(
                        "piecewise-linear density needs matching knots and values (at least two)".into(),
                    ));
                }
                check_increasing(knots, "density knots", circumference)?;
                knots
                    .windows(2)
                    .zip(values.windows(2))
                    .map(|(k, v)| DensityPiece { start: k[0], end: k[1], start_value: v[0], end_value: v[1] })
                    .collect()
            }
        };
        let values_ok = raw.iter().all(|p| {
            p.start_value.is_finite() && p.end_value.is_finite() && p.start_value >= 0.0 && p.end_value >= 0.0
        });
        if !values_ok {
            return Err(Error::Invalid("density must be finite and nonnegative at every knot".into()));
        }
        if mass <= 0.0 {
            return Ok(Vec::new());
        }
        let total: f64 = raw.iter().map(DensityPiece::mass).sum();
        if total <= 0.0 {
            return Err(Error::Invalid(format!("density shape has zero mass but must carry {mass}")));
        }
        let scale = mass / total;
        Ok(raw
            .into_iter()
            .map(|p| DensityPiece { start_value: p.start_value * scale, end_value: p.end_value * scale, ..p })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SampleItem {
    Atom(f64),
    Piece(usize),
}

/// A probability measure on the circle: finitely many atoms plus a
/// piecewise-linear density.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedMeasure {
    circumference: f64,
    atoms: Vec<Atom>,
    pieces: Vec<DensityPiece>,
    // Inverse-CDF table: pieces split at atom positions, in circle order.
    sample_items: Vec<(SampleItem, f64, f64)>,
    split_pieces: Vec<DensityPiece>,
}

impl MixedMeasure {
    pub fn new(circumference: f64, atoms: Vec<Atom>, pieces: Vec<DensityPiece>) -> Result<Self> {
        if !(circumference.is_finite() && circumference > 0.0) {
            return Err(Error::Invalid(format!("circumference must be positive, got {circumference}")));
        }
        for a in &atoms {
            if !(a.position >= 0.0 && a.position < circumference) {
                return Err(Error::Invalid(format!(
                    "atom position {} outside [0, {circumference})",
                    a.position
                )));
            }
            if !(a.mass > 0.0 && a.mass <= 1.0) {
                return Err(Error::Invalid(format!("atom mass {} outside (0, 1]", a.mass)));
            }
        }
        if atoms.windows(2).any(|w| w[0].position >= w[1].position) {
            return Err(Error::Invalid("atom positions must be strictly increasing".into()));
        }
        for p in &pieces {
            let ok = p.start.is_finite()
                && p.end.is_finite()
                && p.start >= 0.0
                && p.end <= circumference
                && p.start < p.end
                && p.start_value >= 0.0
                && p.end_value >= 0.0;
            if !ok {
                return Err(Error::Invalid(format!("bad density piece {p:?}")));
            }
        }
        if pieces.windows(2).any(|w| w[0].end > w[1].start) {
            return Err(Error::Invalid("density pieces must be sorted and non-overlapping".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.mass).sum::<f64>() + pieces.iter().map(DensityPiece::mass).sum::<f64>();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Invalid(format!("total mass {total} differs from 1")));
        }
        let mut m = Self { circumference, atoms, pieces, sample_items: Vec::new(), split_pieces: Vec::new() };
        m.build_sampler();
        Ok(m)
    }

    /// Atoms plus a density of the given shape carrying the remaining mass.
    pub fn from_form(circumference: f64, atoms: Vec<Atom>, density: Option<&DensityForm>) -> Result<Self> {
        let atom_mass: f64 = atoms.iter().map(|a| a.mass).sum();
        let rest = 1.0 - atom_mass;
        let pieces = match density {
            Some(form) if rest > MASS_TOLERANCE => form.pieces(circumference, rest)?,
            _ => Vec::new(),
        };
        Self::new(circumference, atoms, pieces)
    }

    pub fn uniform(circumference: f64) -> Result<Self> {
        Self::from_form(circumference, Vec::new(), Some(&DensityForm::Uniform))
    }

    pub fn point(circumference: f64, position: f64) -> Result<Self> {
        Self::new(circumference, vec![Atom { position, mass: 1.0 }], Vec::new())
    }

    pub fn circumference(&self) -> f64 {
        self.circumference
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn pieces(&self) -> &[DensityPiece] {
        &self.pieces
    }

    pub fn has_atoms(&self) -> bool {
        !self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum::<f64>() + self.pieces.iter().map(DensityPiece::mass).sum::<f64>()
    }

    /// Density value at `q` (zero outside the pieces; right-continuous at joins).
    pub fn density(&self, q: f64) -> f64 {
        let i = self.pieces.partition_point(|p| p.end <= q);
        match self.pieces.get(i) {
            Some(p) if p.start <= q => p.value(q),
            _ => 0.0,
        }
    }

    /// Uniform over the circle within `tol` (no atoms, constant density).
    pub fn is_uniform(&self, tol: f64) -> bool {
        if self.has_atoms() {
            return false;
        }
        let level = 1.0 / self.circumference;
        let covered: f64 = self.pieces.iter().map(|p| p.end - p.start).sum();
        (covered - self.circumference).abs() <= tol * self.circumference
            && self
                .pieces
                .iter()
                .all(|p| (p.start_value - level).abs() <= tol * level && (p.end_value - level).abs() <= tol * level)
    }

    fn build_sampler(&mut self) {
        let mut split = Vec::new();
        for p in &self.pieces {
            let mut start = p.start;
            for a in self.atoms.iter().filter(|a| a.position > p.start && a.position < p.end) {
                split.push(DensityPiece {
                    start,
                    end: a.position,
                    start_value: p.value(start),
                    end_value: p.value(a.position),
                });
                start = a.position;
            }
            split.push(DensityPiece { start, end: p.end, start_value: p.value(start), end_value: p.end_value });
        }
        // Atoms sort before pieces starting at the same point: F jumps at
        // the atom, then the density continues.
        let mut keyed: Vec<(f64, u8, SampleItem, f64)> = Vec::new();
        for a in &self.atoms {
            keyed.push((a.position, 0, SampleItem::Atom(a.position), a.mass));
        }
        for (i, p) in split.iter().enumerate() {
            keyed.push((p.start, 1, SampleItem::Piece(i), p.mass()));
        }
        keyed.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut cum = 0.0;
        self.sample_items = keyed
            .into_iter()
            .filter(|k| k.3 > 0.0)
            .map(|(_, _, item, mass)| {
                let before = cum;
                cum += mass;
                (item, before, mass)
            })
            .collect();
        self.split_pieces = split;
    }

    fn check_position(&self, q: f64) -> Result<()> {
        if q >= 0.0 && q <= self.circumference {
            Ok(())
        } else {
            Err(Error::Domain(format!("position {q} outside [0, {}]", self.circumference)))
        }
    }

    /// `P([0, q])`, right-continuous.
    pub fn cdf(&self, q: f64) -> Result<f64> {
        self.check_position(q)?;
        let atoms: f64 = self.atoms.iter().filter(|a| a.position <= q).map(|a| a.mass).sum();
        let dens: f64 = self.pieces.iter().map(|p| p.mass_between(0.0, q)).sum();
        Ok(atoms + dens)
    }

    /// `P([a, c))`.
    pub fn mass_in(&self, a: f64, c: f64) -> Result<f64> {
        self.check_position(a)?;
        self.check_position(c)?;
        if a > c {
            return Err(Error::Domain(format!("empty interval [{a}, {c})")));
        }
        let atoms: f64 = self.atoms.iter().filter(|x| x.position >= a && x.position < c).map(|x| x.mass).sum();
        let dens: f64 = self.pieces.iter().map(|p| p.mass_between(a, c)).sum();
        Ok(atoms + dens)
    }

    /// Mass of the atom located exactly at `q`, zero if there is none.
    pub fn atom_mass_at(&self, q: f64) -> f64 {
        self.atoms.iter().find(|a| a.position == q).map_or(0.0, |a| a.mass)
    }

    /// Mass of the density alone on `[a, c]`.
    pub fn density_mass_in(&self, a: f64, c: f64) -> f64 {
        self.pieces.iter().map(|p| p.mass_between(a, c)).sum()
    }

    /// Inverse-CDF sample for `u` in `[0, 1)`; always in `[0, |C|)`.
    pub fn sample(&self, u: f64) -> f64 {
        let items = &self.sample_items;
        let i = items.partition_point(|it| it.1 <= u).saturating_sub(1);
        let (item, before, mass) = items[i];
        let x = match item {
            SampleItem::Atom(x) => x,
            SampleItem::Piece(k) => {
                let p = &self.split_pieces[k];
                p.start + p.invert((u - before).clamp(0.0, mass))
            }
        };
        if x >= self.circumference {
            0.0
        } else {
            x
        }
    }

    /// `∫ g dP` over the whole circle.
    pub fn integrate<G: Fn(f64) -> f64>(&self, g: G, quad: &Quadrature) -> Result<f64> {
        self.integrate_split(g, &[], quad)
    }

    /// `∫_{[a, c)} g dP`.
    pub fn integrate_over<G: Fn(f64) -> f64>(&self, g: G, a: f64, c: f64, quad: &Quadrature) -> Result<f64> {
        self.check_position(a)?;
        self.check_position(c)?;
        if a > c {
            return Err(Error::Domain(format!("empty interval [{a}, {c})")));
        }
        let mut bad = None;
        let mut sum = 0.0;
        for at in self.atoms.iter().filter(|x| x.position >= a && x.position < c) {
            sum += at.mass * checked(&g, at.position, &mut bad);
        }
        sum += self.density_integral(&g, a, c, quad, &mut bad);
        finish(sum, bad)
    }

    /// `∫ g dP` with the density integral additionally split at `breaks`,
    /// for integrands with jumps inside density pieces.
    pub fn integrate_split<G: Fn(f64) -> f64>(&self, g: G, breaks: &[f64], quad: &Quadrature) -> Result<f64> {
        let mut bad = None;
        let mut sum = 0.0;
        for at in &self.atoms {
            sum += at.mass * checked(&g, at.position, &mut bad);
        }
        for p in &self.pieces {
            let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&b| b > p.start && b < p.end).collect();
            cuts.sort_by(f64::total_cmp);
            let mut lo = p.start;
            for hi in cuts.into_iter().chain(std::iter::once(p.end)) {
                sum += piece_integral(p, &g, lo, hi, quad, &mut bad);
                lo = hi;
            }
        }
        finish(sum, bad)
    }

    /// Density part of `∫_{[a, c]} g dP`.
    pub(crate) fn density_integral<G: Fn(f64) -> f64>(
        &self,
        g: &G,
        a: f64,
        c: f64,
        quad: &Quadrature,
        bad: &mut Option<(f64, f64)>,
    ) -> f64 {
        let mut sum = 0.0;
        for p in &self.pieces {
            let lo = a.max(p.start);
            let hi = c.min(p.end);
            if hi > lo {
                sum += piece_integral(p, g, lo, hi, quad, bad);
            }
        }
        sum
    }
}

fn checked<G: Fn(f64) -> f64>(g: &G, x: f64, bad: &mut Option<(f64, f64)>) -> f64 {
    let v = g(x);
    if !v.is_finite() && bad.is_none() {
        *bad = Some((x, v));
    }
    v
}

fn finish(sum: f64, bad: Option<(f64, f64)>) -> Result<f64> {
    match bad {
        Some((q, value)) => Err(Error::Evaluation { q, value }),
        None => Ok(sum),
    }
}

fn piece_integral<G: Fn(f64) -> f64>(
    p: &DensityPiece,
    g: &G,
    lo: f64,
    hi: f64,
    quad: &Quadrature,
    bad: &mut Option<(f64, f64)>,
) -> f64 {
    let panels = quad.panels_for(hi - lo, p.end - p.start);
    quad.integrate(lo, hi, panels, |x| checked(g, x, bad) * p.value(x))
}

/// `q ↦ ∫_{[0, q)} g dP` evaluated on the same panels as `integrate`, with
/// the panel containing `q` integrated exactly up to `q`.
pub(crate) struct Cumulative<'a, G> {
    measure: &'a MixedMeasure,
    g: G,
    quad: &'a Quadrature,
    // (start, end, piece index) per panel, in circle order.
    panels: Vec<(f64, f64, usize)>,
    prefix: Vec<f64>,
    atom_prefix: Vec<f64>,
}

impl<'a, G: Fn(f64) -> f64> Cumulative<'a, G> {
    pub(crate) fn new(measure: &'a MixedMeasure, g: G, quad: &'a Quadrature) -> Result<Self> {
        let mut bad = None;
        let mut panels = Vec::new();
        let mut prefix = vec![0.0];
        for (k, p) in measure.pieces.iter().enumerate() {
            let h = (p.end - p.start) / quad.panels as f64;
            for i in 0..quad.panels {
                let lo = p.start + h * i as f64;
                let hi = if i + 1 == quad.panels { p.end } else { p.start + h * (i + 1) as f64 };
                let v = quad.rule().integrate(lo, hi, |x| checked(&g, x, &mut bad) * p.value(x));
                prefix.push(prefix.last().unwrap() + v);
                panels.push((lo, hi, k));
            }
        }
        let mut atom_prefix = vec![0.0];
        for a in &measure.atoms {
            let v = a.mass * checked(&g, a.position, &mut bad);
            atom_prefix.push(atom_prefix.last().unwrap() + v);
        }
        finish(0.0, bad)?;
        Ok(Self { measure, g, quad, panels, prefix, atom_prefix })
    }

    /// `∫_{[0, q)} g dP`.
    pub(crate) fn below(&self, q: f64) -> f64 {
        let na = self.measure.atoms.partition_point(|a| a.position < q);
        let k = self.panels.partition_point(|p| p.1 <= q);
        let mut sum = self.atom_prefix[na] + self.prefix[k];
        if let Some(&(lo, _, piece)) = self.panels.get(k) {
            if lo < q {
                let p = &self.measure.pieces[piece];
                sum += self.quad.rule().integrate(lo, q, |x| (self.g)(x) * p.value(x));
            }
        }
        sum
    }

    /// `∫ g dP` over the whole circle.
    #[cfg(test)]
    pub(crate) fn total(&self) -> f64 {
        self.atom_prefix.last().unwrap() + self.prefix.last().unwrap()
    }
}

/// A real function of position given in one of the supported forms.
#[derive(Clone)]
pub enum MomentFn {
    Constant(f64),
    /// Linear interpolation between knots, constant beyond the end knots.
    Table { knots: Vec<f64>, values: Vec<f64> },
    /// Closed-form or numerically defined profile.
    Custom { label: String, f: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
}

impl fmt::Debug for MomentFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MomentFn::Constant(c) => write!(f, "Constant({c})"),
            MomentFn::Table { knots, values } => write!(f, "Table {{ knots: {knots:?}, values: {values:?} }}"),
            MomentFn::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

impl MomentFn {
    pub fn table(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::Invalid("moment table needs matching, nonempty knots and values".into()));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) || knots.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(Error::Invalid("moment table knots must be finite and strictly increasing".into()));
        }
        Ok(MomentFn::Table { knots, values })
    }

    pub fn custom<F: Fn(f64) -> f64 + Send + Sync + 'static>(label: &str, f: F) -> Self {
        MomentFn::Custom { label: label.to_string(), f: Arc::new(f) }
    }

    pub fn eval(&self, q: f64) -> f64 {
        match self {
            MomentFn::Constant(c) => *c,
            MomentFn::Table { knots, values } => {
                let i = knots.partition_point(|&k| k <= q);
                if i == 0 {
                    values[0]
                } else if i == knots.len() {
                    values[i - 1]
                } else {
                    let w = (q - knots[i - 1]) / (knots[i] - knots[i - 1]);
                    values[i - 1] + (values[i] - values[i - 1]) * w
                }
            }
            MomentFn::Custom { f, .. } => f(q),
        }
    }

    /// The constant value if the function does not depend on position
    /// (within `tol` relative for tables).
    pub fn constant_value(&self, tol: f64) -> Option<f64> {
        match self {
            MomentFn::Constant(c) => Some(*c),
            MomentFn::Table { values, .. } => {
                let v0 = values[0];
                values.iter().all(|v| (v - v0).abs() <= tol * v0.abs().max(1.0)).then_some(v0)
            }
            MomentFn::Custom { .. } => None,
        }
    }
}

/// Moments `(b, b2)` fixed at one exact position, overriding the profile
/// there (used for atoms whose service differs from the nearby continuum).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMoments {
    pub position: f64,
    pub first: f64,
    pub second: f64,
}

/// Conditional first and second service moments `b(q)`, `b2(q)`.
#[derive(Debug, Clone)]
pub struct MomentProfile {
    first: MomentFn,
    second: MomentFn,
    points: Vec<PointMoments>,
}

impl MomentProfile {
    pub fn new(first: MomentFn, second: MomentFn) -> Self {
        Self { first, second, points: Vec::new() }
    }

    pub fn constant(first: f64, second: f64) -> Self {
        Self::new(MomentFn::Constant(first), MomentFn::Constant(second))
    }

    pub fn with_points(mut self, points: Vec<PointMoments>) -> Self {
        self.points = points;
        self
    }

    pub fn first(&self, q: f64) -> f64 {
        match self.points.iter().find(|p| p.position == q) {
            Some(p) => p.first,
            None => self.first.eval(q),
        }
    }

    pub fn second(&self, q: f64) -> f64 {
        match self.points.iter().find(|p| p.position == q) {
            Some(p) => p.second,
            None => self.second.eval(q),
        }
    }

    pub fn first_fn(&self) -> &MomentFn {
        &self.first
    }

    pub fn second_fn(&self) -> &MomentFn {
        &self.second
    }

    pub fn points(&self) -> &[PointMoments] {
        &self.points
    }

    /// `(b, b2)` when both are position independent.
    pub fn constant_values(&self, tol: f64) -> Option<(f64, f64)> {
        if !self.points.is_empty() {
            return None;
        }
        Some((self.first.constant_value(tol)?, self.second.constant_value(tol)?))
    }

    fn check_at(&self, q: f64) -> Result<()> {
        let b = self.first(q);
        let b2 = self.second(q);
        if !(b.is_finite() && b2.is_finite() && b >= 0.0) {
            return Err(Error::Invalid(format!("service moments ({b}, {b2}) invalid at q = {q}")));
        }
        if b2 < b * b * (1.0 - 1e-12) {
            return Err(Error::Invalid(format!("second moment {b2} below squared mean {} at q = {q}", b * b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StageSpec {
    /// Probability of entering this stage after the previous service.
    pub epsilon: f64,
    pub measure: MixedMeasure,
    pub moments: MomentProfile,
}

impl StageSpec {
    pub fn new(epsilon: f64, measure: MixedMeasure, moments: MomentProfile) -> Self {
        Self { epsilon, measure, moments }
    }
}

/// Stage-wise means `b̄_j` and `b̄2_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageMeans {
    pub first: f64,
    pub second: f64,
}

/// External Poisson rate `lambda`, server speed `alpha` and the ordered
/// service stages.
#[derive(Debug, Clone)]
pub struct PollingSpec {
    lambda: f64,
    alpha: f64,
    stages: Vec<StageSpec>,
}

impl PollingSpec {
    pub fn new(lambda: f64, alpha: f64, stages: Vec<StageSpec>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Invalid("at least one stage is required".into()));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Invalid(format!("arrival rate must be nonnegative, got {lambda}")));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Invalid(format!("server speed must be positive, got {alpha}")));
        }
        if stages[0].epsilon != 1.0 {
            return Err(Error::Invalid("the first stage must have epsilon = 1".into()));
        }
        let c = stages[0].measure.circumference();
        for (j, s) in stages.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.epsilon) {
                return Err(Error::Invalid(format!("stage {j}: epsilon {} outside [0, 1]", s.epsilon)));
            }
            if (s.measure.circumference() - c).abs() > 1e-12 * c {
                return Err(Error::Invalid(format!("stage {j}: circumference differs from stage 0")));
            }
        }
        let spec = Self { lambda, alpha, stages };
        spec.check_moments(&Quadrature::default())?;
        Ok(spec)
    }

    fn check_moments(&self, quad: &Quadrature) -> Result<()> {
        for (j, s) in self.stages.iter().enumerate() {
            let tag = |e: Error| match e {
                Error::Invalid(m) => Error::Invalid(format!("stage {j}: {m}")),
                other => other,
            };
            for a in s.measure.atoms() {
                s.moments.check_at(a.position).map_err(tag)?;
            }
            let mut res = Ok(());
            for p in s.measure.pieces() {
                quad.for_each_node(p.start, p.end, quad.panels, |x, _| {
                    if res.is_ok() {
                        res = s.moments.check_at(x);
                    }
                });
            }
            res.map_err(tag)?;
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn circumference(&self) -> f64 {
        self.stages[0].measure.circumference()
    }

    /// `ε̂_j = ε_0 ⋯ ε_j`: probability that a customer receives service `j`.
    pub fn eps_hat(&self, j: usize) -> f64 {
        self.stages[..=j].iter().map(|s| s.epsilon).product()
    }

    /// `ε̌_j^k = ε_j ⋯ ε_k`, one when `k < j`.
    pub fn eps_check(&self, j: usize, k: usize) -> f64 {
        if k < j {
            return 1.0;
        }
        self.stages[j..=k].iter().map(|s| s.epsilon).product()
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(lambda, self.alpha, self.stages.clone())
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.lambda, alpha, self.stages.clone())
    }

    pub fn stage_means(&self, quad: &Quadrature) -> Result<Vec<StageMeans>> {
        self.stages
            .iter()
            .map(|s| {
                Ok(StageMeans {
                    first: s.measure.integrate(|q| s.moments.first(q), quad)?,
                    second: s.measure.integrate(|q| s.moments.second(q), quad)?,
                })
            })
            .collect()
    }

    /// Expected work a customer still brings after finishing service `j`:
    /// `Σ_{k>j} ε̌_{j+1}^k b̄_k`.
    pub fn future_work(&self, means: &[StageMeans], j: usize) -> f64 {
        (j + 1..self.n_stages()).map(|k| self.eps_check(j + 1, k) * means[k].first).sum()
    }
}

pub fn measure_cdf(m: &MixedMeasure, q: f64) -> Result<f64> {
    m.cdf(q)
}

pub fn measure_integrate<G: Fn(f64) -> f64>(m: &MixedMeasure, g: G, quad: &Quadrature) -> Result<f64> {
    m.integrate(g, quad)
}

pub fn measure_sample(m: &MixedMeasure, u: f64) -> f64 {
    m.sample(u)
}

/// `ρ_j([a, c)) = λ ∫_{[a, c)} b_j dP_j`.
pub fn rho_interval(spec: &PollingSpec, j: usize, a: f64, c: f64, quad: &Quadrature) -> Result<f64> {
    let stage = spec
        .stages
        .get(j)
        .ok_or_else(|| Error::Domain(format!("stage {j} does not exist")))?;
    let v = stage.measure.integrate_over(|q| stage.moments.first(q), a, c, quad)?;
    Ok(spec.lambda * v)
}

/// `ρ = Σ_j ε̂_j λ b̄_j`.
pub fn total_load(spec: &PollingSpec, quad: &Quadrature) -> Result<f64> {
    let means = spec.stage_means(quad)?;
    Ok(load_from_means(spec, &means))
}

pub(crate) fn load_from_means(spec: &PollingSpec, means: &[StageMeans]) -> f64 {
    means.iter().enumerate().map(|(j, m)| spec.eps_hat(j) * spec.lambda * m.first).sum()
}

/// `ρ̂(q) = Σ_j ε̂_j ρ_j([0, q))`.
pub fn hat_rho(spec: &PollingSpec, q: f64, quad: &Quadrature) -> Result<f64> {
    let mut sum = 0.0;
    for j in 0..spec.n_stages() {
        sum += spec.eps_hat(j) * rho_interval(spec, j, 0.0, q, quad)?;
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mixed() -> MixedMeasure {
        MixedMeasure::from_form(
            1.0,
            vec![Atom { position: 0.25, mass: 0.2 }, Atom { position: 0.7, mass: 0.1 }],
            Some(&DensityForm::PiecewiseLinear { knots: vec![0.0, 0.4, 1.0], values: vec![1.0, 3.0, 0.5] }),
        )
        .unwrap()
    }

    #[test]
    fn cdf_examples() {
        let u = MixedMeasure::uniform(1.0).unwrap();
        assert!((u.cdf(1.0).unwrap() - 1.0).abs() < 1e-15);
        let p = MixedMeasure::point(1.0, 0.5).unwrap();
        assert_eq!(p.cdf(0.4).unwrap(), 0.0);
        assert_eq!(p.cdf(0.5).unwrap(), 1.0);
        let m = MixedMeasure::from_form(1.0, vec![Atom { position: 0.25, mass: 0.5 }], Some(&DensityForm::Uniform))
            .unwrap();
        assert!((m.cdf(0.25).unwrap() - 0.625).abs() < 1e-15);
        assert!(m.cdf(1.5).is_err());
        assert!(m.cdf(-0.1).is_err());
    }

    #[test]
    fn integrate_examples() {
        let q = Quadrature::default();
        let u = MixedMeasure::uniform(1.0).unwrap();
        assert!((u.integrate(|_| 1.0, &q).unwrap() - 1.0).abs() < 1e-14);
        assert!((u.integrate(|x| x, &q).unwrap() - 0.5).abs() < 1e-14);
        let a = MixedMeasure::new(
            1.0,
            vec![Atom { position: 0.2, mass: 0.3 }, Atom { position: 0.8, mass: 0.7 }],
            Vec::new(),
        )
        .unwrap();
        assert!((a.integrate(|x| x, &q).unwrap() - 0.62).abs() < 1e-15);
        let err = u.integrate(|x| if x > 0.5 { f64::NAN } else { 1.0 }, &q).unwrap_err();
        assert!(matches!(err, Error::Evaluation { q, .. } if q > 0.5));
    }

    #[test]
    fn sample_examples() {
        let p = MixedMeasure::point(1.0, 0.5).unwrap();
        for u in [0.0, 0.3, 0.999] {
            assert_eq!(p.sample(u), 0.5);
        }
        let u = MixedMeasure::uniform(1.0).unwrap();
        assert!((u.sample(0.25) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sample_lands_on_atoms() {
        let m = mixed();
        let f_before = m.cdf(0.25).unwrap() - 0.2;
        assert_eq!(m.sample(f_before + 0.1), 0.25);
        assert!(m.sample(f_before - 1e-9) < 0.25);
        assert!(m.sample(f_before + 0.2 + 1e-9) > 0.25);
    }

    #[test]
    fn rejects_bad_measures() {
        assert!(MixedMeasure::new(1.0, vec![Atom { position: 0.5, mass: 0.5 }], Vec::new()).is_err());
        assert!(MixedMeasure::new(
            1.0,
            vec![Atom { position: 0.5, mass: 0.5 }, Atom { position: 0.5, mass: 0.5 }],
            Vec::new()
        )
        .is_err());
        assert!(MixedMeasure::new(1.0, vec![Atom { position: 1.0, mass: 1.0 }], Vec::new()).is_err());
        let neg = DensityForm::PiecewiseLinear { knots: vec![0.0, 1.0], values: vec![-1.0, 2.0] };
        assert!(MixedMeasure::from_form(1.0, Vec::new(), Some(&neg)).is_err());
    }

    #[test]
    fn rho_interval_example() {
        let spec = PollingSpec::new(
            0.1,
            1.0,
            vec![StageSpec::new(1.0, MixedMeasure::uniform(1.0).unwrap(), MomentProfile::constant(2.0, 4.0))],
        )
        .unwrap();
        let q = Quadrature::default();
        assert!((rho_interval(&spec, 0, 0.0, 0.5, &q).unwrap() - 0.1).abs() < 1e-15);
        assert!((rho_interval(&spec, 0, 0.0, 1.0, &q).unwrap() - 0.2).abs() < 1e-15);
        assert!(rho_interval(&spec, 0, 0.6, 0.5, &q).is_err());
        assert!(rho_interval(&spec, 1, 0.0, 0.5, &q).is_err());
    }

    #[test]
    fn total_load_example() {
        let u = MixedMeasure::uniform(1.0).unwrap();
        let spec = PollingSpec::new(
            0.1,
            1.0,
            vec![
                StageSpec::new(1.0, u.clone(), MomentProfile::constant(1.0, 1.0)),
                StageSpec::new(0.5, u, MomentProfile::constant(2.0, 4.0)),
            ],
        )
        .unwrap();
        assert!((total_load(&spec, &Quadrature::default()).unwrap() - 0.2).abs() < 1e-15);
        let idle = spec.with_lambda(0.0).unwrap();
        assert_eq!(total_load(&idle, &Quadrature::default()).unwrap(), 0.0);
    }

    #[test]
    fn hat_rho_examples() {
        let q = Quadrature::default();
        let u = MixedMeasure::uniform(1.0).unwrap();
        let sym = PollingSpec::new(
            0.3,
            1.0,
            vec![
                StageSpec::new(1.0, u.clone(), MomentProfile::constant(1.0, 1.5)),
                StageSpec::new(0.5, u, MomentProfile::constant(1.0, 1.5)),
            ],
        )
        .unwrap();
        let rho = total_load(&sym, &q).unwrap();
        assert_eq!(hat_rho(&sym, 0.0, &q).unwrap(), 0.0);
        for x in [0.1, 0.5, 0.9] {
            assert!((hat_rho(&sym, x, &q).unwrap() - rho * x).abs() < 1e-14);
        }
        // All stage-0 mass at 0.5: the atom counts only strictly beyond 0.5.
        let atom = PollingSpec::new(
            0.2,
            1.0,
            vec![
                StageSpec::new(
                    1.0,
                    MixedMeasure::point(1.0, 0.5).unwrap(),
                    MomentProfile::new(MomentFn::custom("1+q", |x| 1.0 + x), MomentFn::Constant(4.0)),
                ),
                StageSpec::new(0.5, MixedMeasure::uniform(1.0).unwrap(), MomentProfile::constant(2.0, 4.0)),
            ],
        )
        .unwrap();
        let want = 0.2 * 1.5 + 0.5 * 0.2 * 2.0 * 0.6;
        assert!((hat_rho(&atom, 0.6, &q).unwrap() - want).abs() < 1e-14);
        let at = 0.5 * 0.2 * 2.0 * 0.5;
        assert!((hat_rho(&atom, 0.5, &q).unwrap() - at).abs() < 1e-14);
    }

    #[test]
    fn moment_validity_is_enforced() {
        let bad = StageSpec::new(1.0, MixedMeasure::uniform(1.0).unwrap(), MomentProfile::constant(2.0, 3.0));
        assert!(PollingSpec::new(0.1, 1.0, vec![bad]).is_err());
        let t = MomentFn::table(vec![0.0, 1.0], vec![1.0, 3.0]).unwrap();
        assert!((t.eval(0.5) - 2.0).abs() < 1e-15);
        assert_eq!(t.eval(-1.0), 1.0);
        assert_eq!(t.eval(2.0), 3.0);
    }

    #[test]
    fn point_moments_override_profile() {
        let p = MomentProfile::constant(1.0, 1.0)
            .with_points(vec![PointMoments { position: 0.5, first: 3.0, second: 10.0 }]);
        assert_eq!(p.first(0.5), 3.0);
        assert_eq!(p.first(0.5000001), 1.0);
        assert_eq!(p.second(0.5), 10.0);
    }

    #[test]
    fn cumulative_matches_interval_integrals() {
        let m = mixed();
        let q = Quadrature::default();
        let g = |x: f64| 1.0 + x * x;
        let c = Cumulative::new(&m, g, &q).unwrap();
        for x in [0.0, 0.1, 0.25, 0.3, 0.4, 0.7, 0.71, 1.0] {
            let want = m.integrate_over(g, 0.0, x, &q).unwrap();
            assert!((c.below(x) - want).abs() < 1e-13, "x={x}");
        }
        assert!((c.total() - m.integrate(g, &q).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn empirical_cdf_matches() {
        use rand::{Rng, SeedableRng};
        let m = mixed();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n).map(|_| m.sample(rng.random::<f64>())).collect();
        xs.sort_by(f64::total_cmp);
        let mut worst: f64 = 0.0;
        for i in 1..=20 {
            let q = i as f64 / 20.0 - 1e-3;
            let emp = xs.partition_point(|&x| x <= q) as f64 / n as f64;
            worst = worst.max((emp - m.cdf(q).unwrap()).abs());
        }
        assert!(worst < 0.01, "max deviation {worst}");
    }

    fn arb_measure() -> impl Strategy<Value = MixedMeasure> {
        (
            prop::collection::vec((0.0f64..1.0, 0.01f64..1.0), 0..4),
            prop::collection::vec(0.0f64..5.0, 3..6),
            0.0f64..0.9,
        )
            .prop_map(|(mut raw_atoms, vals, atom_mass)| {
                raw_atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
                raw_atoms.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-6);
                let w: f64 = raw_atoms.iter().map(|a| a.1).sum();
                let atoms: Vec<Atom> = raw_atoms
                    .iter()
                    .map(|a| Atom { position: a.0, mass: atom_mass * a.1 / w })
                    .collect();
                let n = vals.len();
                let knots: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
                let mut values = vals;
                values[0] += 0.1;
                let form = DensityForm::PiecewiseLinear { knots, values };
                MixedMeasure::from_form(1.0, atoms, Some(&form)).unwrap()
            })
    }

    proptest! {
        #[test]
        fn normalization(m in arb_measure()) {
            prop_assert!((m.total_mass() - 1.0).abs() < MASS_TOLERANCE);
            prop_assert!((m.cdf(1.0).unwrap() - 1.0).abs() < MASS_TOLERANCE);
        }

        #[test]
        fn cdf_agrees_with_integrated_indicator(m in arb_measure(), q in 0.0f64..1.0) {
            let quad = Quadrature::default();
            let ind = m.integrate_split(|x| if x <= q { 1.0 } else { 0.0 }, &[q], &quad).unwrap();
            prop_assert!((ind - m.cdf(q).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn cdf_is_monotone(m in arb_measure(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(m.cdf(lo).unwrap() <= m.cdf(hi).unwrap() + 1e-15);
        }

        #[test]
        fn sample_inverts_cdf(m in arb_measure(), u in 0.0f64..0.999) {
            let x = m.sample(u);
            prop_assert!((0.0..1.0).contains(&x));
            // F(x-) <= u <= F(x) up to rounding.
            let left = m.cdf(x).unwrap() - m.atom_mass_at(x);
            prop_assert!(left <= u + 1e-9);
            prop_assert!(m.cdf(x).unwrap() >= u - 1e-9);
        }

        #[test]
        fn load_is_additive(m in arb_measure(), a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            let mut v = [a, b, c];
            v.sort_by(f64::total_cmp);
            let spec = PollingSpec::new(0.3, 1.0, vec![StageSpec::new(
                1.0,
                m,
                MomentProfile::new(MomentFn::custom("1+q^2", |x| 1.0 + x * x), MomentFn::custom("3(1+q^2)^2", |x| 3.0 * (1.0 + x * x).powi(2))),
            )]).unwrap();
            let quad = Quadrature::default();
            let ab = rho_interval(&spec, 0, v[0], v[1], &quad).unwrap();
            let bc = rho_interval(&spec, 0, v[1], v[2], &quad).unwrap();
            let ac = rho_interval(&spec, 0, v[0], v[2], &quad).unwrap();
            prop_assert!((ab + bc - ac).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
        }
    }
}
