//! Stationary expected virtual workload of the mixed polling system with
//! rerouting, by quadrature, and its closed-form special cases.
//!
//! Known simplifications, each checked against the general evaluator:
//! uniform positions with constant moments, a single stage (plain gated
//! service), and the globally gated system embedded as a two-stage model
//! whose first stage is a zero-length visit to point 0.
//!
//! The threshold on second moments under which the general formula is
//! proven is not computable from the model data; the evaluator only
//! requires `ρ < 1`.

use crate::error::{check_stable, Error, Result};
use crate::measure::{
    load_from_means, Cumulative, MixedMeasure, MomentFn, MomentProfile, PollingSpec, StageMeans, StageSpec,
};
use crate::quadrature::Quadrature;

/// Tolerance for recognising uniform densities and constant moments.
pub const SHAPE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadBreakdown {
    pub total: f64,
    pub rho: f64,
    /// `ρλ/(2(1−ρ)) Σ_k ε̂_k b̄2_k`
    pub term_service_second_moment: f64,
    /// `ρλ/(1−ρ) Σ_{l<k} ε̂_k b̄_k b̄_l`
    pub term_cross_service: f64,
    /// `ρ|C|/(2α)`
    pub term_half_cycle: f64,
    /// Double integral against external arrival positions.
    pub term_external_integral: f64,
    /// One double integral per transition `j → j+1`.
    pub term_rerouting_integrals: Vec<f64>,
}

impl WorkloadBreakdown {
    fn assemble(rho: f64, t1: f64, t2: f64, t3: f64, t4: f64, t5: Vec<f64>) -> Self {
        let total = t1 + t2 + t3 + t4 + t5.iter().sum::<f64>();
        Self {
            total,
            rho,
            term_service_second_moment: t1,
            term_cross_service: t2,
            term_half_cycle: t3,
            term_external_integral: t4,
            term_rerouting_integrals: t5,
        }
    }

    pub fn terms_sum(&self) -> f64 {
        self.term_service_second_moment
            + self.term_cross_service
            + self.term_half_cycle
            + self.term_external_integral
            + self.term_rerouting_integrals.iter().sum::<f64>()
    }
}

/// General workload formula, evaluated with `quad` and with twice as many
/// panels; fails with [`Error::Accuracy`] when the two differ by more than
/// `quad.tolerance` relative. Returns the finer evaluation.
pub fn workload_rrt(spec: &PollingSpec, quad: &Quadrature) -> Result<WorkloadBreakdown> {
    let coarse = rrt_terms(spec, quad)?;
    let fine = rrt_terms(spec, &quad.refined())?;
    let scale = fine.total.abs().max(f64::MIN_POSITIVE);
    let change = (fine.total - coarse.total).abs() / scale;
    if fine.total != 0.0 && change > quad.tolerance {
        return Err(Error::Accuracy { estimate: fine.total, change });
    }
    Ok(fine)
}

/// Single evaluation of the general formula, no refinement check.
pub fn rrt_terms(spec: &PollingSpec, quad: &Quadrature) -> Result<WorkloadBreakdown> {
    let n = spec.n_stages();
    let lam = spec.lambda();
    let c = spec.circumference();
    let a_inv = 1.0 / spec.alpha();
    let means = spec.stage_means(quad)?;
    let rho = load_from_means(spec, &means);
    check_stable(rho)?;
    let eh: Vec<f64> = (0..n).map(|j| spec.eps_hat(j)).collect();
    let denom = 1.0 - rho;

    let t1 = rho * lam / (2.0 * denom) * (0..n).map(|k| eh[k] * means[k].second).sum::<f64>();
    let mut cross = 0.0;
    for l in 0..n {
        for k in l + 1..n {
            cross += eh[k] * means[k].first * means[l].first;
        }
    }
    let t2 = rho * lam / denom * cross;
    let t3 = rho * c * a_inv / 2.0;

    let stages = spec.stages();
    let cums = stages
        .iter()
        .map(|s| Cumulative::new(&s.measure, |q| s.moments.first(q), quad))
        .collect::<Result<Vec<_>>>()?;
    // ρ̂ and the cumulative integrals jump at atoms and bend at density
    // breaks of every stage, so outer integrals are split there.
    let mut breaks: Vec<f64> = Vec::new();
    for s in stages {
        breaks.extend(s.measure.atoms().iter().map(|a| a.position));
        breaks.extend(s.measure.pieces().iter().flat_map(|p| [p.start, p.end]));
    }
    let rho_hat = |q: f64| -> f64 { (0..n).map(|j| eh[j] * lam * cums[j].below(q)).sum() };
    // ∫_0^C ρ̂(y) dy, by exchanging the order of integration.
    let mut int_rho_hat = 0.0;
    for (j, s) in stages.iter().enumerate() {
        let v = s.measure.integrate(|q| s.moments.first(q) * (c - q), quad)?;
        int_rho_hat += eh[j] * lam * v;
    }
    let s_rest: f64 = (1..n).map(|j| eh[j] * means[j].first).sum();
    let s0 = &stages[0];
    let inner0 = s0.measure.integrate_split(
        |q| (s0.moments.first(q) + s_rest) * (int_rho_hat - c * rho_hat(q) + rho * q),
        &breaks,
        quad,
    )?;
    let t4 = lam * a_inv / denom * inner0;

    let mut t5 = Vec::with_capacity(n.saturating_sub(1));
    for j in 0..n.saturating_sub(1) {
        let next = &stages[j + 1];
        let tail: f64 = (j + 2..n).map(|k| spec.eps_check(j + 2, k) * means[k].first).sum();
        let eg = means[j + 1].first + tail;
        let egq = next.measure.integrate(|q| (next.moments.first(q) + tail) * q, quad)?;
        // ∫_{[0,q)} g dP_{j+1} with g = b_{j+1} + tail.
        let mass_cum = Cumulative::new(&next.measure, |_| 1.0, quad)?;
        let g_below = |q: f64| cums[j + 1].below(q) + tail * mass_cum.below(q);
        let inner = stages[j].measure.integrate_split(|q| egq - q * eg + c * g_below(q), &breaks, quad)?;
        t5.push(eh[j + 1] * lam * a_inv / denom * inner);
    }
    Ok(WorkloadBreakdown::assemble(rho, t1, t2, t3, t4, t5))
}

/// Stage means when every stage is uniform with constant moments.
fn symmetric_means(spec: &PollingSpec) -> Result<Vec<StageMeans>> {
    spec.stages()
        .iter()
        .enumerate()
        .map(|(j, s)| {
            if !s.measure.is_uniform(SHAPE_TOLERANCE) {
                return Err(Error::Precondition(format!("stage {j} is not uniform")));
            }
            let (first, second) = s
                .moments
                .constant_values(SHAPE_TOLERANCE)
                .ok_or_else(|| Error::Precondition(format!("stage {j} has position-dependent moments")))?;
            Ok(StageMeans { first, second })
        })
        .collect()
}

/// Closed form for uniform positions and constant moments.
pub fn workload_symmetric(spec: &PollingSpec) -> Result<f64> {
    let means = symmetric_means(spec)?;
    let n = spec.n_stages();
    let lam = spec.lambda();
    let c = spec.circumference();
    let a_inv = 1.0 / spec.alpha();
    let rho = load_from_means(spec, &means);
    check_stable(rho)?;
    let denom = 1.0 - rho;
    let mut v = rho * lam / (2.0 * denom) * (0..n).map(|k| spec.eps_hat(k) * means[k].second).sum::<f64>();
    for l in 0..n {
        for k in l + 1..n {
            v += rho * lam / denom * spec.eps_hat(k) * means[k].first * means[l].first;
        }
    }
    v += rho * c * a_inv / (2.0 * denom);
    for j in 0..n.saturating_sub(1) {
        let tail: f64 = (j + 2..n).map(|k| spec.eps_check(j + 2, k) * means[k].first).sum();
        v += spec.eps_hat(j + 1) * lam * a_inv / denom * (means[j + 1].first + tail) * c / 2.0;
    }
    Ok(v)
}

/// Plain gated service (a single stage).
pub fn workload_gated(spec: &PollingSpec, quad: &Quadrature) -> Result<f64> {
    if spec.n_stages() != 1 {
        return Err(Error::Precondition(format!(
            "gated form needs exactly one stage, got {}",
            spec.n_stages()
        )));
    }
    let m = spec.stage_means(quad)?[0];
    let lam = spec.lambda();
    let rho = lam * m.first;
    check_stable(rho)?;
    let ca = spec.circumference() / spec.alpha();
    Ok(rho * lam * m.second / (2.0 * (1.0 - rho)) + rho * ca / 2.0 + ca * lam * lam * m.first * m.first / (2.0 * (1.0 - rho)))
}

/// Globally gated service: customers of `arrival` wait for the server to
/// pass point 0 before their position becomes eligible.
pub fn workload_globally_gated(arrival: &StageSpec, lambda: f64, alpha: f64, quad: &Quadrature) -> Result<f64> {
    let m = &arrival.measure;
    let b = |q: f64| arrival.moments.first(q);
    let bbar = m.integrate(b, quad)?;
    let bbar2 = m.integrate(|q| arrival.moments.second(q), quad)?;
    let e_qb = m.integrate(|q| q * b(q), quad)?;
    let rho = lambda * bbar;
    check_stable(rho)?;
    let ca = m.circumference() / alpha;
    Ok(rho * lambda * bbar2 / (2.0 * (1.0 - rho)) + rho * ca / 2.0 * (1.0 + rho) / (1.0 - rho) + lambda / alpha * e_qb)
}

/// Two-stage model equivalent to globally gated service: every customer
/// first receives a zero-length service at point 0 and is then moved to its
/// actual position.
pub fn globally_gated_embedding(arrival: &StageSpec, lambda: f64, alpha: f64) -> Result<PollingSpec> {
    let c = arrival.measure.circumference();
    let gate = StageSpec::new(
        1.0,
        MixedMeasure::point(c, 0.0)?,
        MomentProfile::new(MomentFn::Constant(0.0), MomentFn::Constant(0.0)),
    );
    let actual = StageSpec::new(1.0, arrival.measure.clone(), arrival.moments.clone());
    PollingSpec::new(lambda, alpha, vec![gate, actual])
}

/// `E[b(Q) b̂(Q)]` with `b̂(q) = ∫_{[0,q)} b dP`. Equals `b̄²/2` when `P`
/// has no atoms.
pub fn mean_cross_moment<B: Fn(f64) -> f64>(measure: &MixedMeasure, b: B, quad: &Quadrature) -> Result<f64> {
    let cum = Cumulative::new(measure, &b, quad)?;
    let atoms: Vec<f64> = measure.atoms().iter().map(|a| a.position).collect();
    measure.integrate_split(|q| b(q) * cum.below(q), &atoms, quad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{Atom, DensityForm};
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn uniform_stage(eps: f64, b: f64, b2: f64) -> StageSpec {
        StageSpec::new(eps, MixedMeasure::uniform(1.0).unwrap(), MomentProfile::constant(b, b2))
    }

    fn smooth_stage(eps: f64) -> StageSpec {
        let form = DensityForm::PiecewiseLinear { knots: vec![0.0, 0.3, 1.0], values: vec![0.5, 2.0, 0.8] };
        StageSpec::new(
            eps,
            MixedMeasure::from_form(1.0, Vec::new(), Some(&form)).unwrap(),
            MomentProfile::new(
                MomentFn::custom("1+q/2", |q| 1.0 + 0.5 * q),
                MomentFn::custom("1.5(1+q/2)^2", |q| 1.5 * (1.0 + 0.5 * q).powi(2)),
            ),
        )
    }

    #[test]
    fn idle_system_has_no_workload() {
        let spec = PollingSpec::new(0.0, 1.0, vec![smooth_stage(1.0), smooth_stage(0.4)]).unwrap();
        let w = workload_rrt(&spec, &Quadrature::default()).unwrap();
        assert_eq!(w.total, 0.0);
        assert_eq!(workload_symmetric(&PollingSpec::new(0.0, 1.0, vec![uniform_stage(1.0, 1.0, 1.5)]).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_matches_hand_evaluation() {
        // λ=0.3, ε1=0.5, b=1, b2=1.5: ρ = 0.3 + 0.15 = 0.45.
        let spec =
            PollingSpec::new(0.3, 1.0, vec![uniform_stage(1.0, 1.0, 1.5), uniform_stage(0.5, 1.0, 1.5)]).unwrap();
        let rho: f64 = 0.45;
        let d = 1.0 - rho;
        let second = rho * 0.3 / (2.0 * d) * (1.5 + 0.5 * 1.5);
        let cross = rho * 0.3 / d * (0.5 * 1.0 * 1.0);
        let travel = rho / (2.0 * d);
        let reroute = 0.5 * 0.3 / d * 1.0 * 0.5;
        let want = second + cross + travel + reroute;
        assert!(rel(workload_symmetric(&spec).unwrap(), want) < 1e-14);
    }

    #[test]
    fn symmetric_single_stage_reduces_to_classical_gated() {
        let (lam, b, b2) = (0.3, 1.2, 2.0);
        let spec = PollingSpec::new(lam, 1.0, vec![uniform_stage(1.0, b, b2)]).unwrap();
        let want = lam * b * (1.0 + lam * b2) / (2.0 * (1.0 - lam * b));
        assert!(rel(workload_symmetric(&spec).unwrap(), want) < 1e-14);
        assert!(rel(workload_gated(&spec, &Quadrature::default()).unwrap(), want) < 1e-14);
    }

    #[test]
    fn symmetric_rejects_non_uniform() {
        let spec = PollingSpec::new(0.3, 1.0, vec![smooth_stage(1.0)]).unwrap();
        assert!(matches!(workload_symmetric(&spec), Err(Error::Precondition(_))));
        let two = PollingSpec::new(0.1, 1.0, vec![smooth_stage(1.0), smooth_stage(1.0)]).unwrap();
        assert!(matches!(workload_gated(&two, &Quadrature::default()), Err(Error::Precondition(_))));
    }

    #[test]
    fn general_matches_symmetric_and_gated() {
        let q = Quadrature::default();
        let sym =
            PollingSpec::new(0.3, 1.0, vec![uniform_stage(1.0, 1.0, 1.5), uniform_stage(0.5, 1.0, 1.5)]).unwrap();
        assert!(rel(workload_rrt(&sym, &q).unwrap().total, workload_symmetric(&sym).unwrap()) < 1e-10);
        let gated = PollingSpec::new(0.4, 1.3, vec![smooth_stage(1.0)]).unwrap();
        assert!(rel(workload_rrt(&gated, &q).unwrap().total, workload_gated(&gated, &q).unwrap()) < 1e-10);
    }

    #[test]
    fn gated_form_misses_atoms_by_the_cross_moment_defect() {
        let q = Quadrature::default();
        let form = DensityForm::PiecewiseLinear { knots: vec![0.0, 3.0], values: vec![1.0, 0.2] };
        let m = MixedMeasure::from_form(
            3.0,
            vec![Atom { position: 0.0, mass: 0.2 }, Atom { position: 2.1, mass: 0.1 }],
            Some(&form),
        )
        .unwrap();
        let (lam, alpha, b) = (0.35, 0.5, 1.1);
        let spec = PollingSpec::new(lam, alpha, vec![StageSpec::new(1.0, m.clone(), MomentProfile::constant(b, 1.6))]).unwrap();
        let rho = lam * b;
        let defect = mean_cross_moment(&m, |_| b, &q).unwrap() - b * b / 2.0;
        let gap = workload_rrt(&spec, &q).unwrap().total - workload_gated(&spec, &q).unwrap();
        assert!(defect.abs() > 1e-3);
        // constant b: E[b b̂] = b²(1 − Σ m²)/2
        assert!((defect + b * b * (0.2f64.powi(2) + 0.1f64.powi(2)) / 2.0).abs() < 1e-12);
        assert!((gap + 3.0 / alpha * lam * lam / (1.0 - rho) * defect).abs() < 1e-10);
    }

    #[test]
    fn globally_gated_example() {
        let stage = uniform_stage(1.0, 1.0, 1.0);
        let q = Quadrature::default();
        let rho: f64 = 0.3;
        let want = rho * 0.3 * 1.0 / (2.0 * (1.0 - rho)) + rho / 2.0 * (1.0 + rho) / (1.0 - rho) + 0.3 * 0.5;
        let got = workload_globally_gated(&stage, 0.3, 1.0, &q).unwrap();
        assert!(rel(got, want) < 1e-14);
        let emb = globally_gated_embedding(&stage, 0.3, 1.0).unwrap();
        assert!(rel(workload_rrt(&emb, &q).unwrap().total, want) < 1e-10);
        assert_eq!(workload_globally_gated(&stage, 0.0, 1.0, &q).unwrap(), 0.0);
    }

    #[test]
    fn instability_is_reported() {
        let spec = PollingSpec::new(1.2, 1.0, vec![uniform_stage(1.0, 1.0, 1.0)]).unwrap();
        let q = Quadrature::default();
        assert!(matches!(workload_rrt(&spec, &q), Err(Error::Instability { .. })));
        assert!(matches!(workload_symmetric(&spec), Err(Error::Instability { .. })));
        assert!(matches!(workload_gated(&spec, &q), Err(Error::Instability { .. })));
    }

    #[test]
    fn cross_moment_examples() {
        let q = Quadrature::default();
        let u = MixedMeasure::uniform(1.0).unwrap();
        assert!((mean_cross_moment(&u, |_| 1.0, &q).unwrap() - 0.5).abs() < 1e-14);
        assert!((mean_cross_moment(&u, |x| x, &q).unwrap() - 0.125).abs() < 1e-14);
        let p = MixedMeasure::point(1.0, 0.5).unwrap();
        assert_eq!(mean_cross_moment(&p, |_| 1.0, &q).unwrap(), 0.0);
    }

    #[test]
    fn cross_moment_against_direct_double_integral() {
        // Direct tensor-product double integral over {y < q}, split at the
        // diagonal, as an independent check of the cumulative evaluation.
        let form = DensityForm::PiecewiseLinear { knots: vec![0.0, 0.5, 1.0], values: vec![1.0, 2.0, 0.2] };
        let m = MixedMeasure::from_form(1.0, Vec::new(), Some(&form)).unwrap();
        let b = |x: f64| (3.0 * x).sin() + 2.0;
        let q = Quadrature::default();
        let rule = crate::quadrature::GaussLegendre::new(20);
        let mut direct = 0.0;
        let outer = 200;
        for i in 0..outer {
            let lo = i as f64 / outer as f64;
            let hi = (i + 1) as f64 / outer as f64;
            rule.for_each(lo, hi, |x, w| {
                let g = |y: f64| b(y) * m.density(y);
                let inner = q.integrate(0.0, x.min(0.5), 64, g) + q.integrate(0.5, x.max(0.5), 64, g);
                direct += w * b(x) * m.density(x) * inner;
            });
        }
        let got = mean_cross_moment(&m, b, &q).unwrap();
        assert!((got - direct).abs() < 1e-11, "{got} vs {direct}");
    }

    #[test]
    fn breakdown_sums_to_total() {
        let atoms = vec![Atom { position: 0.2, mass: 0.3 }];
        let m = MixedMeasure::from_form(1.0, atoms, Some(&DensityForm::Uniform)).unwrap();
        let spec = PollingSpec::new(
            0.2,
            1.0,
            vec![
                StageSpec::new(1.0, m, MomentProfile::constant(1.0, 2.0)),
                smooth_stage(0.7),
                smooth_stage(0.5),
            ],
        )
        .unwrap();
        let w = workload_rrt(&spec, &Quadrature::default()).unwrap();
        assert_eq!(w.term_rerouting_integrals.len(), 2);
        assert!((w.total - w.terms_sum()).abs() <= 1e-12 * w.total);
        assert!(w.total > 0.0);
    }

    #[test]
    fn workload_grows_with_arrival_rate() {
        let base = PollingSpec::new(0.1, 1.0, vec![smooth_stage(1.0), smooth_stage(0.6)]).unwrap();
        let rho1 = crate::measure::total_load(&base, &Quadrature::default()).unwrap() / 0.1;
        let q = Quadrature::default();
        let mut last = 0.0;
        for i in 0..10 {
            let lam = (0.05 + 0.9 * i as f64 / 9.0) / rho1;
            let w = workload_rrt(&base.with_lambda(lam).unwrap(), &q).unwrap().total;
            assert!(w > last);
            last = w;
        }
        // The 1/(1−ρ) blow-up near saturation.
        let w50 = workload_rrt(&base.with_lambda(0.5 / rho1).unwrap(), &q).unwrap().total;
        let w95 = workload_rrt(&base.with_lambda(0.95 / rho1).unwrap(), &q).unwrap().total;
        assert!(w95 > w50 * (1.0 - 0.5) / (1.0 - 0.95));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn cross_moment_identity_without_atoms(
            vals in prop::collection::vec(0.05f64..3.0, 4),
            a in 0.1f64..2.0,
            k in 0.5f64..6.0,
        ) {
            let form = DensityForm::PiecewiseLinear { knots: vec![0.0, 0.2, 0.6, 1.0], values: vals };
            let m = MixedMeasure::from_form(1.0, Vec::new(), Some(&form)).unwrap();
            let b = move |x: f64| a + (k * x).cos().powi(2);
            let q = Quadrature::default();
            let bbar = m.integrate(b, &q).unwrap();
            prop_assert!((mean_cross_moment(&m, b, &q).unwrap() - bbar * bbar / 2.0).abs() < 1e-10);
        }

        #[test]
        fn doubling_panels_is_stable(lam in 0.01f64..0.35, eps in 0.0f64..1.0) {
            let spec = PollingSpec::new(lam, 1.0, vec![smooth_stage(1.0), smooth_stage(eps)]).unwrap();
            let q = Quadrature::default();
            let a = rrt_terms(&spec, &q).unwrap().total;
            let b = rrt_terms(&spec, &q.refined()).unwrap().total;
            prop_assert!((a - b).abs() <= 1e-6 * b);
        }
    }
}
