//! The σ-level discrete polling system approximating the mixed model, its
//! exact workload from the discrete pseudo-conservation law, and the
//! stationary mean server-progress times τ*.
//!
//! The circle is cut into σ equal segments `I_i = [(i−1)|C|/σ, i|C|/σ)`.
//! Every customer positioned in `I_i` is served at the segment's left end,
//! and each stop holds one queue per stage. Queue `(i)(j)` gets the 1-based
//! index `N(i−1) + N − j`, so within a stop the most advanced stage comes
//! first. Walking time is `|C|/(ασ)` into each stop and zero between
//! queues of the same stop.

use crate::error::{check_stable, Error, Result};
use crate::measure::{total_load, PollingSpec, StageMeans};
use crate::quadrature::Quadrature;

/// Discretization level; `Infinite` denotes the continuous system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sigma {
    Finite(usize),
    Infinite,
}

/// Left end of the segment containing `q`; `q` itself when `σ = ∞`.
pub fn delta_sigma(sigma: Sigma, q: f64, circumference: f64) -> Result<f64> {
    if !(q >= 0.0 && q <= circumference) {
        return Err(Error::Domain(format!("position {q} outside [0, {circumference}]")));
    }
    match sigma {
        Sigma::Infinite => Ok(q),
        Sigma::Finite(0) => Err(Error::Domain("sigma must be at least 1".into())),
        Sigma::Finite(s) => {
            let h = circumference / s as f64;
            Ok((q * s as f64 / circumference).floor() * h)
        }
    }
}

/// Segment (0-based) that holds an atom at `q < |C|`.
fn segment_of(q: f64, sigma: usize, circumference: f64) -> usize {
    ((q * sigma as f64 / circumference).floor() as usize).min(sigma - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QueueRecord {
    /// External arrival rate.
    pub lambda: f64,
    /// External plus rerouted arrival rate.
    pub gamma: f64,
    pub b: f64,
    pub b2: f64,
    /// Moments of all remaining work of a customer joining this queue.
    pub btilde: f64,
    pub btilde2: f64,
    /// Walking time into this queue.
    pub r: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSystem {
    pub sigma: usize,
    pub n_stages: usize,
    pub circumference: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub epsilon: Vec<f64>,
    /// Queue `k` (1-based) is stored at `queues[k − 1]`.
    pub queues: Vec<QueueRecord>,
    /// `segment_prob[j][i]`: mass of stage `j` positions in segment `i` (0-based).
    pub segment_prob: Vec<Vec<f64>>,
    /// Stage means of the discretized moments.
    pub stage_means: Vec<StageMeans>,
    pub rho: f64,
}

impl DiscreteSystem {
    /// 1-based queue number of stage `j` at segment `i` (1-based).
    pub fn queue_number(&self, i: usize, j: usize) -> usize {
        self.n_stages * (i - 1) + self.n_stages - j
    }

    pub fn queue(&self, i: usize, j: usize) -> &QueueRecord {
        &self.queues[self.queue_number(i, j) - 1]
    }

    pub fn sum_rho(&self) -> f64 {
        self.queues.iter().map(|q| q.rho).sum()
    }

    pub fn sum_r(&self) -> f64 {
        self.queues.iter().map(|q| q.r).sum()
    }

    fn eps_check(&self, j: usize, k: usize) -> f64 {
        if k < j {
            1.0
        } else {
            self.epsilon[j..=k].iter().product()
        }
    }
}

pub fn build_discrete(spec: &PollingSpec, sigma: usize, quad: &Quadrature) -> Result<DiscreteSystem> {
    if sigma == 0 {
        return Err(Error::Domain("sigma must be at least 1".into()));
    }
    let n = spec.n_stages();
    let c = spec.circumference();
    let lam = spec.lambda();
    let h = c / sigma as f64;
    let mut seg_p = vec![vec![0.0; sigma]; n];
    let mut seg_b = vec![vec![0.0; sigma]; n];
    let mut seg_b2 = vec![vec![0.0; sigma]; n];
    for (j, stage) in spec.stages().iter().enumerate() {
        let m = &stage.measure;
        let mut bad = None;
        for i in 0..sigma {
            let a = h * i as f64;
            let e = if i + 1 == sigma { c } else { h * (i + 1) as f64 };
            seg_p[j][i] = m.density_mass_in(a, e);
            seg_b[j][i] = m.density_integral(&|q| stage.moments.first(q), a, e, quad, &mut bad);
            seg_b2[j][i] = m.density_integral(&|q| stage.moments.second(q), a, e, quad, &mut bad);
        }
        if let Some((q, value)) = bad {
            return Err(Error::Evaluation { q, value });
        }
        for atom in m.atoms() {
            let i = segment_of(atom.position, sigma, c);
            seg_p[j][i] += atom.mass;
            seg_b[j][i] += atom.mass * stage.moments.first(atom.position);
            seg_b2[j][i] += atom.mass * stage.moments.second(atom.position);
        }
    }
    let epsilon: Vec<f64> = spec.stages().iter().map(|s| s.epsilon).collect();
    let stage_means: Vec<StageMeans> = (0..n)
        .map(|j| StageMeans { first: seg_b[j].iter().sum(), second: seg_b2[j].iter().sum() })
        .collect();
    let mut ds = DiscreteSystem {
        sigma,
        n_stages: n,
        circumference: c,
        alpha: spec.alpha(),
        lambda: lam,
        epsilon,
        queues: vec![QueueRecord::default(); n * sigma],
        segment_prob: seg_p,
        stage_means,
        rho: 0.0,
    };
    // Remaining-work moments beyond stage j.
    let mut tail = vec![0.0; n];
    let mut tail2 = vec![0.0; n];
    let mut tail_cross = vec![0.0; n];
    for j in 0..n {
        let bm = |k: usize| ds.stage_means[k].first;
        tail[j] = (j + 1..n).map(|k| ds.eps_check(j + 1, k) * bm(k)).sum();
        tail2[j] = (j + 1..n).map(|k| ds.eps_check(j + 1, k) * ds.stage_means[k].second).sum();
        let mut x = 0.0;
        for l in j + 1..n.saturating_sub(1) {
            for k in l + 1..n {
                x += ds.eps_check(j + 1, k) * bm(k) * bm(l);
            }
        }
        tail_cross[j] = x;
    }
    let mut rho = 0.0;
    for i in 1..=sigma {
        for j in 0..n {
            let p = ds.segment_prob[j][i - 1];
            let (b, b2) = if p > 0.0 { (seg_b[j][i - 1] / p, seg_b2[j][i - 1] / p) } else { (0.0, 0.0) };
            let gamma = spec.eps_hat(j) * lam * p;
            let rec = QueueRecord {
                lambda: if j == 0 { lam * p } else { 0.0 },
                gamma,
                b,
                b2,
                btilde: b + tail[j],
                btilde2: b2 + tail2[j] + 2.0 * b * tail[j] + 2.0 * tail_cross[j],
                r: if j == 0 { c / (spec.alpha() * sigma as f64) } else { 0.0 },
                rho: gamma * b,
            };
            rho += rec.rho;
            let k = ds.queue_number(i, j);
            ds.queues[k - 1] = rec;
        }
    }
    ds.rho = rho;
    Ok(ds)
}

/// 1-based inclusive prefix sums with the circular wrap: when `e < a` the
/// sum runs `a..=K` and then `1..=e`.
struct CircularSum {
    prefix: Vec<f64>,
}

impl CircularSum {
    fn new(values: impl Iterator<Item = f64>) -> Self {
        let mut prefix = vec![0.0];
        for v in values {
            prefix.push(prefix.last().unwrap() + v);
        }
        Self { prefix }
    }

    fn sum(&self, a: usize, e: usize) -> f64 {
        let k = self.prefix.len() - 1;
        if e >= a {
            self.prefix[e] - self.prefix[a - 1]
        } else {
            self.prefix[k] - self.prefix[a - 1] + self.prefix[e]
        }
    }
}

/// Exact stationary workload of the discrete system.
pub fn workload_sigma(ds: &DiscreteSystem) -> Result<f64> {
    let rho = ds.rho;
    check_stable(rho)?;
    let n = ds.n_stages;
    let sigma = ds.sigma;
    let denom = 1.0 - rho;
    let qn = |i: usize, j: usize| n * (i - 1) + n - j;
    let q = |i: usize, j: usize| &ds.queues[qn(i, j) - 1];

    let t1: f64 = (1..=sigma).map(|i| q(i, 0).lambda * q(i, 0).btilde2).sum::<f64>() / (2.0 * denom);
    let t2: f64 = -ds.queues.iter().map(|r| r.gamma * (r.b2 / 2.0 + (r.btilde - r.b) * r.b)).sum::<f64>();
    let t3 = rho * ds.circumference / (2.0 * ds.alpha);

    let rho_sum = CircularSum::new(ds.queues.iter().map(|r| r.rho));
    let r_sum = CircularSum::new(ds.queues.iter().map(|r| r.r));
    let mut t4 = 0.0;
    for i in 1..=sigma {
        let mut inner = 0.0;
        for l in 1..=sigma {
            let ql = q(l, 0);
            if ql.lambda > 0.0 {
                inner += ql.lambda * ql.btilde * rho_sum.sum(n * l, n * i);
            }
        }
        t4 += inner / (ds.alpha * sigma as f64);
    }
    t4 *= ds.circumference / denom;

    let mut t5 = 0.0;
    for j in 0..n.saturating_sub(1) {
        let eps = ds.epsilon[j + 1];
        for i in 1..=sigma {
            let gi = q(i, j).gamma;
            if gi == 0.0 {
                continue;
            }
            let a = qn(i, j);
            for l in 1..=sigma {
                let p = ds.segment_prob[j + 1][l - 1];
                if p == 0.0 {
                    continue;
                }
                let walk = r_sum.sum(a, qn(l, j + 1) - 1);
                t5 += gi * eps * p * q(l, j + 1).btilde * walk;
            }
        }
    }
    t5 /= denom;
    Ok(t1 + t2 + t3 + t4 + t5)
}

pub fn workload_sigma_sequence(spec: &PollingSpec, sigmas: &[usize], quad: &Quadrature) -> Result<Vec<(usize, f64)>> {
    sigmas
        .iter()
        .map(|&s| Ok((s, workload_sigma(&build_discrete(spec, s, quad)?)?)))
        .collect()
}

/// Stationary mean time from the server's visit of point 0 until it
/// reaches `q` (starting external service there) in the same cycle.
///
/// Rerouted work served before reaching `q` lies in the shifted interval
/// `[|C|/σ, δ(q) + |C|/σ)` taken modulo `|C|`; as `σ → ∞` this becomes
/// `(0, q]`, which excludes an atom at 0 and includes one at `q`.
pub fn tau_star(spec: &PollingSpec, sigma: Sigma, q: f64, quad: &Quadrature) -> Result<f64> {
    let c = spec.circumference();
    let rho = total_load(spec, quad)?;
    check_stable(rho)?;
    let d = delta_sigma(sigma, q, c)?;
    let cycle = delta_sigma(sigma, c, c)? / (spec.alpha() * (1.0 - rho));
    let lam = spec.lambda();
    let stage_load = |j: usize, a: f64, e: f64| -> Result<f64> {
        let s = &spec.stages()[j];
        Ok(lam * s.measure.integrate_over(|x| s.moments.first(x), a, e, quad)?)
    };
    let mut load = stage_load(0, 0.0, d)?;
    for j in 1..spec.n_stages() {
        let s = &spec.stages()[j];
        let part = match sigma {
            Sigma::Infinite => {
                if d >= c {
                    stage_load(j, 0.0, c)?
                } else {
                    let at = |x: f64| lam * s.measure.atom_mass_at(x) * s.moments.first(x);
                    stage_load(j, 0.0, d)? + at(d) - at(0.0)
                }
            }
            Sigma::Finite(n) => {
                let h = c / n as f64;
                let end = d + h;
                if end <= c {
                    stage_load(j, h.min(end), end)?
                } else {
                    stage_load(j, h.min(c), c)? + stage_load(j, 0.0, (end - c).min(c))?
                }
            }
        };
        load += spec.eps_hat(j) * part;
    }
    Ok(d / spec.alpha() + cycle * load)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauProfile {
    pub sigma: Sigma,
    pub cycle_mean: f64,
    pub values: Vec<(f64, f64)>,
}

/// τ* on `points + 1` equally spaced positions from 0 to `|C|`.
pub fn tau_profile(spec: &PollingSpec, sigma: Sigma, points: usize, quad: &Quadrature) -> Result<TauProfile> {
    let c = spec.circumference();
    let points = points.max(1);
    let values = (0..=points)
        .map(|k| {
            let q = c * k as f64 / points as f64;
            Ok((q, tau_star(spec, sigma, q, quad)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let cycle_mean = values.last().unwrap().1;
    Ok(TauProfile { sigma, cycle_mean, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::workload_rrt;
    use crate::measure::{Atom, DensityForm, MixedMeasure, MomentFn, MomentProfile, StageSpec};

    fn smooth_spec() -> PollingSpec {
        let f = DensityForm::PiecewiseLinear { knots: vec![0.0, 0.5, 1.0], values: vec![0.5, 1.5, 1.0] };
        let g = DensityForm::PiecewiseLinear { knots: vec![0.0, 1.0], values: vec![0.0, 2.0] };
        let lin = || {
            MomentProfile::new(
                MomentFn::custom("1+q/2", |q| 1.0 + 0.5 * q),
                MomentFn::custom("1.5(1+q/2)^2", |q| 1.5 * (1.0 + 0.5 * q).powi(2)),
            )
        };
        PollingSpec::new(
            0.25,
            1.3,
            vec![
                StageSpec::new(1.0, MixedMeasure::from_form(1.0, vec![], Some(&f)).unwrap(), lin()),
                StageSpec::new(
                    0.5,
                    MixedMeasure::from_form(1.0, vec![], Some(&g)).unwrap(),
                    MomentProfile::constant(0.8, 1.0),
                ),
                StageSpec::new(0.7, MixedMeasure::from_form(1.0, vec![], Some(&f)).unwrap(), lin()),
            ],
        )
        .unwrap()
    }

    fn atom_spec() -> PollingSpec {
        let lin = MomentProfile::new(
            MomentFn::custom("1+q/2", |q| 1.0 + 0.5 * q),
            MomentFn::custom("1.5(1+q/2)^2", |q| 1.5 * (1.0 + 0.5 * q).powi(2)),
        );
        PollingSpec::new(
            0.25,
            1.3,
            vec![
                StageSpec::new(
                    1.0,
                    MixedMeasure::new(
                        1.0,
                        vec![Atom { position: 0.25, mass: 0.3 }, Atom { position: 0.5, mass: 0.7 }],
                        vec![],
                    )
                    .unwrap(),
                    lin,
                ),
                StageSpec::new(
                    0.6,
                    MixedMeasure::new(
                        1.0,
                        vec![Atom { position: 0.0, mass: 0.6 }, Atom { position: 0.75, mass: 0.4 }],
                        vec![],
                    )
                    .unwrap(),
                    MomentProfile::constant(0.8, 1.0),
                ),
            ],
        )
        .unwrap()
    }

    /// Mean-value analysis of a discrete polling system with gated
    /// service, independent of the pseudo-conservation sums: total work is
    /// decomposed into its M/G/1 part and the work found at polling
    /// instants, with the expected work at each visit built from arrival
    /// flows over the intervening walk.
    fn mean_value_workload(ds: &DiscreteSystem) -> f64 {
        let k = ds.queues.len();
        let n = ds.n_stages;
        let qn = |i: usize, j: usize| n * (i - 1) + n - j - 1;
        // Routing matrix (0-based).
        let mut p = vec![vec![0.0; k]; k];
        for i in 1..=ds.sigma {
            for j in 0..n - 1 {
                for l in 1..=ds.sigma {
                    p[qn(i, j)][qn(l, j + 1)] = ds.epsilon[j + 1] * ds.segment_prob[j + 1][l - 1];
                }
            }
        }
        let lam: Vec<f64> = ds.queues.iter().map(|r| r.lambda).collect();
        let b: Vec<f64> = ds.queues.iter().map(|r| r.b).collect();
        let b2: Vec<f64> = ds.queues.iter().map(|r| r.b2).collect();
        let r: Vec<f64> = ds.queues.iter().map(|r| r.r).collect();
        // Routing is acyclic in the stage index, so fixed-point iteration
        // terminates after N rounds.
        let mut gamma = lam.clone();
        for _ in 0..n {
            let mut next = lam.clone();
            for a in 0..k {
                for c in 0..k {
                    next[c] += p[a][c] * gamma[a];
                }
            }
            gamma = next;
        }
        let mut bt = b.clone();
        for _ in 0..n {
            let mut next = b.clone();
            for a in 0..k {
                for c in 0..k {
                    next[a] += p[a][c] * bt[c];
                }
            }
            bt = next;
        }
        let pbt: Vec<f64> = (0..k).map(|a| (0..k).map(|c| p[a][c] * bt[c]).sum()).collect();
        let mut bt2: Vec<f64> = (0..k).map(|a| b2[a] + 2.0 * b[a] * pbt[a]).collect();
        let base = bt2.clone();
        for _ in 0..n {
            let mut next = base.clone();
            for a in 0..k {
                for c in 0..k {
                    next[a] += p[a][c] * bt2[c];
                }
            }
            bt2 = next;
        }
        let rho_k: Vec<f64> = (0..k).map(|a| gamma[a] * b[a]).collect();
        let rho: f64 = rho_k.iter().sum();
        let big_r: f64 = r.iter().sum();
        let cyc = big_r / (1.0 - rho);
        let mut ey = 0.0;
        for i in 0..k {
            if r[i] == 0.0 {
                continue;
            }
            let mut m = 0.0;
            for src in 0..k {
                let span = (i + k - src) % k;
                let range: Vec<usize> = (0..=span).map(|t| (src + t) % k).collect();
                let trav: f64 = (0..span).map(|t| r[(src + t) % k]).sum();
                let load: f64 = range.iter().map(|&x| rho_k[x]).sum();
                let inflow: f64 = range.iter().map(|&x| gamma[x] * p[x][src]).sum();
                m += bt[src] * (lam[src] * (trav + cyc * load) + cyc * inflow);
            }
            ey += r[i] / big_r * (m + rho * r[i] / 2.0);
        }
        let mg1: f64 = (0..k).map(|a| lam[a] * bt2[a]).sum::<f64>() / (2.0 * (1.0 - rho));
        let in_service: f64 = (0..k).map(|a| gamma[a] * (b2[a] / 2.0 + b[a] * (bt[a] - b[a]))).sum();
        mg1 + ey - in_service
    }

    #[test]
    fn delta_sigma_examples() {
        assert_eq!(delta_sigma(Sigma::Infinite, 0.37, 1.0).unwrap(), 0.37);
        assert_eq!(delta_sigma(Sigma::Finite(4), 0.3, 1.0).unwrap(), 0.25);
        assert_eq!(delta_sigma(Sigma::Finite(1), 0.99, 1.0).unwrap(), 0.0);
        assert_eq!(delta_sigma(Sigma::Finite(8), 1.0, 1.0).unwrap(), 1.0);
        assert!(delta_sigma(Sigma::Finite(4), 1.1, 1.0).is_err());
        assert!(delta_sigma(Sigma::Finite(0), 0.5, 1.0).is_err());
        for s in [1, 3, 7, 64] {
            for k in 0..50 {
                let q = k as f64 / 50.0;
                let d = delta_sigma(Sigma::Finite(s), q, 1.0).unwrap();
                assert!(d <= q && q < d + 1.0 / s as f64 + 1e-15);
            }
        }
    }

    #[test]
    fn uniform_single_stage_queues() {
        let spec = PollingSpec::new(
            0.4,
            1.0,
            vec![StageSpec::new(1.0, MixedMeasure::uniform(1.0).unwrap(), MomentProfile::constant(1.5, 3.0))],
        )
        .unwrap();
        let ds = build_discrete(&spec, 8, &Quadrature::default()).unwrap();
        for rec in &ds.queues {
            assert!((rec.lambda - 0.05).abs() < 1e-15);
            assert!((rec.b - 1.5).abs() < 1e-14);
        }
    }

    #[test]
    fn atom_joins_right_segment() {
        let spec = PollingSpec::new(
            0.1,
            1.0,
            vec![StageSpec::new(1.0, MixedMeasure::point(1.0, 0.6).unwrap(), MomentProfile::constant(1.0, 1.0))],
        )
        .unwrap();
        let ds = build_discrete(&spec, 2, &Quadrature::default()).unwrap();
        assert_eq!(ds.segment_prob[0], vec![0.0, 1.0]);
        let edge = PollingSpec::new(
            0.1,
            1.0,
            vec![StageSpec::new(1.0, MixedMeasure::point(1.0, 0.5).unwrap(), MomentProfile::constant(1.0, 1.0))],
        )
        .unwrap();
        let ds = build_discrete(&edge, 2, &Quadrature::default()).unwrap();
        assert_eq!(ds.segment_prob[0], vec![0.0, 1.0]);
    }

    #[test]
    fn single_queue_by_hand() {
        // σ = 1, N = 1: one gated queue with walking time |C|/α.
        let (lam, b, b2, alpha) = (0.3, 1.2, 2.0, 0.8);
        let spec = PollingSpec::new(
            lam,
            alpha,
            vec![StageSpec::new(1.0, MixedMeasure::uniform(1.0).unwrap(), MomentProfile::constant(b, b2))],
        )
        .unwrap();
        let ds = build_discrete(&spec, 1, &Quadrature::default()).unwrap();
        let rho = lam * b;
        let r = 1.0 / alpha;
        let want = lam * b2 / (2.0 * (1.0 - rho)) - lam * b2 / 2.0 + rho * r / 2.0 + r / (1.0 - rho) * r * lam * b * rho / r;
        assert!((workload_sigma(&ds).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn pseudo_conservation_matches_mean_value_analysis() {
        let q = Quadrature::default();
        for spec in [smooth_spec(), atom_spec()] {
            for s in [1, 2, 5, 8] {
                let ds = build_discrete(&spec, s, &q).unwrap();
                let a = workload_sigma(&ds).unwrap();
                let b = mean_value_workload(&ds);
                assert!((a - b).abs() < 1e-12 * b, "σ={s}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn invariants_hold_for_all_levels() {
        let q = Quadrature::default();
        let spec = smooth_spec();
        let rho = total_load(&spec, &q).unwrap();
        for s in [1, 7, 64] {
            let ds = build_discrete(&spec, s, &q).unwrap();
            assert!((ds.sum_rho() - rho).abs() < 1e-12);
            assert!((ds.sum_r() - 1.0 / 1.3).abs() < 1e-12);
            for i in 1..=s {
                for j in 0..3 {
                    let g = ds.queue(i, j).gamma;
                    let want = spec.eps_hat(j) * 0.25 * ds.segment_prob[j][i - 1];
                    assert!((g - want).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn converges_to_continuous_workload() {
        let q = Quadrature::default();
        let spec = smooth_spec();
        let v = workload_rrt(&spec, &q).unwrap().total;
        let seq = workload_sigma_sequence(&spec, &[8, 256], &q).unwrap();
        let e8 = (seq[0].1 - v).abs();
        let e256 = (seq[1].1 - v).abs();
        assert!(e256 < e8);
        assert!(e256 / v < 1e-2);
    }

    #[test]
    fn aligned_atoms_are_exact() {
        let q = Quadrature::default();
        let spec = atom_spec();
        let v = workload_rrt(&spec, &q).unwrap().total;
        for s in [4, 8, 16, 64] {
            let w = workload_sigma(&build_discrete(&spec, s, &q).unwrap()).unwrap();
            assert!((w - v).abs() < 1e-12 * v, "σ={s}");
        }
    }

    #[test]
    fn idle_system() {
        let spec = smooth_spec().with_lambda(0.0).unwrap();
        let q = Quadrature::default();
        for (_, v) in workload_sigma_sequence(&spec, &[1, 4], &q).unwrap() {
            assert_eq!(v, 0.0);
        }
        for x in [0.0, 0.3, 1.0] {
            assert!((tau_star(&spec, Sigma::Infinite, x, &q).unwrap() - x / 1.3).abs() < 1e-15);
        }
    }

    #[test]
    fn tau_star_cycle_and_symmetric_midpoint() {
        let q = Quadrature::default();
        let u = MixedMeasure::uniform(1.0).unwrap();
        let spec = PollingSpec::new(
            0.3,
            2.0,
            vec![
                StageSpec::new(1.0, u.clone(), MomentProfile::constant(1.0, 1.5)),
                StageSpec::new(0.5, u, MomentProfile::constant(1.0, 1.5)),
            ],
        )
        .unwrap();
        let rho = 0.45;
        let cyc = 1.0 / (2.0 * (1.0 - rho));
        assert!((tau_star(&spec, Sigma::Infinite, 1.0, &q).unwrap() - cyc).abs() < 1e-14);
        assert!((tau_star(&spec, Sigma::Finite(16), 1.0, &q).unwrap() - cyc).abs() < 1e-14);
        let mid = tau_star(&spec, Sigma::Infinite, 0.5, &q).unwrap();
        assert!((mid - (0.25 + cyc * rho / 2.0)).abs() < 1e-14);
        let prof = tau_profile(&spec, Sigma::Finite(8), 40, &q).unwrap();
        assert!(prof.values.windows(2).all(|w| w[1].1 >= w[0].1));
        assert!((prof.cycle_mean - cyc).abs() < 1e-14);
    }

    #[test]
    fn tau_star_rerouted_atoms_are_counted_at_their_point() {
        let q = Quadrature::default();
        let spec = atom_spec();
        let rho = total_load(&spec, &q).unwrap();
        let cyc = 1.0 / (1.3 * (1.0 - rho));
        // Stage-1 atom at 0.75 (b = 0.8, mass 0.4) is served before external
        // work at 0.75; the one at 0 belongs to the end of the cycle.
        let t = tau_star(&spec, Sigma::Infinite, 0.75, &q).unwrap();
        let stage0 = 0.25 * (0.3 * 1.125 + 0.7 * 1.25);
        let stage1 = 0.6 * 0.25 * 0.4 * 0.8;
        assert!((t - (0.75 / 1.3 + cyc * (stage0 + stage1))).abs() < 1e-14);
        assert!(tau_star(&spec, Sigma::Infinite, 0.0, &q).unwrap().abs() < 1e-15);
    }
}
