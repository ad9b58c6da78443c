//! Discrete-event simulation of the mixed polling system with rerouting.
//!
//! The server moves clockwise at speed α and stops only where customers
//! wait. At a stop the stages are served from the highest down to stage 0,
//! each stage FIFO and gated at the moment its turn begins: customers that
//! join a stage after its turn started (including anyone rerouted back to
//! the same point) wait for the next revolution. Simultaneous events are
//! ordered arrival first.
//!
//! The recorded workload is the total remaining work of all waiting
//! customers: the drawn requirement of their pending service plus the
//! expected requirement of the services they may still be rerouted to. The
//! customer in service is excluded. The pending-only sum is reported too.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};
use rayon::prelude::*;

use crate::error::{Error, Result, STABILITY_MARGIN};
use crate::measure::{total_load, PollingSpec};
use crate::quadrature::Quadrature;

/// Version tag written at the top of every event trace.
pub const TRACE_SCHEMA: &str = "polling-lab-trace/1";
/// Column header of the event trace.
pub const TRACE_HEADER: &str = "time,event,position,customer,stage";

/// How service requirements are drawn from the two moments at a position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ServiceFamily {
    /// Deterministic where the variance vanishes, gamma elsewhere.
    #[default]
    Auto,
    Deterministic,
    /// Requires `b⁽²⁾ = 2b²` wherever the variance is positive.
    Exponential,
    Gamma,
}

/// Treatment of customers joining a stop while the server is there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AtomService {
    #[default]
    Gated,
    /// Keep serving the highest non-empty stage until the point is empty.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub horizon: f64,
    /// `None` selects [`default_warmup`].
    pub warmup: Option<f64>,
    pub seed: u64,
    pub service: ServiceFamily,
    pub atom_service: AtomService,
    /// Points whose visit epochs are recorded; 0 is always recorded first.
    pub reference_points: Vec<f64>,
    pub quadrature: Quadrature,
}

impl SimOptions {
    pub fn new(horizon: f64, seed: u64) -> Self {
        Self {
            horizon,
            warmup: None,
            seed,
            service: ServiceFamily::Auto,
            atom_service: AtomService::Gated,
            reference_points: Vec::new(),
            quadrature: Quadrature::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Customer {
    pub id: u64,
    pub stage: usize,
    pub position: f64,
    pub arrival_time: f64,
    pub service_time: f64,
}

/// Mean time between visits of any fixed point, `|C|/(α(1−ρ))`.
pub fn mean_cycle(spec: &PollingSpec, quad: &Quadrature) -> Result<f64> {
    let rho = total_load(spec, quad)?;
    crate::error::check_stable(rho)?;
    Ok(spec.circumference() / (spec.alpha() * (1.0 - rho)))
}

/// `max(100, 10/(1−ρ))` mean cycles; 100 empty cycles when unstable.
pub fn default_warmup(spec: &PollingSpec, quad: &Quadrature) -> Result<f64> {
    let rho = total_load(spec, quad)?;
    let empty = spec.circumference() / spec.alpha();
    if rho >= 1.0 - STABILITY_MARGIN {
        return Ok(100.0 * empty);
    }
    Ok((100f64).max(10.0 / (1.0 - rho)) * empty / (1.0 - rho))
}

/// Summary of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub replication: usize,
    pub warmup: f64,
    pub horizon: f64,
    /// Time average of the total remaining work over `(warmup, horizon]`.
    pub workload: f64,
    /// Time average of the pending requirements only.
    pub pending_workload: f64,
    pub arrivals: u64,
    pub services: u64,
    pub reroutes: u64,
    pub departures: u64,
    /// Waiting plus in service at the horizon.
    pub in_system: u64,
    pub max_stage: usize,
    /// `(point, visit epochs in [warmup, horizon])`; the first entry is point 0.
    pub visits: Vec<(f64, Vec<f64>)>,
    pub warnings: Vec<String>,
}

impl SimRun {
    pub fn conserved(&self) -> bool {
        self.arrivals == self.departures + self.in_system
    }

    fn epochs(&self, point: f64) -> Option<&[f64]> {
        self.visits.iter().find(|(p, _)| *p == point).map(|(_, v)| v.as_slice())
    }

    /// Lengths between consecutive recorded visits of `point`.
    pub fn cycle_lengths(&self, point: f64) -> Vec<f64> {
        self.epochs(point).map(|v| v.windows(2).map(|w| w[1] - w[0]).collect()).unwrap_or_default()
    }

    /// Per-cycle mean and mean square of the visit intervals of `point`.
    pub fn palm_moments(&self, point: f64) -> Option<(f64, f64)> {
        let c = self.cycle_lengths(point);
        if c.is_empty() {
            return None;
        }
        let n = c.len() as f64;
        Some((c.iter().sum::<f64>() / n, c.iter().map(|x| x * x).sum::<f64>() / n))
    }

    /// Time average of the forward recurrence time to the next visit of
    /// `point`, over the window from the warmup to the last recorded visit.
    pub fn time_average_residual(&self, point: f64) -> Option<f64> {
        let v = self.epochs(point)?;
        let last = *v.last()?;
        if last <= self.warmup {
            return None;
        }
        let mut area = 0.0;
        let mut from = self.warmup;
        for &e in v {
            area += (e - from).powi(2) / 2.0;
            from = e;
        }
        Some(area / (last - self.warmup))
    }

    /// Mean time from a visit of 0 to the next visit of `point`.
    pub fn progress_time(&self, point: f64) -> Option<f64> {
        let zero = self.epochs(0.0)?;
        let target = self.epochs(point)?;
        let mut sum = 0.0;
        let mut n = 0usize;
        for &t0 in zero {
            let k = target.partition_point(|&t| t <= t0);
            if let Some(&t) = target.get(k) {
                sum += t - t0;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Point estimate across independent replications.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replications: usize,
    pub per_replication: Vec<f64>,
    pub seed: u64,
    pub warmup: f64,
    pub horizon: f64,
}

impl SimEstimate {
    pub fn from_values(values: Vec<f64>, seed: u64, warmup: f64, horizon: f64) -> Result<Self> {
        let r = values.len();
        if r < 2 {
            return Err(Error::Domain(format!("need at least 2 replications, got {r}")));
        }
        let mean = values.iter().sum::<f64>() / r as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
        Ok(Self { mean, std_error: (var / r as f64).sqrt(), replications: r, per_replication: values, seed, warmup, horizon })
    }

    /// `|mean − target| / std_error`; infinite when the error is zero but
    /// the mean differs.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleStats {
    pub reference_point: f64,
    pub palm_mean: SimEstimate,
    pub palm_second: SimEstimate,
    pub time_avg_residual: SimEstimate,
    /// Per replication `palm_second / (2 palm_mean)`.
    pub palm_residual: SimEstimate,
    /// Per replication `time_avg_residual − palm_residual`.
    pub residual_gap: SimEstimate,
}

struct Stop {
    stages: Vec<VecDeque<Customer>>,
}

impl Stop {
    fn is_empty(&self) -> bool {
        self.stages.iter().all(|s| s.is_empty())
    }
}

fn key(x: f64) -> u64 {
    // Positions are nonnegative, so bit patterns sort like the values.
    if x == 0.0 {
        0
    } else {
        x.to_bits()
    }
}

struct Sim<'a, 'w> {
    spec: &'a PollingSpec,
    opts: &'a SimOptions,
    rng: ChaCha8Rng,
    c: f64,
    n: usize,
    future: Vec<f64>,
    stops: BTreeMap<u64, Stop>,
    t: f64,
    s: f64,
    pinned: Option<(u64, f64)>,
    next_arrival: f64,
    arrival_gap: Option<Exp<f64>>,
    work: f64,
    pending: f64,
    waiting: u64,
    area: f64,
    pending_area: f64,
    warmup: f64,
    horizon: f64,
    next_id: u64,
    run: SimRun,
    trace: Option<&'w mut dyn Write>,
}

impl<'a, 'w> Sim<'a, 'w> {
    fn log(&mut self, event: &str, position: f64, id: u64, stage: usize) -> Result<()> {
        if let Some(w) = self.trace.as_mut() {
            writeln!(w, "{},{},{},{},{}", self.t, event, position, id, stage).map_err(|e| Error::Io(e.to_string()))?;
        }
        Ok(())
    }

    fn advance(&mut self, to: f64) {
        let lo = self.t.max(self.warmup);
        let hi = to.min(self.horizon);
        if hi > lo {
            self.area += self.work * (hi - lo);
            self.pending_area += self.pending * (hi - lo);
        }
        self.t = to;
    }

    fn draw_service(&mut self, stage: usize, x: f64) -> Result<f64> {
        let m = &self.spec.stages()[stage].moments;
        let b = m.first(x);
        let b2 = m.second(x);
        if b <= 0.0 {
            return Ok(0.0);
        }
        let var = b2 - b * b;
        if var <= 1e-9 * b * b {
            return Ok(b);
        }
        match self.opts.service {
            ServiceFamily::Deterministic => Err(Error::Precondition(format!(
                "deterministic service needs zero variance, stage {stage} at {x} has {var}"
            ))),
            ServiceFamily::Exponential => {
                if (b2 - 2.0 * b * b).abs() > 1e-9 * b2 {
                    return Err(Error::Precondition(format!(
                        "exponential service needs b2 = 2b^2, stage {stage} at {x} has b = {b}, b2 = {b2}"
                    )));
                }
                Ok(Exp::new(1.0 / b).unwrap().sample(&mut self.rng))
            }
            ServiceFamily::Auto | ServiceFamily::Gamma => {
                let g = Gamma::new(b * b / var, var / b)
                    .map_err(|e| Error::Precondition(format!("gamma service at {x}: {e}")))?;
                Ok(g.sample(&mut self.rng))
            }
        }
    }

    fn insert(&mut self, cust: Customer) {
        let add = cust.service_time + self.future[cust.stage];
        self.work += add;
        self.pending += cust.service_time;
        self.waiting += 1;
        self.run.max_stage = self.run.max_stage.max(cust.stage);
        let n = self.n;
        self.stops
            .entry(key(cust.position))
            .or_insert_with(|| Stop { stages: (0..n).map(|_| VecDeque::new()).collect() })
            .stages[cust.stage]
            .push_back(cust);
    }

    fn schedule_arrival(&mut self) {
        self.next_arrival = match &self.arrival_gap {
            Some(e) => self.t + e.sample(&mut self.rng),
            None => f64::INFINITY,
        };
    }

    fn arrive(&mut self) -> Result<()> {
        let u: f64 = self.rng.random();
        let x = self.spec.stages()[0].measure.sample(u);
        let service = self.draw_service(0, x)?;
        let id = self.next_id;
        self.next_id += 1;
        self.run.arrivals += 1;
        self.insert(Customer { id, stage: 0, position: x, arrival_time: self.t, service_time: service });
        self.log("arrival", x, id, 0)?;
        self.schedule_arrival();
        Ok(())
    }

    /// Nearest stop strictly downstream, wrapping; a stop at the current
    /// position is a full revolution away.
    fn next_target(&self) -> Option<(u64, f64)> {
        let here = key(self.s);
        let (&k, _) = self.stops.range(here + 1..).next().or_else(|| self.stops.iter().next())?;
        let x = f64::from_bits(k);
        let mut d = (x - self.s).rem_euclid(self.c);
        if d == 0.0 {
            d = self.c;
        }
        if let Some((pk, pd)) = self.pinned {
            if self.stops.contains_key(&pk) && pd <= d {
                return Some((pk, pd));
            }
        }
        Some((k, d))
    }

    /// Moves the server by `d` and records reference crossings at offsets
    /// in `(0, d)`, or `(0, d]` when `inclusive`.
    fn travel(&mut self, d: f64, inclusive: bool) {
        let start = self.t;
        let alpha = self.spec.alpha();
        for (r, epochs) in self.run.visits.iter_mut() {
            let mut off = (*r - self.s).rem_euclid(self.c);
            if off == 0.0 {
                off = self.c;
            }
            while off < d || (inclusive && off == d) {
                let e = start + off / alpha;
                if e >= self.warmup && e <= self.horizon {
                    epochs.push(e);
                }
                off += self.c;
            }
        }
        let mut s = (self.s + d).rem_euclid(self.c);
        if s >= self.c {
            s = 0.0;
        }
        self.s = s;
    }

    fn record_stop_visit(&mut self, x: f64) {
        let t = self.t;
        if t < self.warmup || t > self.horizon {
            return;
        }
        for (r, epochs) in self.run.visits.iter_mut() {
            if *r == x {
                epochs.push(t);
            }
        }
    }

    /// Serves the first customer of `stage` at the stop; returns false once
    /// the horizon is reached.
    fn serve_one(&mut self, k: u64, stage: usize) -> Result<bool> {
        let cust = self.stops.get_mut(&k).unwrap().stages[stage].pop_front().unwrap();
        self.waiting -= 1;
        if self.waiting == 0 {
            self.work = 0.0;
            self.pending = 0.0;
        } else {
            self.work -= cust.service_time + self.future[stage];
            self.pending -= cust.service_time;
        }
        self.log("service_start", cust.position, cust.id, stage)?;
        let end = self.t + cust.service_time;
        while self.next_arrival <= end && self.next_arrival <= self.horizon {
            let ta = self.next_arrival;
            self.advance(ta);
            self.arrive()?;
        }
        if end > self.horizon {
            self.advance(self.horizon);
            return Ok(false);
        }
        self.advance(end);
        self.run.services += 1;
        self.log("service_end", cust.position, cust.id, stage)?;
        let next = stage + 1;
        let rerouted = next < self.n && self.rng.random::<f64>() < self.spec.stages()[next].epsilon;
        if rerouted {
            let u: f64 = self.rng.random();
            let x = self.spec.stages()[next].measure.sample(u);
            let service = self.draw_service(next, x)?;
            self.run.reroutes += 1;
            self.insert(Customer { id: cust.id, stage: next, position: x, arrival_time: self.t, service_time: service });
            self.log("reroute", x, cust.id, next)?;
        } else {
            self.run.departures += 1;
            self.log("departure", cust.position, cust.id, stage)?;
        }
        Ok(true)
    }

    fn serve_stop(&mut self, k: u64) -> Result<bool> {
        let x = f64::from_bits(k);
        match self.opts.atom_service {
            AtomService::Gated => {
                for stage in (0..self.n).rev() {
                    if stage == 0 {
                        self.record_stop_visit(x);
                    }
                    let count = self.stops[&k].stages[stage].len();
                    for _ in 0..count {
                        if !self.serve_one(k, stage)? {
                            return Ok(false);
                        }
                    }
                }
            }
            AtomService::Exhaustive => {
                self.record_stop_visit(x);
                while let Some(stage) = self.stops[&k].stages.iter().rposition(|q| !q.is_empty()) {
                    if !self.serve_one(k, stage)? {
                        return Ok(false);
                    }
                }
            }
        }
        if self.stops[&k].is_empty() {
            self.stops.remove(&k);
        }
        Ok(true)
    }

    fn run(mut self) -> Result<SimRun> {
        let alpha = self.spec.alpha();
        self.schedule_arrival();
        loop {
            let target = self.next_target();
            let reach = target.map_or(f64::INFINITY, |(_, d)| self.t + d / alpha);
            let event = reach.min(self.next_arrival);
            if event > self.horizon {
                let d = (self.horizon - self.t) * alpha;
                self.travel(d, true);
                self.advance(self.horizon);
                break;
            }
            if self.next_arrival <= reach {
                let d = (self.next_arrival - self.t) * alpha;
                self.travel(d, true);
                self.pinned = target.map(|(k, full)| (k, full - d));
                self.advance(self.next_arrival);
                self.arrive()?;
            } else {
                let (k, d) = target.unwrap();
                self.travel(d, false);
                self.s = f64::from_bits(k);
                self.pinned = None;
                self.advance(reach);
                if !self.serve_stop(k)? {
                    break;
                }
            }
        }
        let waiting: u64 = self.stops.values().flat_map(|s| s.stages.iter()).map(|q| q.len() as u64).sum();
        let window = self.horizon - self.warmup;
        self.run.in_system = self.run.arrivals - self.run.departures;
        let in_service = self.run.in_system - waiting;
        if in_service > 1 || waiting != self.waiting {
            return Err(Error::Precondition("customer accounting is inconsistent".into()));
        }
        self.run.workload = self.area / window;
        self.run.pending_workload = self.pending_area / window;
        Ok(self.run)
    }
}

fn resolve_warmup(spec: &PollingSpec, opts: &SimOptions) -> Result<f64> {
    match opts.warmup {
        Some(w) if w.is_finite() && w >= 0.0 => Ok(w),
        Some(w) => Err(Error::Domain(format!("warmup must be a nonnegative time, got {w}"))),
        None => default_warmup(spec, &opts.quadrature),
    }
}

/// One replication on random stream `replication` of the master seed.
pub fn run_replication(
    spec: &PollingSpec,
    opts: &SimOptions,
    replication: usize,
    trace: Option<&mut dyn Write>,
) -> Result<SimRun> {
    let quad = &opts.quadrature;
    let rho = total_load(spec, quad)?;
    let c = spec.circumference();
    let warmup = resolve_warmup(spec, opts)?;
    let horizon = opts.horizon;
    if !(horizon.is_finite() && horizon > warmup) {
        return Err(Error::Domain(format!("horizon {horizon} must exceed the warmup {warmup}")));
    }
    let mut warnings = Vec::new();
    let cycle = if rho < 1.0 - STABILITY_MARGIN {
        c / (spec.alpha() * (1.0 - rho))
    } else {
        warnings.push(format!("load {rho} is not below 1; the system is unstable"));
        c / spec.alpha()
    };
    if horizon - warmup < 10.0 * cycle {
        return Err(Error::InadequateRun(format!(
            "observation window {} holds fewer than 10 mean cycles of {cycle}",
            horizon - warmup
        )));
    }
    for &r in &opts.reference_points {
        if !(0.0..c).contains(&r) {
            return Err(Error::Domain(format!("reference point {r} outside [0, {c})")));
        }
    }
    let means = spec.stage_means(quad)?;
    let future = (0..spec.n_stages()).map(|j| spec.future_work(&means, j)).collect();
    let mut points = vec![0.0];
    points.extend(opts.reference_points.iter().copied().filter(|&r| r != 0.0));
    points.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(replication as u64);
    let mut trace = trace;
    if let Some(w) = trace.as_mut() {
        writeln!(w, "# {TRACE_SCHEMA}\n{TRACE_HEADER}").map_err(|e| Error::Io(e.to_string()))?;
    }
    let sim = Sim {
        spec,
        opts,
        rng,
        c,
        n: spec.n_stages(),
        future,
        stops: BTreeMap::new(),
        t: 0.0,
        s: 0.0,
        pinned: None,
        next_arrival: f64::INFINITY,
        arrival_gap: (spec.lambda() > 0.0).then(|| Exp::new(spec.lambda()).unwrap()),
        work: 0.0,
        pending: 0.0,
        waiting: 0,
        area: 0.0,
        pending_area: 0.0,
        warmup,
        horizon,
        next_id: 0,
        run: SimRun {
            replication,
            warmup,
            horizon,
            workload: 0.0,
            pending_workload: 0.0,
            arrivals: 0,
            services: 0,
            reroutes: 0,
            departures: 0,
            in_system: 0,
            max_stage: 0,
            visits: points.into_iter().map(|p| (p, Vec::new())).collect(),
            warnings,
        },
        trace,
    };
    sim.run()
}

/// A single replication (stream 0), optionally writing the event trace.
pub fn run_simulation(spec: &PollingSpec, opts: &SimOptions, trace: Option<&mut dyn Write>) -> Result<SimRun> {
    run_replication(spec, opts, 0, trace)
}

/// Independent replications on streams `0..replications`, in order.
pub fn replicate(spec: &PollingSpec, replications: usize, opts: &SimOptions) -> Result<Vec<SimRun>> {
    if replications < 2 {
        return Err(Error::Domain(format!("need at least 2 replications, got {replications}")));
    }
    (0..replications).into_par_iter().map(|r| run_replication(spec, opts, r, None)).collect()
}

fn estimate(runs: &[SimRun], opts: &SimOptions, values: Vec<f64>) -> Result<SimEstimate> {
    let run = &runs[0];
    SimEstimate::from_values(values, opts.seed, run.warmup, run.horizon)
}

pub fn workload_estimate(runs: &[SimRun], opts: &SimOptions) -> Result<SimEstimate> {
    estimate(runs, opts, runs.iter().map(|r| r.workload).collect())
}

pub fn cycle_stats(runs: &[SimRun], point: f64, opts: &SimOptions) -> Result<CycleStats> {
    let mut mean = Vec::new();
    let mut second = Vec::new();
    let mut resid = Vec::new();
    let mut palm = Vec::new();
    let mut gap = Vec::new();
    for r in runs {
        let missing = || Error::InadequateRun(format!("replication {} saw too few visits of {point}", r.replication));
        let (m, s) = r.palm_moments(point).ok_or_else(missing)?;
        let res = r.time_average_residual(point).ok_or_else(missing)?;
        mean.push(m);
        second.push(s);
        resid.push(res);
        palm.push(s / (2.0 * m));
        gap.push(res - s / (2.0 * m));
    }
    Ok(CycleStats {
        reference_point: point,
        palm_mean: estimate(runs, opts, mean)?,
        palm_second: estimate(runs, opts, second)?,
        time_avg_residual: estimate(runs, opts, resid)?,
        palm_residual: estimate(runs, opts, palm)?,
        residual_gap: estimate(runs, opts, gap)?,
    })
}

pub fn progress_estimate(runs: &[SimRun], point: f64, opts: &SimOptions) -> Result<SimEstimate> {
    let values = runs
        .iter()
        .map(|r| {
            r.progress_time(point)
                .ok_or_else(|| Error::InadequateRun(format!("replication {} never reached {point}", r.replication)))
        })
        .collect::<Result<Vec<_>>>()?;
    estimate(runs, opts, values)
}

pub fn estimate_workload(spec: &PollingSpec, replications: usize, opts: &SimOptions) -> Result<SimEstimate> {
    workload_estimate(&replicate(spec, replications, opts)?, opts)
}

pub fn estimate_cycle_stats(spec: &PollingSpec, point: f64, replications: usize, opts: &SimOptions) -> Result<CycleStats> {
    let mut o = opts.clone();
    o.reference_points = vec![point];
    cycle_stats(&replicate(spec, replications, &o)?, point, &o)
}

pub fn estimate_progress_times(
    spec: &PollingSpec,
    points: &[f64],
    replications: usize,
    opts: &SimOptions,
) -> Result<Vec<(f64, SimEstimate)>> {
    let mut o = opts.clone();
    o.reference_points = points.to_vec();
    let runs = replicate(spec, replications, &o)?;
    points.iter().map(|&p| Ok((p, progress_estimate(&runs, p, &o)?))).collect()
}
