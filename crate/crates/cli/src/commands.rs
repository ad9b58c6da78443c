//! The six commands. Each takes the effective configuration and returns the
//! artifacts to write plus a completion status.

use polling_core::analytic::{workload_gated, workload_globally_gated, workload_rrt, workload_symmetric, WorkloadBreakdown};
use polling_core::apps::fwlan::{
    fwlan_hybrid_atomless_form, fwlan_hybrid_workload, fwlan_hybrid_zero_bs_form, fwlan_mean_closed_form,
    fwlan_objective, fwlan_optimize, fwlan_terms, fwlan_workload, fwlan_workload_atomless_form, Architecture,
    Objective,
};
use polling_core::apps::waste::{waste_optimize, waste_workload};
use polling_core::discretize::{build_discrete, tau_profile, tau_star, workload_sigma, Sigma};
use polling_core::error::STABILITY_MARGIN;
use polling_core::measure::{total_load, PollingSpec};
use polling_core::quadrature::Quadrature;
use polling_core::simulate::{
    cycle_stats, default_warmup, progress_estimate, replicate, run_replication, workload_estimate, SimEstimate,
    SimOptions, SimRun,
};
use polling_core::Error;

use crate::config::{ModelConfig, RunConfig, SweepParameter};
use crate::output::{num, opt, Artifacts, Plot, Table};
use crate::CliError;

/// Agreement tolerance printed next to closed-form special cases.
pub const SPECIAL_CASE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    /// Outputs were produced but the load is not below 1.
    Unstable(String),
    /// A validation check failed.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub artifacts: Artifacts,
    pub status: Status,
}

impl Outcome {
    fn ok(artifacts: Artifacts) -> Self {
        Self { artifacts, status: Status::Ok }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Instability { .. } => CliError::Instability(e.to_string()),
            Error::Invalid(_) | Error::Domain(_) | Error::Precondition(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn kv(label: &str, value: impl std::fmt::Display) -> String {
    format!("{label:<34} {value}")
}

fn rel_diff(a: f64, reference: f64) -> f64 {
    if a == reference {
        0.0
    } else {
        (a - reference).abs() / reference.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn check_numeric(cfg: &RunConfig) -> Result<(), CliError> {
    let n = &cfg.numeric;
    let bad = |m: &str| Err(CliError::Config(format!("numeric.{m}")));
    if n.quadrature_panels == 0 || n.quadrature_order == 0 || n.quadrature_order > 64 {
        return bad("quadrature_panels must be positive and quadrature_order in 1..=64");
    }
    if !(n.quadrature_tolerance > 0.0) {
        return bad("quadrature_tolerance must be positive");
    }
    if n.sigmas.is_empty() || n.sigmas.contains(&0) {
        return bad("sigmas must be a nonempty list of positive integers");
    }
    if n.replications < 2 {
        return bad("replications must be at least 2");
    }
    if !(n.horizon_cycles > 0.0) || n.horizon_time.is_some_and(|h| !(h > 0.0)) {
        return bad("horizon must be positive");
    }
    if n.warmup_time.is_some_and(|w| !(w >= 0.0)) {
        return bad("warmup_time must be nonnegative");
    }
    if n.tau_points == 0 {
        return bad("tau_points must be positive");
    }
    if !(n.sigma_tolerance > 0.0 && n.z_threshold > 0.0) {
        return bad("sigma_tolerance and z_threshold must be positive");
    }
    Ok(())
}

fn load(spec: &PollingSpec, quad: &Quadrature) -> Result<f64, CliError> {
    Ok(total_load(spec, quad)?)
}

fn stable(rho: f64) -> bool {
    rho.is_finite() && rho < 1.0 - STABILITY_MARGIN
}

fn require_stable(rho: f64) -> Result<(), CliError> {
    if stable(rho) {
        Ok(())
    } else {
        Err(Error::Instability { rho }.into())
    }
}

fn model_line(out: &mut Artifacts, cfg: &RunConfig, spec: &PollingSpec, rho: f64) {
    out.line(kv("model", cfg.model.kind()));
    out.line(kv("stages", spec.n_stages()));
    out.line(kv("circumference", spec.circumference()));
    out.line(kv("lambda", spec.lambda()));
    out.line(kv("speed", spec.alpha()));
    out.line(kv("load rho", rho));
}

fn cdf_plot(spec: &PollingSpec, points: usize) -> Result<Plot, CliError> {
    let names: Vec<String> = (0..spec.n_stages()).map(|j| format!("cdf_stage_{j}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut p = Plot::new("position_cdf", "Position distribution per stage", "position", &refs);
    let c = spec.circumference();
    for k in 0..=points {
        let q = c * (k as f64 / points as f64);
        let mut row = vec![num(q)];
        for s in spec.stages() {
            row.push(num(s.measure.cdf(q)?));
        }
        p.table.push(row);
    }
    Ok(p)
}

fn breakdown_rows(out: &mut Artifacts, b: &WorkloadBreakdown) {
    out.value("workload", b.total);
    out.value("term_service_second_moment", b.term_service_second_moment);
    out.value("term_cross_service", b.term_cross_service);
    out.value("term_half_cycle", b.term_half_cycle);
    out.value("term_external_integral", b.term_external_integral);
    for (j, t) in b.term_rerouting_integrals.iter().enumerate() {
        out.value(&format!("term_rerouting_{j}_{}", j + 1), *t);
    }
    out.line(kv("mean workload", b.total));
    out.line(kv("  service second moments", b.term_service_second_moment));
    out.line(kv("  cross service", b.term_cross_service));
    out.line(kv("  half cycle", b.term_half_cycle));
    out.line(kv("  external positions", b.term_external_integral));
    for (j, t) in b.term_rerouting_integrals.iter().enumerate() {
        out.line(kv(&format!("  rerouting {j} -> {}", j + 1), t));
    }
}

/// Reports a closed form next to the general value.
fn compare_row(out: &mut Artifacts, name: &str, value: f64, reference: f64) {
    let d = rel_diff(value, reference);
    let status = if d <= SPECIAL_CASE_TOLERANCE { "agree" } else { "differ" };
    out.row(name, Some(value), None, Some(reference), Some(SPECIAL_CASE_TOLERANCE), status);
    out.line(kv(name, format!("{value} (relative difference {d:.3e}, {status})")));
}

fn is_globally_gated_shape(spec: &PollingSpec) -> bool {
    if spec.n_stages() != 2 || spec.stages()[1].epsilon != 1.0 {
        return false;
    }
    let gate = &spec.stages()[0];
    let atoms = gate.measure.atoms();
    atoms.len() == 1
        && atoms[0].position == 0.0
        && gate.measure.pieces().is_empty()
        && gate.moments.constant_values(0.0) == Some((0.0, 0.0))
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let quad = cfg.quadrature();
    let spec = cfg.model.polling_spec()?;
    let rho = load(&spec, &quad)?;
    let mut out = Artifacts::default();
    model_line(&mut out, cfg, &spec, rho);
    out.value("rho", rho);
    require_stable(rho)?;
    out.line("");
    let general = workload_rrt(&spec, &quad)?;
    breakdown_rows(&mut out, &general);
    let v = general.total;
    out.line("");
    match &cfg.model {
        ModelConfig::Polling(_) => {
            let mut any = false;
            match workload_symmetric(&spec) {
                Ok(s) => {
                    compare_row(&mut out, "workload_symmetric", s, v);
                    any = true;
                }
                Err(Error::Precondition(_)) => {}
                Err(e) => return Err(e.into()),
            }
            if spec.n_stages() == 1 {
                compare_row(&mut out, "workload_gated", workload_gated(&spec, &quad)?, v);
                any = true;
            }
            if is_globally_gated_shape(&spec) {
                let g = workload_globally_gated(&spec.stages()[1], spec.lambda(), spec.alpha(), &quad)?;
                compare_row(&mut out, "workload_globally_gated", g, v);
                any = true;
            }
            if !any {
                out.line("no special-case closed form applies");
            }
        }
        ModelConfig::Fwlan(f) => {
            let geo = f.geometry();
            let t = fwlan_terms(&geo, &quad)?;
            out.value("bbar", t.bbar);
            out.value("bbar_closed_form", fwlan_mean_closed_form(&geo)?);
            out.value("two_lambda_bbar", 2.0 * geo.lambda * t.bbar);
            out.line(kv("mean transfer time bbar", t.bbar));
            out.line(kv("2 lambda bbar", 2.0 * geo.lambda * t.bbar));
            match f.architecture() {
                Architecture::Autonomous => {
                    compare_row(&mut out, "fwlan_workload", fwlan_workload(&geo, &quad)?, v);
                    let a = fwlan_workload_atomless_form(&geo, &quad)?;
                    out.value("fwlan_workload_atomless_form", a);
                    out.line(kv("atomless simplified form", a));
                }
                Architecture::Hybrid => {
                    out.value("base_station_transfer", geo.b_bs());
                    compare_row(&mut out, "fwlan_hybrid_workload", fwlan_hybrid_workload(&geo, &quad)?, v);
                    let a = fwlan_hybrid_atomless_form(&geo, &quad)?;
                    out.value("fwlan_hybrid_atomless_form", a);
                    out.line(kv("atomless simplified form", a));
                    if geo.b_bs() == 0.0 {
                        let z = fwlan_hybrid_zero_bs_form(&geo, &quad)?;
                        out.value("fwlan_hybrid_zero_bs_form", z);
                        out.line(kv("zero base-station form", z));
                    }
                }
            }
        }
        ModelConfig::Waste(w) => {
            let ws = w.build()?;
            compare_row(&mut out, "waste_workload", waste_workload(&ws, &quad)?, v);
        }
    }
    out.plots.push(cdf_plot(&spec, 200)?);
    Ok(Outcome::ok(out))
}

fn sigma_label(s: Sigma) -> String {
    match s {
        Sigma::Finite(n) => n.to_string(),
        Sigma::Infinite => "inf".into(),
    }
}

fn tau_plot(spec: &PollingSpec, sigmas: &[usize], points: usize, quad: &Quadrature) -> Result<Plot, CliError> {
    let mut levels: Vec<Sigma> = sigmas.iter().map(|&s| Sigma::Finite(s)).collect();
    levels.push(Sigma::Infinite);
    let names: Vec<String> = levels.iter().map(|&s| format!("tau_sigma_{}", sigma_label(s))).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut p = Plot::new("tau_star", "Mean progress time from point 0", "position", &refs);
    let profiles = levels
        .iter()
        .map(|&s| tau_profile(spec, s, points, quad))
        .collect::<polling_core::Result<Vec<_>>>()?;
    for k in 0..=points {
        let mut row = vec![num(profiles[0].values[k].0)];
        row.extend(profiles.iter().map(|pr| num(pr.values[k].1)));
        p.table.push(row);
    }
    Ok(p)
}

/// σ table against the continuous workload; returns the relative error at
/// the finest level.
fn sigma_section(
    out: &mut Artifacts,
    cfg: &RunConfig,
    spec: &PollingSpec,
    reference: f64,
    quad: &Quadrature,
) -> Result<f64, CliError> {
    let mut sigmas = cfg.numeric.sigmas.clone();
    sigmas.sort_unstable();
    sigmas.dedup();
    let mut plot = Plot::new(
        "sigma_convergence",
        "Discretized workload by number of segments",
        "sigma",
        &["workload_sigma", "relative_error", "sum_rho", "sum_walk"],
    );
    out.line(format!("{:>8} {:>24} {:>12} {:>22} {:>22}", "sigma", "workload", "rel.error", "sum rho_k", "sum r_k"));
    let mut last = f64::NAN;
    for &s in &sigmas {
        let ds = build_discrete(spec, s, quad)?;
        let w = workload_sigma(&ds)?;
        let e = rel_diff(w, reference);
        out.line(format!("{s:>8} {w:>24} {e:>12.3e} {:>22} {:>22}", ds.sum_rho(), ds.sum_r()));
        out.row(&format!("workload_sigma_{s}"), Some(w), None, Some(reference), None, "");
        out.row(&format!("sum_rho_sigma_{s}"), Some(ds.sum_rho()), None, None, None, "");
        out.row(&format!("sum_walk_sigma_{s}"), Some(ds.sum_r()), None, None, None, "");
        plot.table.push(vec![num(s as f64), num(w), num(e), num(ds.sum_rho()), num(ds.sum_r())]);
        last = e;
    }
    out.plots.push(plot);
    Ok(last)
}

pub fn cmd_discretize(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let quad = cfg.quadrature();
    let spec = cfg.model.polling_spec()?;
    let rho = load(&spec, &quad)?;
    let mut out = Artifacts::default();
    model_line(&mut out, cfg, &spec, rho);
    out.value("rho", rho);
    require_stable(rho)?;
    let v = workload_rrt(&spec, &quad)?.total;
    out.value("workload", v);
    out.line(kv("continuous workload", v));
    out.line("");
    sigma_section(&mut out, cfg, &spec, v, &quad)?;
    out.plots.push(tau_plot(&spec, &cfg.numeric.sigmas, cfg.numeric.tau_points, &quad)?);
    Ok(Outcome::ok(out))
}

pub fn sim_options(cfg: &RunConfig, spec: &PollingSpec, quad: &Quadrature) -> Result<SimOptions, CliError> {
    let n = &cfg.numeric;
    let seed = n.seed.ok_or_else(|| {
        CliError::Config("a seed is required to simulate: set numeric.seed or pass --seed".into())
    })?;
    let rho = load(spec, quad)?;
    let empty = spec.circumference() / spec.alpha();
    let cycle = if stable(rho) { empty / (1.0 - rho) } else { empty };
    let warmup = match n.warmup_time {
        Some(w) => w,
        None => default_warmup(spec, quad)?,
    };
    let horizon = n.horizon_time.unwrap_or(warmup + n.horizon_cycles * cycle);
    Ok(SimOptions {
        horizon,
        warmup: Some(warmup),
        seed,
        service: cfg.service_family(),
        atom_service: cfg.atom_service(),
        reference_points: n.reference_points_length.clone(),
        quadrature: quad.clone(),
    })
}

fn estimate_line(out: &mut Artifacts, label: &str, e: &SimEstimate) {
    out.line(kv(label, format!("{} +- {} (SE, {} replications)", e.mean, e.std_error, e.replications)));
}

fn replication_plot(runs: &[SimRun]) -> Plot {
    let mut p = Plot::new(
        "replications",
        "Time-average workload per replication",
        "replication",
        &["workload", "pending_workload", "arrivals", "departures"],
    );
    for r in runs {
        p.table.push(vec![
            r.replication.to_string(),
            num(r.workload),
            num(r.pending_workload),
            r.arrivals.to_string(),
            r.departures.to_string(),
        ]);
    }
    p
}

fn run_header(out: &mut Artifacts, opts: &SimOptions, replications: usize) {
    out.line(kv("seed", opts.seed));
    out.line(kv("replications", replications));
    out.line(kv("warmup", opt(opts.warmup)));
    out.line(kv("horizon", opts.horizon));
}

/// Points where progress times are compared: the configured reference
/// points, or four interior points.
fn progress_points(cfg: &RunConfig, spec: &PollingSpec) -> Vec<f64> {
    let c = spec.circumference();
    let given: Vec<f64> = cfg.numeric.reference_points_length.iter().copied().filter(|&q| q > 0.0).collect();
    if given.is_empty() {
        (1..=4).map(|k| c * k as f64 / 5.0).collect()
    } else {
        given
    }
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let quad = cfg.quadrature();
    let spec = cfg.model.polling_spec()?;
    let rho = load(&spec, &quad)?;
    let mut opts = sim_options(cfg, &spec, &quad)?;
    let is_stable = stable(rho);
    if is_stable {
        let mut pts = cfg.numeric.reference_points_length.clone();
        for q in progress_points(cfg, &spec) {
            if !pts.contains(&q) {
                pts.push(q);
            }
        }
        opts.reference_points = pts;
    }
    let reps = cfg.numeric.replications;
    let mut out = Artifacts::default();
    model_line(&mut out, cfg, &spec, rho);
    out.value("rho", rho);
    run_header(&mut out, &opts, reps);
    let runs = replicate(&spec, reps, &opts)?;
    let w = workload_estimate(&runs, &opts)?;
    let pending = SimEstimate::from_values(runs.iter().map(|r| r.pending_workload).collect(), opts.seed, w.warmup, w.horizon)?;
    let mut warnings: Vec<String> = runs.iter().flat_map(|r| r.warnings.iter().cloned()).collect();
    warnings.dedup();
    if runs.iter().any(|r| !r.conserved()) {
        warnings.push("customer conservation violated in some replication".into());
    }
    out.line("");
    estimate_line(&mut out, "simulated workload", &w);
    estimate_line(&mut out, "simulated pending requirements", &pending);
    let status = if is_stable {
        let v = workload_rrt(&spec, &quad)?.total;
        let z = w.z_score(v);
        out.row("workload", Some(w.mean), Some(w.std_error), Some(v), None, "");
        out.row("workload_z_score", Some(z), None, None, None, "");
        out.row("pending_workload", Some(pending.mean), Some(pending.std_error), None, None, "");
        out.line(kv("formula workload", v));
        out.line(kv("z-score", z));
        out.line("");
        let cycle = spec.circumference() / (spec.alpha() * (1.0 - rho));
        let mut points = vec![0.0];
        points.extend(cfg.numeric.reference_points_length.iter().copied().filter(|&q| q != 0.0));
        for &q in &points {
            let cs = cycle_stats(&runs, q, &opts)?;
            let tag = format!("at_{q}");
            out.row(&format!("palm_mean_cycle_{tag}"), Some(cs.palm_mean.mean), Some(cs.palm_mean.std_error), Some(cycle), None, "");
            out.row(
                &format!("time_average_residual_{tag}"),
                Some(cs.time_avg_residual.mean),
                Some(cs.time_avg_residual.std_error),
                Some(cs.palm_residual.mean),
                None,
                "",
            );
            out.row(&format!("residual_gap_{tag}"), Some(cs.residual_gap.mean), Some(cs.residual_gap.std_error), Some(0.0), None, "");
            out.line(format!("cycles through {q}:"));
            estimate_line(&mut out, "  Palm mean cycle", &cs.palm_mean);
            out.line(kv("  formula mean cycle", cycle));
            estimate_line(&mut out, "  time-average residual", &cs.time_avg_residual);
            estimate_line(&mut out, "  Palm residual", &cs.palm_residual);
        }
        out.line("");
        let mut plot = Plot::new(
            "progress_times",
            "Mean progress time from point 0, simulated and closed form",
            "position",
            &["simulated", "std_error", "tau_star"],
        );
        out.line(format!("{:>14} {:>24} {:>14} {:>24}", "position", "simulated", "SE", "closed form"));
        for q in progress_points(cfg, &spec) {
            let e = progress_estimate(&runs, q, &opts)?;
            let t = tau_star(&spec, Sigma::Infinite, q, &quad)?;
            out.row(&format!("progress_time_at_{q}"), Some(e.mean), Some(e.std_error), Some(t), None, "");
            out.line(format!("{q:>14} {:>24} {:>14.4e} {t:>24}", e.mean, e.std_error));
            plot.table.push(vec![num(q), num(e.mean), num(e.std_error), num(t)]);
        }
        out.plots.push(plot);
        Status::Ok
    } else {
        out.row("workload", Some(w.mean), Some(w.std_error), None, None, "unstable");
        Status::Unstable(format!("load {rho} is not below 1; time averages do not settle"))
    };
    for msg in &warnings {
        out.line(format!("warning: {msg}"));
    }
    out.plots.push(replication_plot(&runs));
    if cfg.output.trace {
        let mut buf = Vec::new();
        run_replication(&spec, &opts, 0, Some(&mut buf))?;
        out.trace = Some(String::from_utf8(buf).map_err(|e| CliError::Runtime(e.to_string()))?);
    }
    Ok(Outcome { artifacts: out, status })
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let quad = cfg.quadrature();
    let spec = cfg.model.polling_spec()?;
    let rho = load(&spec, &quad)?;
    let opts = sim_options(cfg, &spec, &quad)?;
    let mut out = Artifacts::default();
    model_line(&mut out, cfg, &spec, rho);
    out.value("rho", rho);
    require_stable(rho)?;
    let v = workload_rrt(&spec, &quad)?.total;
    out.value("workload", v);
    out.line(kv("formula workload", v));
    out.line("");
    let sigma_err = sigma_section(&mut out, cfg, &spec, v, &quad)?;
    out.line("");
    let reps = cfg.numeric.replications;
    run_header(&mut out, &opts, reps);
    let runs = replicate(&spec, reps, &opts)?;
    let w = workload_estimate(&runs, &opts)?;
    estimate_line(&mut out, "simulated workload", &w);
    out.plots.push(replication_plot(&runs));
    let z = w.z_score(v);
    let n = &cfg.numeric;
    let finest = n.sigmas.iter().max().copied().unwrap_or(0);
    let checks = [
        (format!("discretized workload at sigma {finest}"), "sigma_relative_error", sigma_err, n.sigma_tolerance),
        ("simulated workload".to_string(), "simulation_z_score", z, n.z_threshold),
    ];
    out.line("");
    out.line(format!("{:<44} {:>14} {:>12}  result", "check", "value", "limit"));
    let mut failed = Vec::new();
    for (label, key, value, limit) in checks {
        let pass = value <= limit;
        let verdict = if pass { "PASS" } else { "FAIL" };
        out.line(format!("{label:<44} {value:>14.6e} {limit:>12}  {verdict}"));
        out.row(key, Some(value), None, None, Some(limit), verdict);
        if !pass {
            failed.push(label);
        }
    }
    let status = if failed.is_empty() {
        Status::Ok
    } else {
        Status::Failed(format!("failed checks: {}", failed.join("; ")))
    };
    Ok(Outcome { artifacts: out, status })
}

pub fn cmd_optimize(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let quad = cfg.quadrature();
    let mut out = Artifacts::default();
    match &cfg.model {
        ModelConfig::Polling(_) => {
            Err(CliError::Config("optimize needs an fwlan or waste model".into()))
        }
        ModelConfig::Fwlan(f) => {
            let geo = f.geometry();
            let arch = f.architecture();
            let objective = cfg.objective();
            out.line(kv("model", "fwlan"));
            out.line(kv("architecture", format!("{arch:?}").to_lowercase()));
            out.line(kv("objective", format!("{objective:?}").to_lowercase()));
            let best = fwlan_optimize(&geo, objective, arch, &quad)?;
            let b = if objective == Objective::FirstMoment {
                best.clone()
            } else {
                fwlan_optimize(&geo, Objective::FirstMoment, arch, &quad)?
            };
            out.value("d_star", best.d_star);
            out.value("objective_at_d_star", best.value);
            out.value("d_star_bbar", b.d_star);
            out.value("half_d1", geo.d1 / 2.0);
            out.row("flat", None, None, None, None, if best.flat { "true" } else { "false" });
            out.line(kv("optimal d", best.d_star));
            out.line(kv("objective there", best.value));
            out.line(kv("d minimizing bbar", b.d_star));
            out.line(kv("D1 / 2", geo.d1 / 2.0));
            if best.flat {
                out.line("objective is flat over the grid");
            }
            let mut p = Plot::new("objective_curve", "Objective over the path parameter", "d", &["objective", "bbar"]);
            for ((d, v), (_, bb)) in best.curve.iter().zip(&b.curve) {
                p.table.push(vec![num(*d), opt(*v), opt(*bb)]);
            }
            out.plots.push(p);
            Ok(Outcome::ok(out))
        }
        ModelConfig::Waste(w) => {
            let ws = w.build()?;
            let o = &cfg.optimize;
            let best = waste_optimize(&ws.density, o.grid_points, o.grid_offset)?;
            out.line(kv("model", "waste"));
            out.line(kv("grid points", o.grid_points));
            out.value("x_star", best.x_star);
            out.value("x_minus_cdf_at_x_star", best.value);
            out.row("flat", None, None, None, None, if best.flat { "true" } else { "false" });
            for (i, m) in best.minimizers.iter().enumerate() {
                out.value(&format!("minimizer_{i}"), *m);
            }
            out.line(kv("optimal collection point", best.x_star));
            out.line(kv("all minimizers", format!("{:?}", best.minimizers)));
            if best.flat {
                out.line("objective is flat: every collection point is optimal");
            }
            if stable(ws.rho()) {
                let v = waste_workload(&ws.with_x_d(best.x_star), &quad)?;
                out.value("workload_at_x_star", v);
                out.line(kv("workload there", v));
            } else {
                out.line(kv("workload there", format!("unstable (rho = {})", ws.rho())));
            }
            let mut p = Plot::new("waste_objective", "x - F(x) over the collection point", "x_d", &["x_minus_cdf"]);
            for (x, g) in &best.curve {
                p.table.push(vec![num(*x), num(*g)]);
            }
            out.plots.push(p);
            Ok(Outcome::ok(out))
        }
    }
}

fn apply(cfg: &RunConfig, param: SweepParameter, value: f64) -> Result<RunConfig, CliError> {
    let mut c = cfg.clone();
    let wrong = |name: &str| Err(CliError::Config(format!("sweep parameter {name} does not apply to a {} model", cfg.model.kind())));
    match (&mut c.model, param) {
        (ModelConfig::Polling(p), SweepParameter::LambdaPerTime) => p.lambda_per_time = value,
        (ModelConfig::Polling(p), SweepParameter::SpeedLengthPerTime) => p.speed_length_per_time = value,
        (ModelConfig::Fwlan(f), SweepParameter::LambdaPerTime) => f.lambda_per_time = value,
        (ModelConfig::Fwlan(f), SweepParameter::SpeedLengthPerTime) => f.speed_length_per_time = value,
        (ModelConfig::Fwlan(f), SweepParameter::DLength) => f.d_length = value,
        (ModelConfig::Fwlan(f), SweepParameter::DBsLength) => f.d_bs_length = value,
        (ModelConfig::Waste(w), SweepParameter::LambdaPerTime) => w.lambda_per_time = value,
        (ModelConfig::Waste(w), SweepParameter::XDLength) => w.x_d_length = value,
        (_, p) => return wrong(&format!("{p:?}")),
    }
    Ok(c)
}

struct SweepPoint {
    rho: f64,
    workload: f64,
    bbar: Option<f64>,
}

fn sweep_point(cfg: &RunConfig, quad: &Quadrature) -> polling_core::Result<SweepPoint> {
    match &cfg.model {
        ModelConfig::Fwlan(f) => {
            let geo = f.geometry();
            let t = fwlan_terms(&geo, quad)?;
            let rho = 2.0 * geo.lambda * t.bbar + if f.architecture() == Architecture::Hybrid { geo.lambda * geo.b_bs() } else { 0.0 };
            let workload = fwlan_objective(&geo, Objective::Workload, f.architecture(), quad)?;
            Ok(SweepPoint { rho, workload, bbar: Some(t.bbar) })
        }
        ModelConfig::Waste(w) => {
            let ws = w.build()?;
            Ok(SweepPoint { rho: ws.rho(), workload: waste_workload(&ws, quad)?, bbar: None })
        }
        ModelConfig::Polling(p) => {
            let spec = p.build()?;
            let rho = total_load(&spec, quad)?;
            Ok(SweepPoint { rho, workload: workload_rrt(&spec, quad)?.total, bbar: None })
        }
    }
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let sweep = cfg.sweep.as_ref().ok_or_else(|| CliError::Config("sweep needs a sweep section".into()))?;
    if sweep.points == 0 || !sweep.from.is_finite() || !sweep.to.is_finite() || (sweep.points > 1 && sweep.from >= sweep.to) {
        return Err(CliError::Config(format!(
            "empty sweep range: {} points from {} to {}",
            sweep.points, sweep.from, sweep.to
        )));
    }
    let quad = cfg.quadrature();
    let values = sweep.values();
    let pname = serde_json::to_value(sweep.parameter).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    let is_fwlan = matches!(cfg.model, ModelConfig::Fwlan(_));
    let mut header = vec!["index", pname.as_str(), "rho", "workload"];
    if is_fwlan {
        header.extend(["bbar", "marker"]);
    }
    header.push("status");
    let mut table = Table::new(&header);
    let mut rows = Vec::new();
    for &x in &values {
        let point = apply(cfg, sweep.parameter, x)?;
        rows.push((x, sweep_point(&point, &quad)));
    }
    let argmin = |f: &dyn Fn(&SweepPoint) -> Option<f64>| -> Option<usize> {
        rows.iter()
            .enumerate()
            .filter_map(|(i, (_, r))| r.as_ref().ok().and_then(f).map(|v| (i, v)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|p| p.0)
    };
    let best_v = argmin(&|p| Some(p.workload));
    let best_b = argmin(&|p| p.bbar);
    let mut plot = Plot::new("sweep", "Workload along the sweep", &pname, &["rho", "workload"]);
    let mut out = Artifacts::default();
    out.line(kv("model", cfg.model.kind()));
    out.line(kv("swept parameter", &pname));
    out.line(kv("points", values.len()));
    let mut failures = 0;
    for (i, (x, r)) in rows.iter().enumerate() {
        let mut row = vec![i.to_string(), num(*x)];
        match r {
            Ok(p) => {
                row.extend([num(p.rho), num(p.workload)]);
                if is_fwlan {
                    let mut marks = Vec::new();
                    if Some(i) == best_v {
                        marks.push("d_star_v");
                    }
                    if Some(i) == best_b && sweep.parameter == SweepParameter::DLength {
                        marks.push("d_star_b");
                    }
                    if sweep.parameter != SweepParameter::DLength {
                        marks.clear();
                    }
                    row.extend([opt(p.bbar), marks.join(" ")]);
                }
                row.push("ok".into());
                plot.table.push(vec![num(*x), num(p.rho), num(p.workload)]);
            }
            Err(e) => {
                failures += 1;
                row.extend([String::new(), String::new()]);
                if is_fwlan {
                    row.extend([String::new(), String::new()]);
                }
                let status = match e {
                    Error::Instability { .. } => "unstable".to_string(),
                    other => format!("failed: {other}"),
                };
                row.push(status);
            }
        }
        out.line(format!("{:<34} {}", num(*x), row[2..].join("  ")));
        table.push(row);
    }
    if failures > 0 {
        out.line(format!("{failures} of {} points failed", values.len()));
    }
    out.results = table;
    out.plots.push(plot);
    Ok(Outcome::ok(out))
}
