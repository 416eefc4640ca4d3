//! The five operations behind the CLI: run, sweep, rate, certify, gen.
//! Each returns structured artifacts so tests can drive them in-process;
//! the binary maps results to exit codes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use mbadmm::block_vec::BlockVector;
use mbadmm::diagnostics::{
    self, BoundConstants, CertificateRecord, SharingCertificates,
};
use mbadmm::instances::{InstanceRecipe, SplitMix64};
use mbadmm::io;
use mbadmm::oracle::{self, OracleError, OracleSolution};
use mbadmm::problem::ProblemSpec;
use mbadmm::solver::{self, IterationDelta, IterationRecord, Mode, SolverConfig, Trace, TracePoint};

use crate::config::{ModeName, RunConfig};
use crate::output::{
    self, CertificateSummary, OracleSummary, RunSummary, TraceRow,
};
use crate::rate::{fit_loglog, least_squares_slope, RateReport};
use crate::{config_err, solver_err, CliError};

/// Bound-certificate evaluation times within a run of length `len`:
/// powers of ten up to the horizon plus the final time.
fn bound_times(len: usize) -> Vec<usize> {
    let mut times = Vec::new();
    let mut t = 10usize;
    while t + 1 < len {
        times.push(t);
        t *= 10;
    }
    if len > 0 {
        times.push(len - 1);
    }
    times.dedup();
    times
}

fn seeded_start(prob: &ProblemSpec, seed: u64) -> Option<(BlockVector, DVector<f64>)> {
    if seed == 0 {
        return None;
    }
    let mut rng = SplitMix64::new(seed);
    let parts = prob
        .block_dims()
        .iter()
        .map(|&n| rng.vector(n, -1.0, 1.0))
        .collect();
    let lambda = rng.vector(prob.row_dim(), -1.0, 1.0);
    Some((BlockVector::new(parts), lambda))
}

fn map_oracle_err(e: OracleError) -> CliError {
    match e {
        OracleError::Unsupported(_) | OracleError::AmbiguousPattern { .. } => config_err(e),
        other => solver_err(other),
    }
}

/// Stored oracle if the instance file carried one, otherwise a fresh solve
/// (direct first-order system, then the small nonsmooth solver).
fn obtain_oracle(
    prob: &ProblemSpec,
    stored: Option<OracleSolution>,
) -> Result<OracleSolution, CliError> {
    if let Some(sol) = stored {
        return Ok(sol);
    }
    match oracle::solve_exact_qp(prob) {
        Ok(sol) => Ok(sol),
        Err(OracleError::Unsupported(_)) | Err(OracleError::SingularKkt) => {
            oracle::solve_small_nonsmooth(prob, 1e-9).map_err(map_oracle_err)
        }
        Err(e) => Err(map_oracle_err(e)),
    }
}

/// Ergodic error series against the oracle: `(t, gap, |f - f*|, residual)`
/// for every horizon the trace supports, via running prefix sums.
fn ergodic_series(
    prob: &ProblemSpec,
    trace: &Trace,
    sol: &OracleSolution,
) -> Result<Vec<(usize, f64, f64, f64)>, CliError> {
    let rho = sol.lambda_star.norm() + 1.0;
    let mut sum = BlockVector::zeros(&prob.block_dims());
    let mut rows = Vec::with_capacity(trace.points.len());
    for (t, pt) in trace.points.iter().enumerate() {
        sum.axpy(1.0, &pt.x);
        let mean = sum.scale(1.0 / (t + 1) as f64);
        let value = prob.objective(&mean).map_err(solver_err)?;
        let res = prob.primal_residual(&mean).map_err(solver_err)?;
        let gap = value - sol.f_star + rho * res;
        rows.push((t, gap, (value - sol.f_star).abs(), res));
    }
    Ok(rows)
}

struct CertEvaluator<'a> {
    prob: &'a ProblemSpec,
    gamma: f64,
    sharing: Option<SharingCertificates<'a>>,
    /// Whether the starting dual already equals the last block's gradient.
    /// The decrease and dual-gap certificates presuppose that identity at
    /// `w^k`; sweeps establish it from the first iteration on, so only the
    /// transition out of an arbitrary start may lack it.
    start_identity: bool,
}

impl<'a> CertEvaluator<'a> {
    fn new(
        prob: &'a ProblemSpec,
        gamma: f64,
        names: &[String],
        start: &TracePoint,
    ) -> Result<Self, CliError> {
        let needs_sharing = names.iter().any(|n| n != "dual_exactness");
        let sharing = if needs_sharing {
            Some(SharingCertificates::new(prob, gamma).map_err(config_err)?)
        } else {
            None
        };
        let start_identity = sharing
            .as_ref()
            .map(|ctx| ctx.dual_gradient_identity(start, 0).pass)
            .unwrap_or(false);
        Ok(Self {
            prob,
            gamma,
            sharing,
            start_identity,
        })
    }

    /// Certificates whose hypothesis references the identity at `w^k`.
    fn needs_start_identity(name: &str) -> bool {
        matches!(
            name,
            "dual_lipschitz" | "sufficient_decrease" | "monotone_lagrangian"
        )
    }

    fn applicable(&self, name: &str, k: usize) -> bool {
        k > 0 || self.start_identity || !Self::needs_start_identity(name)
    }

    fn evaluate(
        &self,
        name: &str,
        w_k: &TracePoint,
        w_k1: &TracePoint,
        delta: &IterationDelta,
        k: usize,
    ) -> Result<CertificateRecord, CliError> {
        let ctx = || self.sharing.as_ref().expect("validated sharing context");
        let record = match name {
            "dual_exactness" => {
                diagnostics::dual_exactness_certificate(self.prob, self.gamma, w_k, w_k1, k)
                    .map_err(solver_err)?
            }
            "dual_gradient" => ctx().dual_gradient_identity(w_k1, k),
            "sufficient_decrease" => ctx()
                .sufficient_decrease(w_k, w_k1, delta, k)
                .map_err(solver_err)?,
            "dual_lipschitz" => ctx().dual_lipschitz(delta, k),
            "lower_bound" => ctx().lower_bound(w_k1, k).map_err(solver_err)?,
            "subgradient_bound" => ctx()
                .subgradient_bound(w_k, w_k1, delta, k)
                .map_err(solver_err)?,
            other => return Err(config_err(format!("unknown certificate {other:?}"))),
        };
        Ok(record)
    }
}

fn tally(records: &mut BTreeMap<String, CertificateSummary>, record: &CertificateRecord) {
    let entry = records
        .entry(record.name.to_string())
        .or_insert(CertificateSummary {
            evaluated: 0,
            failures: 0,
            worst_slack: f64::INFINITY,
            first_failure: None,
        });
    entry.evaluated += 1;
    entry.worst_slack = entry.worst_slack.min(record.slack);
    if !record.pass {
        entry.failures += 1;
        entry.first_failure.get_or_insert(record.iteration);
    }
}

pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub summary: RunSummary,
    pub certificate_failures: usize,
    pub converged: bool,
    pub require_convergence: bool,
}

impl RunArtifacts {
    pub fn exit_code(&self) -> i32 {
        if self.certificate_failures > 0 || (self.require_convergence && !self.converged) {
            3
        } else {
            0
        }
    }
}

/// Executes a configured run: solve, evaluate requested certificates,
/// write `trace.csv`, `states.csv`, optional `ergodic.csv`, `summary.json`.
pub fn cmd_run(config: &RunConfig) -> Result<RunArtifacts, CliError> {
    let out_dir = config.output_dir()?;
    let (prob, stored_oracle) = config.load_instance()?;
    let solver_cfg = config.solver_config(&prob)?;
    let initial = seeded_start(&prob, config.seed);

    let trace = solver::run(&prob, &solver_cfg, initial)
        .map_err(|e| solver_err(format!("{e} (trace kept {} iterations)", e.partial.len())))?;

    let oracle_sol = match (&stored_oracle, config.compute_oracle) {
        (Some(sol), _) => Some(sol.clone()),
        (None, true) => Some(obtain_oracle(&prob, None)?),
        (None, false) => None,
    };

    let evaluator =
        CertEvaluator::new(&prob, solver_cfg.gamma, &config.certificates, &trace.initial)?;
    let mut cert_totals = BTreeMap::new();
    let mut failures = 0usize;
    let mut rows = Vec::with_capacity(trace.len());
    for k in 0..trace.len() {
        let w_k = trace.point(k);
        let w_k1 = trace.point(k + 1);
        let record = &trace.records[k];
        let mut certs = Vec::with_capacity(config.certificates.len());
        for name in &config.certificates {
            if !evaluator.applicable(name, k) {
                certs.push((true, f64::NAN));
                continue;
            }
            let cert = evaluator.evaluate(name, w_k, w_k1, &record.delta, k)?;
            if !cert.pass {
                failures += 1;
            }
            tally(&mut cert_totals, &cert);
            certs.push((cert.pass, cert.slack));
        }
        rows.push(TraceRow {
            k: k + 1,
            f_val: prob.objective(&w_k1.x).map_err(solver_err)?,
            aug_lag: diagnostics::augmented_lagrangian(&prob, &w_k1.x, &w_k1.lambda, solver_cfg.gamma)
                .map_err(solver_err)?,
            primal_res: record.primal_residual,
            max_image_diff: record.delta.max_image_diff(),
            x_last_diff: record.delta.x_last_diff,
            lambda_diff: record.delta.lambda_diff,
            kkt_res: diagnostics::kkt_residual(&prob, &w_k1.x, &w_k1.lambda).map_err(solver_err)?,
            certs,
        });
    }

    output::write_trace_csv(&out_dir.join("trace.csv"), &config.certificates, &rows)?;
    if config.record_states {
        output::write_states_csv(&out_dir.join("states.csv"), &prob, &trace)?;
    }

    let mut ergodic = None;
    if let Some(sol) = &oracle_sol {
        let series = ergodic_series(&prob, &trace, sol)?;
        output::write_ergodic_csv(&out_dir.join("ergodic.csv"), &series)?;
        ergodic = series.last().map(|&(_, _, obj_err, res)| (obj_err, res));
    }

    let effective_tol = match config.stop_tol {
        Some(v) if v > 0.0 => v,
        _ => 1e-8,
    };
    let converged = trace.stopped_at.is_some()
        || trace.records.last().is_some_and(|r| {
            r.primal_residual
                .max(r.delta.max_image_diff())
                .max(r.delta.lambda_diff)
                <= effective_tol
        });

    let final_pt = trace.point(trace.len());
    let summary = RunSummary {
        mode: config_mode_name(config.mode).to_string(),
        gamma: solver_cfg.gamma,
        iterations: trace.len(),
        stopped_at: trace.stopped_at,
        converged,
        final_objective: prob.objective(&final_pt.x).map_err(solver_err)?,
        final_primal_residual: trace
            .records
            .last()
            .map(|r| r.primal_residual)
            .unwrap_or_else(|| prob.primal_residual(&final_pt.x).unwrap_or(f64::NAN)),
        final_kkt_residual: diagnostics::kkt_residual(&prob, &final_pt.x, &final_pt.lambda)
            .map_err(solver_err)?,
        total_inner_iterations: trace.records.iter().map(|r| r.inner_iterations).sum(),
        ergodic_objective: ergodic.map(|(obj_err, _)| obj_err),
        ergodic_residual: ergodic.map(|(_, res)| res),
        certificates: cert_totals,
        oracle: oracle_sol.as_ref().map(oracle_summary),
    };
    output::write_json(&out_dir.join("summary.json"), &summary)?;

    Ok(RunArtifacts {
        out_dir,
        summary,
        certificate_failures: failures,
        converged,
        require_convergence: config.require_convergence,
    })
}

fn config_mode_name(mode: ModeName) -> &'static str {
    match mode {
        ModeName::Plain => "plain",
        ModeName::Perturbed => "perturbed",
        ModeName::Scenario2 => "scenario2",
    }
}

fn oracle_summary(sol: &OracleSolution) -> OracleSummary {
    OracleSummary {
        f_star: sol.f_star,
        lambda_norm: sol.lambda_star.norm(),
        method: format!("{:?}", sol.method),
        kkt_residual: sol.certified_kkt_residual,
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub gamma: f64,
    pub t: usize,
    pub err_obj: f64,
    pub err_res: f64,
    pub bound_lhs: f64,
    pub bound_rhs: f64,
    pub bound_pass: bool,
}

#[derive(Debug, serde::Serialize)]
pub struct SweepArtifacts {
    pub rows: Vec<SweepRow>,
    pub slope_obj: f64,
    pub slope_res: f64,
    pub all_bounds_pass: bool,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl SweepArtifacts {
    pub fn exit_code(&self) -> i32 {
        if self.all_bounds_pass {
            0
        } else {
            3
        }
    }
}

/// Perturbation-scale sweep: for each `epsilon` set `gamma = epsilon`,
/// run `t = ceil(c / epsilon^2)` iterations, record ergodic errors against
/// the oracle and the ergodic bound certificate at the final horizon, and
/// fit `log err` against `log epsilon`.
pub fn cmd_sweep(config: &RunConfig) -> Result<SweepArtifacts, CliError> {
    if config.mode != ModeName::Perturbed {
        return Err(config_err("sweep requires perturbed mode"));
    }
    if config.eps_list.is_empty() {
        return Err(config_err("sweep needs a nonempty eps_list"));
    }
    let out_dir = config.output_dir()?;
    let (prob, stored_oracle) = config.load_instance()?;
    let oracle_sol = obtain_oracle(&prob, stored_oracle)?;
    let c = config.sweep_c.unwrap_or(100.0);
    if !(c > 0.0) {
        return Err(config_err(format!("sweep_c must be positive, got {c}")));
    }

    let mut rows = Vec::with_capacity(config.eps_list.len());
    for &epsilon in &config.eps_list {
        if !(epsilon > 0.0) {
            return Err(config_err(format!("epsilon must be positive, got {epsilon}")));
        }
        let t = (c / (epsilon * epsilon)).ceil() as usize;
        let cfg = SolverConfig::new(epsilon, Mode::Perturbed { epsilon })
            .with_max_iter(t + 1)
            .with_inner_tol(config.inner_tol)
            .with_stop_tol(None);
        cfg.validate(&prob).map_err(config_err)?;
        let trace = solver::run(&prob, &cfg, seeded_start(&prob, config.seed))
            .map_err(|e| solver_err(e.to_string()))?;
        let run_cfg = {
            let mut c = cfg.clone();
            c.anchor = Some(trace.initial.x.clone());
            c
        };
        let (value, res) = diagnostics::ergodic_objective_and_residual(&prob, &trace, t)
            .map_err(solver_err)?;
        let bound =
            diagnostics::perturbed_bound_certificate(&prob, &run_cfg, &trace, &oracle_sol, t)
                .map_err(solver_err)?;
        rows.push(SweepRow {
            epsilon,
            gamma: epsilon,
            t,
            err_obj: (value - oracle_sol.f_star).abs(),
            err_res: res,
            bound_lhs: bound.lhs,
            bound_rhs: bound.rhs,
            bound_pass: bound.pass,
        });
    }

    let fit = |pick: fn(&SweepRow) -> f64| {
        let xs: Vec<f64> = rows.iter().map(|r| r.epsilon.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| pick(r).max(f64::MIN_POSITIVE).ln()).collect();
        least_squares_slope(&xs, &ys).0
    };
    let slope_obj = fit(|r| r.err_obj);
    let slope_res = fit(|r| r.err_res);
    let all_bounds_pass = rows.iter().all(|r| r.bound_pass);

    let mut csv = String::from("epsilon,gamma,t,err_obj,err_res,bound_lhs,bound_rhs,bound_pass\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            output::fmt17(r.epsilon),
            output::fmt17(r.gamma),
            r.t,
            output::fmt17(r.err_obj),
            output::fmt17(r.err_res),
            output::fmt17(r.bound_lhs),
            output::fmt17(r.bound_rhs),
            u8::from(r.bound_pass)
        ));
    }
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| config_err(format!("cannot create {}: {e}", out_dir.display())))?;
    std::fs::write(out_dir.join("sweep.csv"), csv)
        .map_err(|e| config_err(format!("cannot write sweep.csv: {e}")))?;

    let artifacts = SweepArtifacts {
        rows,
        slope_obj,
        slope_res,
        all_bounds_pass,
        out_dir: out_dir.clone(),
    };
    output::write_json(&out_dir.join("sweep_summary.json"), &artifacts)?;
    for r in &artifacts.rows {
        eprintln!(
            "eps={:<8} t={:<7} err_obj={:.3e} err_res={:.3e} bound_pass={}",
            r.epsilon, r.t, r.err_obj, r.err_res, r.bound_pass
        );
    }
    eprintln!("slopes: err_obj {slope_obj:.3}, err_res {slope_res:.3}");
    Ok(artifacts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateQuantity {
    ErgodicGap,
    PrimalRes,
    AugLagGap,
}

impl std::str::FromStr for RateQuantity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ergodic_gap" => Ok(RateQuantity::ErgodicGap),
            "primal_res" => Ok(RateQuantity::PrimalRes),
            "aug_lag_gap" => Ok(RateQuantity::AugLagGap),
            other => Err(format!(
                "unknown quantity {other:?} (ergodic_gap | primal_res | aug_lag_gap)"
            )),
        }
    }
}

/// Log-log slope of a traced quantity over an iteration window. `trace`
/// may be a run output directory or a direct CSV path.
pub fn cmd_rate(
    trace: &Path,
    quantity: RateQuantity,
    window: (usize, usize),
) -> Result<RateReport, CliError> {
    let (file, column): (PathBuf, &str) = if trace.is_dir() {
        match quantity {
            RateQuantity::ErgodicGap => (trace.join("ergodic.csv"), "ergodic_gap"),
            RateQuantity::PrimalRes => (trace.join("trace.csv"), "primal_res"),
            RateQuantity::AugLagGap => (trace.join("trace.csv"), "aug_lag"),
        }
    } else {
        let col = match quantity {
            RateQuantity::ErgodicGap => "ergodic_gap",
            RateQuantity::PrimalRes => "primal_res",
            RateQuantity::AugLagGap => "aug_lag",
        };
        (trace.to_path_buf(), col)
    };
    let mut series = output::read_csv_column(&file, column)?;
    if quantity == RateQuantity::AugLagGap {
        // Gap against the empirical infimum of the Lagrangian trace.
        let floor = series
            .iter()
            .map(|&(_, v)| v)
            .fold(f64::INFINITY, f64::min);
        for (_, v) in series.iter_mut() {
            *v -= floor;
        }
    }
    if window.0 >= window.1 {
        return Err(config_err(format!(
            "window must satisfy lo < hi, got [{}, {}]",
            window.0, window.1
        )));
    }
    fit_loglog(&series, window.0, window.1).map_err(config_err)
}

#[derive(Debug, serde::Serialize)]
pub struct BoundRecord {
    pub name: String,
    pub t: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

#[derive(Debug, serde::Serialize)]
pub struct CertifyReport {
    pub mode: String,
    pub gamma: f64,
    pub iterations: usize,
    pub per_iteration: BTreeMap<String, CertificateSummary>,
    pub bounds: Vec<BoundRecord>,
    pub total_failures: usize,
    pub oracle: OracleSummary,
}

pub struct CertifyArtifacts {
    pub out_dir: PathBuf,
    pub report: CertifyReport,
}

impl CertifyArtifacts {
    pub fn exit_code(&self) -> i32 {
        if self.report.total_failures > 0 {
            3
        } else {
            0
        }
    }
}

/// Rebuilds a trace from recorded snapshots (for replay verification).
fn trace_from_points(
    prob: &ProblemSpec,
    mut points: Vec<TracePoint>,
) -> Result<Trace, CliError> {
    let initial = points.remove(0);
    let mut records = Vec::with_capacity(points.len());
    let mut prev = &initial;
    for pt in &points {
        let image_diffs: Vec<f64> = prob
            .blocks()
            .iter()
            .enumerate()
            .map(|(i, b)| (&b.coupling * &prev.x[i] - &b.coupling * &pt.x[i]).norm())
            .collect();
        let last = prob.n_blocks() - 1;
        records.push(IterationRecord {
            delta: IterationDelta {
                image_diffs,
                x_last_diff: (&prev.x[last] - &pt.x[last]).norm(),
                lambda_diff: (&prev.lambda - &pt.lambda).norm(),
            },
            primal_residual: prob.primal_residual(&pt.x).map_err(solver_err)?,
            inner_iterations: 0,
        });
        prev = pt;
    }
    let last_point = points.last().cloned().unwrap_or_else(|| initial.clone());
    let final_state = solver::IterateState::new(prob, last_point.x, last_point.lambda)
        .map_err(solver_err)?;
    Ok(Trace {
        initial,
        points,
        records,
        final_state,
        stopped_at: None,
    })
}

/// Runs (or replays) and evaluates the full certificate suite for the
/// configured mode, including the ergodic bound certificates at powers of
/// ten, then writes `certificate_report.json`.
pub fn cmd_certify(config: &RunConfig, replay: Option<&Path>) -> Result<CertifyArtifacts, CliError> {
    let out_dir = config.output_dir()?;
    let (prob, stored_oracle) = config.load_instance()?;
    let solver_cfg = config.solver_config(&prob)?;
    let oracle_sol = obtain_oracle(&prob, stored_oracle)?;

    let trace = match replay {
        Some(path) => trace_from_points(&prob, output::read_states_csv(path, &prob)?)?,
        None => solver::run(&prob, &solver_cfg, seeded_start(&prob, config.seed))
            .map_err(|e| solver_err(e.to_string()))?,
    };
    if trace.is_empty() {
        return Err(config_err("nothing to certify: trace holds no iterations"));
    }

    // Per-iteration suite by mode.
    let mut names: Vec<String> = vec!["dual_exactness".into()];
    let sharing = matches!(solver_cfg.mode, Mode::Scenario2);
    if sharing {
        names.extend(
            [
                "dual_gradient",
                "sufficient_decrease",
                "dual_lipschitz",
                "lower_bound",
                "subgradient_bound",
            ]
            .map(String::from),
        );
    }
    let evaluator = CertEvaluator::new(&prob, solver_cfg.gamma, &names, &trace.initial)?;
    let mut per_iteration = BTreeMap::new();
    let mut failures = 0usize;
    for k in 0..trace.len() {
        let w_k = trace.point(k);
        let w_k1 = trace.point(k + 1);
        let delta = &trace.records[k].delta;
        for name in &names {
            if !evaluator.applicable(name, k) {
                continue;
            }
            let record = evaluator.evaluate(name, w_k, w_k1, delta, k)?;
            if !record.pass {
                failures += 1;
            }
            tally(&mut per_iteration, &record);
        }
        if sharing && evaluator.applicable("monotone_lagrangian", k) {
            // Monotone augmented Lagrangian as its own certificate.
            let before =
                diagnostics::augmented_lagrangian(&prob, &w_k.x, &w_k.lambda, solver_cfg.gamma)
                    .map_err(solver_err)?;
            let after =
                diagnostics::augmented_lagrangian(&prob, &w_k1.x, &w_k1.lambda, solver_cfg.gamma)
                    .map_err(solver_err)?;
            let record = CertificateRecord::evaluate(
                "monotone_lagrangian",
                after,
                before,
                1e-8 * (1.0 + before.abs()),
                k,
            );
            if !record.pass {
                failures += 1;
            }
            tally(&mut per_iteration, &record);
        }
    }

    // Ergodic bound certificates at the standard horizons.
    let mut bounds = Vec::new();
    match solver_cfg.mode {
        Mode::Scenario2 => {
            let certs = SharingCertificates::new(&prob, solver_cfg.gamma).map_err(config_err)?;
            for t in bound_times(trace.len()) {
                let constants =
                    BoundConstants::measure(&certs, &oracle_sol, &trace.records, t + 1);
                let record = diagnostics::sharing_bound_certificate(
                    &prob,
                    &certs,
                    &trace,
                    &oracle_sol,
                    t,
                    &constants,
                )
                .map_err(solver_err)?;
                if !record.pass {
                    failures += 1;
                }
                bounds.push(BoundRecord {
                    name: record.name.to_string(),
                    t,
                    lhs: record.lhs,
                    rhs: record.rhs,
                    slack: record.slack,
                    pass: record.pass,
                });
            }
        }
        Mode::Perturbed { .. } => {
            let mut run_cfg = solver_cfg.clone();
            run_cfg.anchor = Some(trace.initial.x.clone());
            for t in bound_times(trace.len()) {
                let record = diagnostics::perturbed_bound_certificate(
                    &prob,
                    &run_cfg,
                    &trace,
                    &oracle_sol,
                    t,
                )
                .map_err(solver_err)?;
                if !record.pass {
                    failures += 1;
                }
                bounds.push(BoundRecord {
                    name: record.name.to_string(),
                    t,
                    lhs: record.lhs,
                    rhs: record.rhs,
                    slack: record.slack,
                    pass: record.pass,
                });
            }
        }
        Mode::Plain => {}
    }

    let report = CertifyReport {
        mode: config_mode_name(config.mode).to_string(),
        gamma: solver_cfg.gamma,
        iterations: trace.len(),
        per_iteration,
        bounds,
        total_failures: failures,
        oracle: oracle_summary(&oracle_sol),
    };
    output::write_json(&out_dir.join("certificate_report.json"), &report)?;
    Ok(CertifyArtifacts { out_dir, report })
}

/// Generates an instance file from a recipe, optionally embedding a
/// reference solution.
pub fn cmd_gen(
    recipe: &InstanceRecipe,
    out_path: &Path,
    with_oracle: bool,
) -> Result<(), CliError> {
    let prob = recipe.build().map_err(config_err)?;
    let oracle_sol = if with_oracle {
        Some(obtain_oracle(&prob, None)?)
    } else {
        None
    };
    io::save_problem(out_path, &prob, oracle_sol.as_ref()).map_err(config_err)?;
    eprintln!(
        "wrote {} ({} blocks, p = {}{})",
        out_path.display(),
        prob.n_blocks(),
        prob.row_dim(),
        if with_oracle { ", oracle embedded" } else { "" }
    );
    Ok(())
}
