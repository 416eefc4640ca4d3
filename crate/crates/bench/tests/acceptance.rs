//! Acceptance suite: ten numbered criteria covering the certificate
//! engine, the ergodic bounds, the empirical rates, and the known
//! non-convergent configuration. Each test prints one `PASS`/`FAIL` line
//! (visible with `cargo test --test acceptance -- --nocapture`) and fails
//! the build if its criterion does not hold at the stated tolerance.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{dvector, DMatrix, DVector};

use admm_bench::commands::{self, RateQuantity};
use admm_bench::config::{GammaSpec, InstanceSel, ModeName, RunConfig};
use mbadmm::block_vec::BlockVector;
use mbadmm::diagnostics::{self, BoundConstants, SharingCertificates};
use mbadmm::instances::{
    make_divergence_instance, make_qp_instance, make_sharing_instance, InstanceRecipe, SplitMix64,
};
use mbadmm::oracle::{solve_exact_qp, solve_small_nonsmooth, OracleSolution};
use mbadmm::problem::{BlockFunction, ProblemSpec};
use mbadmm::solver::{self, Mode, SolverConfig, Trace};

const SHARING_SEED: u64 = 7;
const SHARING_GAMMA: f64 = 2.0;

struct SharedRun {
    prob: ProblemSpec,
    trace: Trace,
    oracle: OracleSolution,
}

static SHARED: OnceLock<SharedRun> = OnceLock::new();

/// The long sharing run (N = 3, n_i = 5, p = 5, L = 1, gamma = 2) used by
/// criteria 2-5 and 7. Criterion 1 times its own fresh 5000-iteration run.
fn shared() -> &'static SharedRun {
    SHARED.get_or_init(|| {
        let prob = make_sharing_instance(3, 5, 5, SHARING_SEED).unwrap();
        let cfg = SolverConfig::new(SHARING_GAMMA, Mode::Scenario2)
            .with_max_iter(10_000)
            .with_inner_tol(1e-10)
            .with_stop_tol(None);
        let trace = solver::run(&prob, &cfg, None).unwrap();
        let oracle = solve_small_nonsmooth(&prob, 1e-9).unwrap();
        SharedRun {
            prob,
            trace,
            oracle,
        }
    })
}

fn report(n: usize, label: &str, failures: Vec<String>) {
    if failures.is_empty() {
        println!("acceptance criterion {n} ({label}): PASS");
    } else {
        println!("acceptance criterion {n} ({label}): FAIL");
        for line in &failures {
            println!("    {line}");
        }
        panic!("criterion {n} ({label}) failed with {} issue(s)", failures.len());
    }
}

#[test]
fn criterion_01_lemma_certificate_suite() {
    let mut failures = Vec::new();
    let started = Instant::now();

    let prob = make_sharing_instance(3, 5, 5, SHARING_SEED).unwrap();
    let cfg = SolverConfig::new(SHARING_GAMMA, Mode::Scenario2)
        .with_max_iter(5000)
        .with_inner_tol(1e-10)
        .with_stop_tol(None);
    let trace = solver::run(&prob, &cfg, None).unwrap();
    let certs = SharingCertificates::new(&prob, SHARING_GAMMA).unwrap();

    for k in 0..trace.len() {
        let w_k = trace.point(k);
        let w_k1 = trace.point(k + 1);
        let delta = &trace.records[k].delta;
        let records = [
            certs.sufficient_decrease(w_k, w_k1, delta, k).unwrap(),
            certs.dual_lipschitz(delta, k),
            certs.lower_bound(w_k1, k).unwrap(),
            certs.subgradient_bound(w_k, w_k1, delta, k).unwrap(),
        ];
        for record in records {
            if !record.pass && failures.len() < 5 {
                failures.push(format!(
                    "{} failed at k={k}: lhs={:e} rhs={:e} slack={:e} tol={:e}",
                    record.name, record.lhs, record.rhs, record.slack, record.tol
                ));
            }
        }
    }
    let elapsed = started.elapsed();
    if trace.len() != 5000 {
        failures.push(format!("expected 5000 iterations, ran {}", trace.len()));
    }
    if elapsed > Duration::from_secs(30) {
        failures.push(format!("runtime {elapsed:?} exceeded the 30 s budget"));
    }
    report(1, "lemma certificate suite", failures);
}

#[test]
fn criterion_02_dual_gradient_identity() {
    let mut failures = Vec::new();
    let run = shared();
    let last = run.prob.n_blocks() - 1;
    for k in 1..=5000usize {
        let pt = run.trace.point(k);
        let grad = run.prob.block(last).f.gradient(&pt.x[last]).unwrap();
        let gap = (&grad - &pt.lambda).norm();
        let bound = 1e-10 * (1.0 + pt.lambda.norm());
        if gap > bound && failures.len() < 5 {
            failures.push(format!("iteration {k}: gap {gap:e} exceeds {bound:e}"));
        }
    }
    report(2, "dual equals last-block gradient", failures);
}

#[test]
fn criterion_03_monotone_lagrangian() {
    let mut failures = Vec::new();
    let run = shared();
    let mut prev = diagnostics::augmented_lagrangian(
        &run.prob,
        &run.trace.initial.x,
        &run.trace.initial.lambda,
        SHARING_GAMMA,
    )
    .unwrap();
    for k in 1..=5000usize {
        let pt = run.trace.point(k);
        let cur =
            diagnostics::augmented_lagrangian(&run.prob, &pt.x, &pt.lambda, SHARING_GAMMA).unwrap();
        if cur > prev + 1e-8 * (1.0 + prev.abs()) && failures.len() < 5 {
            failures.push(format!("rose at k={k}: {prev} -> {cur}"));
        }
        prev = cur;
    }
    report(3, "monotone augmented Lagrangian", failures);
}

#[test]
fn criterion_04_sharing_ergodic_bound() {
    let mut failures = Vec::new();
    let run = shared();
    let certs = SharingCertificates::new(&run.prob, SHARING_GAMMA).unwrap();

    for &t in &[10usize, 100, 1000] {
        let constants = BoundConstants::measure(&certs, &run.oracle, &run.trace.records, t + 1);
        let record = diagnostics::sharing_bound_certificate(
            &run.prob,
            &certs,
            &run.trace,
            &run.oracle,
            t,
            &constants,
        )
        .unwrap();
        if !record.pass {
            failures.push(format!(
                "bound failed at t={t}: lhs={:e} rhs={:e}",
                record.lhs, record.rhs
            ));
        }
    }

    // Lower side at every horizon of the 5000-iteration prefix, via
    // running prefix sums of the iterates.
    let rho = run.oracle.lambda_star.norm() + 1.0;
    let mut sum = BlockVector::zeros(&run.prob.block_dims());
    for t in 0..5000usize {
        sum.axpy(1.0, &run.trace.points[t].x);
        let mean = sum.scale(1.0 / (t + 1) as f64);
        let gap = run.prob.objective(&mean).unwrap() - run.oracle.f_star
            + rho * run.prob.primal_residual(&mean).unwrap();
        if gap < -1e-8 && failures.len() < 5 {
            failures.push(format!("ergodic gap negative at t={t}: {gap:e}"));
        }
    }
    report(4, "sharing ergodic bound with measured constants", failures);
}

#[test]
fn criterion_05_sharing_rate() {
    let mut failures = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sharing_rate");
    let config = RunConfig {
        instance: InstanceSel::Recipe {
            recipe: InstanceRecipe {
                name: "sharing".into(),
                n_blocks: 3,
                dims: vec![5, 5, 5],
                p: 5,
                seed: SHARING_SEED,
                parameters: BTreeMap::new(),
            },
        },
        mode: ModeName::Scenario2,
        gamma: GammaSpec::Value(SHARING_GAMMA),
        epsilon: None,
        max_iter: 5000,
        inner_tol: 1e-10,
        seed: 0,
        output_dir: Some(out.clone()),
        certificates: vec![],
        stop_tol: Some(0.0),
        require_convergence: false,
        compute_oracle: true,
        record_states: false,
        eps_list: vec![],
        sweep_c: None,
        extra: BTreeMap::new(),
    };
    commands::cmd_run(&config).unwrap();
    let fit = commands::cmd_rate(&out, RateQuantity::ErgodicGap, (500, 5000)).unwrap();
    if !(fit.slope <= -0.8) {
        failures.push(format!(
            "ergodic gap slope {:.4} above -0.8 (r^2 = {:.4})",
            fit.slope, fit.r_squared
        ));
    }
    report(5, "sharing ergodic rate", failures);
}

#[test]
fn criterion_06_perturbed_bound_and_rate() {
    let mut failures = Vec::new();
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        instance: InstanceSel::Recipe {
            recipe: InstanceRecipe {
                name: "qp".into(),
                n_blocks: 3,
                dims: vec![2, 2, 2],
                p: 2,
                seed: 42,
                parameters: BTreeMap::new(),
            },
        },
        mode: ModeName::Perturbed,
        gamma: GammaSpec::default(),
        epsilon: Some(0.2),
        max_iter: 0,
        inner_tol: 1e-10,
        seed: 0,
        output_dir: Some(dir.path().join("sweep")),
        certificates: vec![],
        stop_tol: None,
        require_convergence: false,
        compute_oracle: false,
        record_states: false,
        eps_list: vec![0.2, 0.1, 0.05],
        sweep_c: Some(100.0),
        extra: BTreeMap::new(),
    };
    let artifacts = commands::cmd_sweep(&config).unwrap();
    for row in &artifacts.rows {
        let expected_t = (100.0 / (row.epsilon * row.epsilon)).ceil() as usize;
        if row.t != expected_t {
            failures.push(format!(
                "epsilon {} ran t={} instead of {expected_t}",
                row.epsilon, row.t
            ));
        }
        if !row.bound_pass {
            failures.push(format!(
                "ergodic bound failed at epsilon={} (lhs={:e} rhs={:e})",
                row.epsilon, row.bound_lhs, row.bound_rhs
            ));
        }
    }
    if !(artifacts.slope_obj >= 0.8) {
        failures.push(format!(
            "objective error slope {:.4} below 0.8",
            artifacts.slope_obj
        ));
    }
    if !(artifacts.slope_res >= 0.8) {
        failures.push(format!(
            "residual slope {:.4} below 0.8",
            artifacts.slope_res
        ));
    }
    let elapsed = started.elapsed();
    if elapsed > Duration::from_secs(300) {
        failures.push(format!("sweep took {elapsed:?}, over the 5 min budget"));
    }
    report(6, "perturbed ergodic bound and O(eps) fit", failures);
}

#[test]
fn criterion_07_finite_length_monitor() {
    let mut failures = Vec::new();
    let run = shared();
    let full = diagnostics::finite_length_monitor(&run.trace.records, 10_000);
    let prev = diagnostics::finite_length_monitor(&run.trace.records, 9_999);
    let increment = full - prev;
    if !(increment <= 1e-6) {
        failures.push(format!("increment at k=10^4 is {increment:e}"));
    }
    if !(full.is_finite() && full > 0.0) {
        failures.push(format!("accumulated length {full:e} is not a positive finite value"));
    }
    report(7, "finite-length monitor plateau", failures);
}

#[test]
fn criterion_08_oracle_equivalence() {
    let mut failures = Vec::new();
    let prob = make_qp_instance(2, &[2, 2], 2, 11, true).unwrap();
    let oracle = solve_exact_qp(&prob).unwrap();
    let cfg = SolverConfig::new(1.0, Mode::Plain)
        .with_max_iter(5000)
        .with_stop_tol(None);
    let trace = solver::run(&prob, &cfg, None).unwrap();
    let err = trace.final_state.x().sub(&oracle.u_star).norm();
    if !(err <= 1e-6) {
        failures.push(format!("final iterate error {err:e} above 1e-6"));
    }
    report(8, "two-block run matches the direct solve", failures);
}

#[test]
fn criterion_09_divergence_demonstration() {
    let mut failures = Vec::new();
    let prob = make_divergence_instance();
    let mut rng = SplitMix64::new(0xD1CE);
    let x0 = BlockVector::new(vec![
        dvector![rng.uniform(-1.0, 1.0)],
        dvector![rng.uniform(-1.0, 1.0)],
        dvector![rng.uniform(-1.0, 1.0)],
    ]);
    let l0 = DVector::from_fn(3, |_, _| rng.uniform(-1.0, 1.0));
    let cfg = SolverConfig::new(1.0, Mode::Plain)
        .with_max_iter(1000)
        .with_stop_tol(None);
    let trace = solver::run(&prob, &cfg, Some((x0, l0))).unwrap();
    let norm_at = |k: usize| {
        let pt = trace.point(k);
        (pt.x.norm().powi(2) + pt.lambda.norm_squared()).sqrt()
    };
    let (early, late) = (norm_at(10), norm_at(1000));
    if !(late > early) {
        failures.push(format!("orbit did not grow: {early:e} -> {late:e}"));
    }
    let (res_early, res_late) = (
        trace.records[9].primal_residual,
        trace.records[999].primal_residual,
    );
    if !(res_late > res_early) {
        failures.push(format!(
            "primal residual did not grow: {res_early:e} -> {res_late:e}"
        ));
    }
    report(9, "plain multi-block divergence witness", failures);
}

#[test]
fn criterion_10_algebraic_identities_and_gradients() {
    let mut failures = Vec::new();
    let mut rng = SplitMix64::new(0xACCE97);

    // Four-point inner-product identity, 1000 random quadruples.
    for trial in 0..1000 {
        let w: Vec<DVector<f64>> = (0..4).map(|_| rng.vector(6, -1.0, 1.0)).collect();
        let lhs = (&w[0] - &w[1]).dot(&(&w[2] - &w[3]));
        let rhs = 0.5 * ((&w[0] - &w[3]).norm_squared() - (&w[0] - &w[2]).norm_squared())
            + 0.5 * ((&w[2] - &w[1]).norm_squared() - (&w[3] - &w[1]).norm_squared());
        if (lhs - rhs).abs() > 1e-10 && failures.len() < 3 {
            failures.push(format!(
                "four-point identity off by {:e} on trial {trial}",
                (lhs - rhs).abs()
            ));
        }
    }
    // Three-point identity, 1000 random triples.
    for trial in 0..1000 {
        let w: Vec<DVector<f64>> = (0..3).map(|_| rng.vector(6, -1.0, 1.0)).collect();
        let lhs = (&w[0] - &w[1]).dot(&(&w[2] - &w[0]));
        let rhs = 0.5
            * ((&w[1] - &w[2]).norm_squared()
                - (&w[0] - &w[1]).norm_squared()
                - (&w[0] - &w[2]).norm_squared());
        if (lhs - rhs).abs() > 1e-10 && failures.len() < 3 {
            failures.push(format!(
                "three-point identity off by {:e} on trial {trial}",
                (lhs - rhs).abs()
            ));
        }
    }

    // Central differences (step 1e-5) against the exact gradients, 100
    // random points per differentiable variant.
    let variants: Vec<BlockFunction> = vec![
        BlockFunction::quadratic(
            DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.0, 0.4, 1.5, -0.2, 0.0, -0.2, 0.75]),
            dvector![0.3, -0.1, 0.9],
            0.2,
        ),
        BlockFunction::squared_distance(dvector![0.5, -1.0, 0.25], 1.3),
        BlockFunction::zero(3),
    ];
    let h = 1e-5;
    for f in &variants {
        for _ in 0..100 {
            let x = rng.vector(3, -2.0, 2.0);
            let grad = f.gradient(&x).unwrap();
            let mut fd = DVector::zeros(3);
            for j in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                fd[j] = (f.evaluate(&xp).unwrap() - f.evaluate(&xm).unwrap()) / (2.0 * h);
            }
            let err = (&grad - &fd).norm();
            if err > 1e-6 * (1.0 + grad.norm()) && failures.len() < 6 {
                failures.push(format!("gradient mismatch {err:e} for {:?}", f.kind));
            }
        }
    }
    report(10, "inner-product identities and gradient checks", failures);
}
