//! Augmented Lagrangian, KKT residuals, and the per-iteration certificate
//! engine.
//!
//! A certificate is one numerically evaluated inequality: a left side, a
//! right side, their slack, and a pass flag at a stated tolerance. The
//! sharing-structure suite checks, from a recorded trace alone, that
//!
//! - the dual step is the exact gradient of the last block,
//! - dual successive differences are controlled by primal ones,
//! - the augmented Lagrangian decreases by a computable quadratic rate,
//! - it stays above a computable feasibility-corrected lower bound,
//! - some subgradient of it shrinks at the speed of the iterate gaps,
//!
//! and the ergodic bound certificates compare objective and feasibility
//! error of running averages against closed-form `O(1/t)` envelopes built
//! from an exact oracle solution.

use nalgebra::DVector;
use thiserror::Error;

use crate::block_vec::BlockVector;
use crate::linalg;
use crate::oracle::OracleSolution;
use crate::problem::{ProblemError, ProblemSpec};
use crate::solver::{compute_mu, IterationDelta, IterationRecord, Mode, SolverConfig, Trace, TracePoint};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("certificate requires a sharing-structure context: {0}")]
    InvalidContext(String),
    #[error("trace too short: need {need} recorded iterates, have {have}")]
    TraceTooShort { need: usize, have: usize },
    #[error("certificate requires a perturbed-mode config")]
    NotPerturbed,
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Relative-absolute hybrid default: bounds contain differences of large
/// near-equal Lagrangian values, so the tolerance tracks the right side.
pub fn default_tolerance(rhs: f64) -> f64 {
    1e-8 * (1.0 + rhs.abs())
}

/// One evaluated inequality `lhs <= rhs` with slack `rhs - lhs`.
#[derive(Debug, Clone)]
pub struct CertificateRecord {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub tol: f64,
    pub pass: bool,
    pub iteration: usize,
}

impl CertificateRecord {
    pub fn evaluate(name: &'static str, lhs: f64, rhs: f64, tol: f64, iteration: usize) -> Self {
        let slack = rhs - lhs;
        Self {
            name,
            lhs,
            rhs,
            slack,
            tol,
            pass: slack >= -tol,
            iteration,
        }
    }

    fn also_require(mut self, condition: bool) -> Self {
        self.pass = self.pass && condition;
        self
    }
}

/// `sum_i f_i(x_i) - <lambda, sum_i A_i x_i - b> + (gamma/2) ||sum_i A_i x_i - b||^2`.
/// Indicator contributions are excluded; the solver keeps points feasible.
pub fn augmented_lagrangian(
    prob: &ProblemSpec,
    u: &BlockVector,
    lambda: &DVector<f64>,
    gamma: f64,
) -> Result<f64, ProblemError> {
    if lambda.len() != prob.row_dim() {
        return Err(ProblemError::DimensionMismatch {
            context: "augmented lagrangian dual",
            expected: prob.row_dim(),
            actual: lambda.len(),
        });
    }
    let residual = prob.total_image(u)? - prob.rhs();
    Ok(prob.objective(u)? - lambda.dot(&residual) + 0.5 * gamma * residual.norm_squared())
}

/// Max of the per-block projected stationarity residuals and the primal
/// residual. Stationarity for block `i` is measured as
/// `|| x_i - P_{X_i}(x_i - (g_i(x_i) - A_i' lambda)) ||` with `g_i` the
/// minimal-norm subgradient selection.
pub fn kkt_residual(
    prob: &ProblemSpec,
    u: &BlockVector,
    lambda: &DVector<f64>,
) -> Result<f64, ProblemError> {
    let mut worst: f64 = prob.primal_residual(u)?;
    for (block, x) in prob.blocks().iter().zip(u.iter()) {
        let pull = block.coupling.transpose() * lambda;
        let g = block.f.min_norm_subgradient(x, &pull);
        let step = x - (g - pull);
        let projected = block.set.project_unchecked(&step);
        worst = worst.max((x - projected).norm());
    }
    Ok(worst)
}

/// Augmented Lagrangian along a recorded trace, `w^0..w^K`.
pub fn lagrangian_series(
    prob: &ProblemSpec,
    trace: &Trace,
    gamma: f64,
) -> Result<Vec<f64>, ProblemError> {
    let mut out = Vec::with_capacity(trace.len() + 1);
    for k in 0..=trace.len() {
        let pt = trace.point(k);
        out.push(augmented_lagrangian(prob, &pt.x, &pt.lambda, gamma)?);
    }
    Ok(out)
}

/// `|| lambda^{k+1} - lambda^k + gamma (sum_i A_i x_i^{k+1} - b) ||` as a
/// certificate with zero right side; catches tampered or drifted traces.
pub fn dual_exactness_certificate(
    prob: &ProblemSpec,
    gamma: f64,
    w_k: &TracePoint,
    w_k1: &TracePoint,
    iteration: usize,
) -> Result<CertificateRecord, ProblemError> {
    let residual = prob.total_image(&w_k1.x)? - prob.rhs();
    let gap = (&w_k1.lambda - &w_k.lambda + residual * gamma).norm();
    let tol = 1e-12 * (1.0 + w_k.lambda.norm());
    Ok(CertificateRecord::evaluate(
        "dual_exactness",
        gap,
        0.0,
        tol,
        iteration,
    ))
}

// ---------------------------------------------------------------------------
// Sharing-structure certificate suite
// ---------------------------------------------------------------------------

/// Context for the sharing-structure certificates: an eligible problem and a
/// penalty above the curvature band `sqrt(2) L`. Construction fails outside
/// that regime, which is what makes the per-iteration inequalities valid.
#[derive(Debug)]
pub struct SharingCertificates<'a> {
    prob: &'a ProblemSpec,
    gamma: f64,
    lipschitz: f64,
    m_bound: f64,
}

impl<'a> SharingCertificates<'a> {
    pub fn new(prob: &'a ProblemSpec, gamma: f64) -> Result<Self, DiagnosticsError> {
        if !prob.scenario2_eligible() {
            return Err(DiagnosticsError::InvalidContext(
                "problem lacks the sharing structure".into(),
            ));
        }
        let lipschitz = prob.last_block_lipschitz().unwrap_or(0.0);
        let band = 2.0_f64.sqrt() * lipschitz;
        if gamma <= band {
            return Err(DiagnosticsError::InvalidContext(format!(
                "penalty {gamma} not above curvature band {band}"
            )));
        }
        let norm_sum: f64 = prob.blocks()[..prob.n_blocks() - 1]
            .iter()
            .map(|b| linalg::spectral_norm(&b.coupling))
            .sum();
        let m_bound = (gamma * norm_sum).max(1.0 / gamma + 1.0 + norm_sum);
        Ok(Self {
            prob,
            gamma,
            lipschitz,
            m_bound,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// The constant multiplying iterate gaps in the subgradient bound:
    /// `max(gamma sum ||A_i'||, 1/gamma + 1 + sum ||A_i'||)`.
    pub fn m_bound(&self) -> f64 {
        self.m_bound
    }

    /// Guaranteed per-iteration decrease factor
    /// `(gamma^2 - 2 L^2) / (2 gamma (1 + L^2))`.
    pub fn decrease_factor(&self) -> f64 {
        let l2 = self.lipschitz * self.lipschitz;
        (self.gamma * self.gamma - 2.0 * l2) / (2.0 * self.gamma * (1.0 + l2))
    }

    fn squared_gap_sum(&self, delta: &IterationDelta) -> f64 {
        let n = self.prob.n_blocks();
        let mut sum: f64 = delta.image_diffs[..n - 1].iter().map(|d| d * d).sum();
        sum += delta.x_last_diff * delta.x_last_diff;
        sum += delta.lambda_diff * delta.lambda_diff;
        sum
    }

    fn linear_gap_sum(&self, delta: &IterationDelta) -> f64 {
        let n = self.prob.n_blocks();
        delta.image_diffs[..n - 1].iter().sum::<f64>()
            + delta.x_last_diff
            + delta.lambda_diff
    }

    /// Decrease of the augmented Lagrangian dominates the squared iterate
    /// gaps scaled by [`Self::decrease_factor`].
    pub fn sufficient_decrease(
        &self,
        w_k: &TracePoint,
        w_k1: &TracePoint,
        delta: &IterationDelta,
        iteration: usize,
    ) -> Result<CertificateRecord, DiagnosticsError> {
        let lhs = self.decrease_factor() * self.squared_gap_sum(delta);
        let before = augmented_lagrangian(self.prob, &w_k.x, &w_k.lambda, self.gamma)?;
        let after = augmented_lagrangian(self.prob, &w_k1.x, &w_k1.lambda, self.gamma)?;
        let rhs = before - after;
        Ok(CertificateRecord::evaluate(
            "sufficient_decrease",
            lhs,
            rhs,
            default_tolerance(rhs),
            iteration,
        ))
    }

    /// Squared dual gap bounded by the squared last-block gap times `L^2`.
    pub fn dual_lipschitz(&self, delta: &IterationDelta, iteration: usize) -> CertificateRecord {
        let lhs = delta.lambda_diff * delta.lambda_diff;
        let rhs = self.lipschitz * self.lipschitz * delta.x_last_diff * delta.x_last_diff;
        CertificateRecord::evaluate("dual_lipschitz", lhs, rhs, default_tolerance(rhs), iteration)
    }

    /// The augmented Lagrangian stays above the objective of the implied
    /// feasible point plus a `(gamma - L)/2` residual correction.
    pub fn lower_bound(
        &self,
        w_k1: &TracePoint,
        iteration: usize,
    ) -> Result<CertificateRecord, DiagnosticsError> {
        if self.gamma <= self.lipschitz {
            return Err(DiagnosticsError::InvalidContext(format!(
                "lower bound needs gamma > L, got gamma={}, L={}",
                self.gamma, self.lipschitz
            )));
        }
        let n = self.prob.n_blocks();
        let mut partial = DVector::zeros(self.prob.row_dim());
        let mut value = 0.0;
        for i in 0..n - 1 {
            let block = self.prob.block(i);
            value += block.f.value_unchecked(&w_k1.x[i]);
            partial += &block.coupling * &w_k1.x[i];
        }
        let implied = self.prob.rhs() - &partial;
        value += self.prob.block(n - 1).f.value_unchecked(&implied);
        let residual = partial + &w_k1.x[n - 1] - self.prob.rhs();
        let lhs = value + 0.5 * (self.gamma - self.lipschitz) * residual.norm_squared();
        let rhs = augmented_lagrangian(self.prob, &w_k1.x, &w_k1.lambda, self.gamma)?;
        let tol = 1e-8 * (1.0 + rhs.abs());
        Ok(CertificateRecord::evaluate(
            "lower_bound",
            lhs,
            rhs,
            tol,
            iteration,
        ))
    }

    /// Norm of the canonical subgradient of the augmented Lagrangian at
    /// `w^{k+1}`, bounded by `M` times the iterate gaps.
    pub fn subgradient_bound(
        &self,
        w_k: &TracePoint,
        w_k1: &TracePoint,
        delta: &IterationDelta,
        iteration: usize,
    ) -> Result<CertificateRecord, DiagnosticsError> {
        let n = self.prob.n_blocks();
        let residual = self.prob.total_image(&w_k1.x)? - self.prob.rhs();

        // drift_i = sum_{j>i, j<N} A_j (x_j^k - x_j^{k+1}) + (x_N^k - x_N^{k+1})
        let mut drifts: Vec<DVector<f64>> = Vec::with_capacity(n - 1);
        let mut tail = &w_k.x[n - 1] - &w_k1.x[n - 1];
        for i in (0..n - 1).rev() {
            drifts.push(tail.clone());
            let block = self.prob.block(i);
            tail += &block.coupling * &w_k.x[i] - &block.coupling * &w_k1.x[i];
        }
        drifts.reverse();

        let mut lhs = 0.0;
        for i in 0..n - 1 {
            let block = self.prob.block(i);
            let r_i = block.coupling.transpose() * ((&residual - &drifts[i]) * self.gamma);
            lhs += r_i.norm();
        }
        lhs += (self.gamma * &residual).norm(); // gradient in the last block
        lhs += residual.norm(); // gradient in the dual

        let rhs = self.m_bound * self.linear_gap_sum(delta);
        Ok(CertificateRecord::evaluate(
            "subgradient_bound",
            lhs,
            rhs,
            default_tolerance(rhs),
            iteration,
        ))
    }

    /// The dual variable equals the last block's gradient after each sweep.
    pub fn dual_gradient_identity(&self, w_k1: &TracePoint, iteration: usize) -> CertificateRecord {
        let last = self.prob.n_blocks() - 1;
        let grad = self.prob.block(last).f.gradient_unchecked(&w_k1.x[last]);
        let gap = (&grad - &w_k1.lambda).norm();
        let tol = 1e-10 * (1.0 + w_k1.lambda.norm());
        CertificateRecord::evaluate("dual_gradient", gap, 0.0, tol, iteration)
    }
}

// ---------------------------------------------------------------------------
// Ergodic bound certificates
// ---------------------------------------------------------------------------

/// Objective and feasibility of the ergodic average at time `t`:
/// `(f(u_bar^t), ||sum_i A_i x_bar_i^t - b||)`.
pub fn ergodic_objective_and_residual(
    prob: &ProblemSpec,
    trace: &Trace,
    t: usize,
) -> Result<(f64, f64), DiagnosticsError> {
    let (u_bar, _) = trace.ergodic_at(t).map_err(|_| DiagnosticsError::TraceTooShort {
        need: t + 1,
        have: trace.points.len(),
    })?;
    let value = prob.objective(&u_bar)?;
    let residual = prob.primal_residual(&u_bar)?;
    Ok((value, residual))
}

/// The quantity the sublinear bounds control:
/// `f(u_bar^t) - f(u*) + rho ||sum_i A_i x_bar_i^t - b||`, `rho = ||lambda*|| + 1`.
pub fn ergodic_gap(
    prob: &ProblemSpec,
    trace: &Trace,
    oracle: &OracleSolution,
    t: usize,
) -> Result<f64, DiagnosticsError> {
    let (value, residual) = ergodic_objective_and_residual(prob, trace, t)?;
    let rho = oracle.lambda_star.norm() + 1.0;
    Ok(value - oracle.f_star + rho * residual)
}

/// Ergodic bound certificate for a perturbed-mode run. The right side is
/// the closed-form envelope in the starting point, the anchor, and the
/// oracle solution; the pass flag also requires the nonnegative lower side.
pub fn perturbed_bound_certificate(
    prob: &ProblemSpec,
    cfg: &SolverConfig,
    trace: &Trace,
    oracle: &OracleSolution,
    t: usize,
) -> Result<CertificateRecord, DiagnosticsError> {
    let Mode::Perturbed { epsilon } = cfg.mode else {
        return Err(DiagnosticsError::NotPerturbed);
    };
    let n = prob.n_blocks();
    let mu = compute_mu(epsilon, n)
        .map_err(|e| DiagnosticsError::InvalidContext(e.to_string()))?;
    let lhs = ergodic_gap(prob, trace, oracle, t)?;

    let rho = oracle.lambda_star.norm() + 1.0;
    let lambda0 = &trace.initial.lambda;
    let horizon = (t + 1) as f64;
    let term_dual = (rho * rho + lambda0.norm_squared()) / (cfg.gamma * horizon);

    // sum_{i=1}^{N-1} || sum_{j>i} A_j (x_j^0 - x_j^*) ||^2, built from the
    // tail sums of initial-vs-oracle image gaps.
    let image_gap: Vec<DVector<f64>> = (0..n)
        .map(|j| {
            let block = prob.block(j);
            &block.coupling * &trace.initial.x[j] - &block.coupling * &oracle.u_star[j]
        })
        .collect();
    let mut tail = DVector::zeros(prob.row_dim());
    let mut term_primal = 0.0;
    for i in (0..n - 1).rev() {
        tail += &image_gap[i + 1];
        term_primal += tail.norm_squared();
    }
    term_primal *= cfg.gamma / (2.0 * horizon);

    // Anchor distance term with weight mu/2 over blocks 2..N.
    let anchor = cfg.anchor.as_ref().unwrap_or(&trace.initial.x);
    let mut term_anchor = 0.0;
    for i in 1..n {
        let block = prob.block(i);
        let gap = &block.coupling * &oracle.u_star[i] - &block.coupling * &anchor[i];
        term_anchor += gap.norm_squared();
    }
    term_anchor *= mu / 2.0;

    let rhs = term_dual + term_primal + term_anchor;
    let tol = default_tolerance(rhs);
    Ok(
        CertificateRecord::evaluate("perturbed_ergodic_bound", lhs, rhs, tol, t)
            .also_require(lhs >= -tol),
    )
}

/// Running constants measured from a trace prefix for the sharing bound:
/// the largest per-block image gap and the accumulated gap sum.
#[derive(Debug, Clone)]
pub struct BoundConstants {
    pub rho: f64,
    pub m_bound: f64,
    pub lipschitz: f64,
    pub d_emp: f64,
    pub finite_length_sum: f64,
}

impl BoundConstants {
    pub fn measure(
        certs: &SharingCertificates,
        oracle: &OracleSolution,
        records: &[IterationRecord],
        up_to: usize,
    ) -> Self {
        let take = up_to.min(records.len());
        let mut d_emp = 0.0f64;
        for record in &records[..take] {
            for &d in &record.delta.image_diffs {
                d_emp = d_emp.max(d);
            }
        }
        Self {
            rho: oracle.lambda_star.norm() + 1.0,
            m_bound: certs.m_bound(),
            lipschitz: certs.lipschitz(),
            d_emp,
            finite_length_sum: finite_length_monitor(records, take),
        }
    }
}

/// Accumulated successive-gap sum
/// `sum_{k<t} (sum_{i<N} ||A_i x_i^k - A_i x_i^{k+1}|| + ||x_N^k - x_N^{k+1}|| + ||lambda^k - lambda^{k+1}||)`;
/// bounded sequences of these witness trajectory finite length.
pub fn finite_length_monitor(records: &[IterationRecord], up_to: usize) -> f64 {
    let take = up_to.min(records.len());
    records[..take]
        .iter()
        .map(|r| {
            let n = r.delta.image_diffs.len();
            r.delta.image_diffs[..n - 1].iter().sum::<f64>()
                + r.delta.x_last_diff
                + r.delta.lambda_diff
        })
        .sum()
}

/// Ergodic bound certificate for a sharing-structure run, with the
/// existential constants replaced by trace-measured ones: the envelope is
/// `(rho^2 + ||l0||^2) / (gamma (t+1)) + gamma/(2(t+1)) ||sum_{i=2..N-1} A_i (x_i^0 - x_i^*) + (x_N^0 - x_N^*)||^2
///  + gamma D (N-2) S_t / (t+1)` with `D` the measured max image gap and
/// `S_t` the measured gap sum through iteration `t`.
pub fn sharing_bound_certificate(
    prob: &ProblemSpec,
    certs: &SharingCertificates,
    trace: &Trace,
    oracle: &OracleSolution,
    t: usize,
    constants: &BoundConstants,
) -> Result<CertificateRecord, DiagnosticsError> {
    let n = prob.n_blocks();
    let lhs = ergodic_gap(prob, trace, oracle, t)?;

    let rho = constants.rho;
    let lambda0 = &trace.initial.lambda;
    let horizon = (t + 1) as f64;
    let gamma = certs.gamma();
    let term_dual = (rho * rho + lambda0.norm_squared()) / (gamma * horizon);

    let mut start_gap = &trace.initial.x[n - 1] - &oracle.u_star[n - 1];
    for i in 1..n - 1 {
        let block = prob.block(i);
        start_gap += &block.coupling * &trace.initial.x[i] - &block.coupling * &oracle.u_star[i];
    }
    let term_primal = gamma / (2.0 * horizon) * start_gap.norm_squared();

    let term_drift =
        gamma * constants.d_emp * ((n - 2) as f64) * constants.finite_length_sum / horizon;

    let rhs = term_dual + term_primal + term_drift;
    let tol = default_tolerance(rhs);
    Ok(
        CertificateRecord::evaluate("sharing_ergodic_bound", lhs, rhs, tol, t)
            .also_require(lhs >= -tol),
    )
}
