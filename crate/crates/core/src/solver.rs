//! Outer iterations: plain Gauss-Seidel ADMM, the anchored perturbed
//! variant, and the sharing-problem specialization, plus run orchestration,
//! traces, and ergodic averaging.
//!
//! One iteration sweeps the blocks in order, minimizing the augmented
//! Lagrangian in block `i` with blocks `1..i-1` at their new values and
//! `i+1..N` at their old ones, then takes the dual step
//! `lambda <- lambda - gamma (sum_i A_i x_i - b)`.
//!
//! The perturbed variant adds `(mu/2) ||A_i x_i - A_i x_i^0||^2` to blocks
//! `2..N` with `mu = epsilon (N-2)(N+1)` around an anchor frozen at run
//! start. The sharing specialization is the plain sweep on an eligible
//! problem (identity last coupling, free last set); after each dual step it
//! asserts the gradient/multiplier identity that structure implies.

use nalgebra::DVector;
use thiserror::Error;

use crate::block_vec::BlockVector;
use crate::problem::{ProblemError, ProblemSpec};
use crate::subproblem::{solve_block, BlockSubproblem, Perturbation, SubproblemError};

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Plain,
    Perturbed { epsilon: f64 },
    Scenario2,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Perturbed { .. } => "perturbed",
            Mode::Scenario2 => "scenario2",
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("penalty parameter must be positive, got {0}")]
    BadGamma(f64),
    #[error("inner tolerance must be positive, got {0}")]
    BadInnerTol(f64),
    #[error("perturbation scale must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("perturbed mode needs epsilon/2 <= gamma <= epsilon, got gamma={gamma}, epsilon={epsilon}")]
    GammaOutsideEpsilonBand { gamma: f64, epsilon: f64 },
    #[error("perturbed mode needs at least 3 blocks, got {0}")]
    TooFewBlocks(usize),
    #[error("problem does not have the sharing structure (identity last coupling, free last set, smooth last objective, coercive earlier blocks)")]
    NotScenario2Eligible,
    #[error("sharing mode needs gamma > sqrt(2) L, got gamma={gamma}, bound={bound}")]
    GammaBelowCurvatureBand { gamma: f64, bound: f64 },
    #[error("anchor block dimensions do not match the problem")]
    AnchorShape,
    #[error("perturbed stepping needs a resolved anchor; set `anchor` or use `run`")]
    AnchorRequired,
    #[error("config mode {got} does not match the requested iteration {want}")]
    ModeMismatch { got: &'static str, want: &'static str },
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Subproblem(#[from] SubproblemError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("dual/gradient identity violated at iteration {iteration}: gap {gap:e} exceeds {bound:e} (inner solves too loose)")]
    DualGradientIdentityViolated {
        iteration: usize,
        gap: f64,
        bound: f64,
    },
    #[error("no iterates recorded yet")]
    NoIterates,
}

/// Perturbation weight `epsilon (N-2)(N+1)` of the anchored variant.
pub fn compute_mu(epsilon: f64, n_blocks: usize) -> Result<f64, ConfigError> {
    if !(epsilon > 0.0) {
        return Err(ConfigError::BadEpsilon(epsilon));
    }
    if n_blocks < 3 {
        return Err(ConfigError::TooFewBlocks(n_blocks));
    }
    let n = n_blocks as f64;
    Ok(epsilon * (n - 2.0) * (n + 1.0))
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub gamma: f64,
    pub mode: Mode,
    pub max_iter: usize,
    pub inner_tol: f64,
    /// Anchor of the perturbed variant; `run` freezes it to the initial
    /// iterate when unset. Manual stepping must set it explicitly.
    pub anchor: Option<BlockVector>,
    pub record_trace: bool,
    /// Stop when `max(primal residual, image diffs, dual diff)` falls below
    /// this; `None` runs all `max_iter` iterations.
    pub stop_tol: Option<f64>,
}

impl SolverConfig {
    pub fn new(gamma: f64, mode: Mode) -> Self {
        Self {
            gamma,
            mode,
            max_iter: 1000,
            inner_tol: 1e-10,
            anchor: None,
            record_trace: true,
            stop_tol: Some(1e-8),
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_inner_tol(mut self, tol: f64) -> Self {
        self.inner_tol = tol;
        self
    }

    pub fn with_stop_tol(mut self, tol: Option<f64>) -> Self {
        self.stop_tol = tol;
        self
    }

    pub fn with_anchor(mut self, anchor: BlockVector) -> Self {
        self.anchor = Some(anchor);
        self
    }

    pub fn validate(&self, prob: &ProblemSpec) -> Result<(), ConfigError> {
        if !(self.gamma > 0.0) {
            return Err(ConfigError::BadGamma(self.gamma));
        }
        if !(self.inner_tol > 0.0) {
            return Err(ConfigError::BadInnerTol(self.inner_tol));
        }
        match self.mode {
            Mode::Plain => {}
            Mode::Perturbed { epsilon } => {
                if !(epsilon > 0.0) {
                    return Err(ConfigError::BadEpsilon(epsilon));
                }
                if prob.n_blocks() < 3 {
                    return Err(ConfigError::TooFewBlocks(prob.n_blocks()));
                }
                if self.gamma < epsilon / 2.0 || self.gamma > epsilon {
                    return Err(ConfigError::GammaOutsideEpsilonBand {
                        gamma: self.gamma,
                        epsilon,
                    });
                }
            }
            Mode::Scenario2 => {
                if !prob.scenario2_eligible() {
                    return Err(ConfigError::NotScenario2Eligible);
                }
                let l = prob.last_block_lipschitz().unwrap_or(0.0);
                let bound = 2.0_f64.sqrt() * l;
                if self.gamma <= bound {
                    return Err(ConfigError::GammaBelowCurvatureBand {
                        gamma: self.gamma,
                        bound,
                    });
                }
            }
        }
        if let Some(anchor) = &self.anchor {
            if anchor.dims() != prob.block_dims() {
                return Err(ConfigError::AnchorShape);
            }
        }
        Ok(())
    }
}

/// Current primal/dual point plus cached block images and ergodic sums.
#[derive(Debug, Clone)]
pub struct IterateState {
    x: BlockVector,
    lambda: DVector<f64>,
    k: usize,
    images: Vec<DVector<f64>>,
    ergodic_sum_x: BlockVector,
    ergodic_sum_lambda: DVector<f64>,
}

impl IterateState {
    pub fn new(prob: &ProblemSpec, x: BlockVector, lambda: DVector<f64>) -> Result<Self, ProblemError> {
        if x.dims() != prob.block_dims() {
            return Err(ProblemError::DimensionMismatch {
                context: "initial primal point",
                expected: prob.total_dim(),
                actual: x.dims().iter().sum(),
            });
        }
        if lambda.len() != prob.row_dim() {
            return Err(ProblemError::DimensionMismatch {
                context: "initial dual point",
                expected: prob.row_dim(),
                actual: lambda.len(),
            });
        }
        let images = prob
            .blocks()
            .iter()
            .zip(x.iter())
            .map(|(b, xi)| &b.coupling * xi)
            .collect();
        let dims = prob.block_dims();
        Ok(Self {
            x,
            lambda,
            k: 0,
            images,
            ergodic_sum_x: BlockVector::zeros(&dims),
            ergodic_sum_lambda: DVector::zeros(prob.row_dim()),
        })
    }

    /// All-zeros start.
    pub fn initial(prob: &ProblemSpec) -> Self {
        Self::new(prob, prob.zero_point(), DVector::zeros(prob.row_dim()))
            .expect("zero point always matches")
    }

    pub fn x(&self) -> &BlockVector {
        &self.x
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    /// Cached `A_i x_i`, maintained exactly alongside the iterate.
    pub fn images(&self) -> &[DVector<f64>] {
        &self.images
    }

    /// Arithmetic mean of iterates `1..=k` (primal and dual).
    pub fn ergodic_point(&self) -> Result<(BlockVector, DVector<f64>), SolverError> {
        if self.k == 0 {
            return Err(SolverError::NoIterates);
        }
        let inv = 1.0 / self.k as f64;
        Ok((
            self.ergodic_sum_x.scale(inv),
            &self.ergodic_sum_lambda * inv,
        ))
    }
}

/// Per-iteration successive-difference norms.
#[derive(Debug, Clone)]
pub struct IterationDelta {
    /// `||A_i x_i^k - A_i x_i^{k+1}||` per block.
    pub image_diffs: Vec<f64>,
    /// `||x_N^k - x_N^{k+1}||` of the last block variable itself.
    pub x_last_diff: f64,
    /// `||lambda^k - lambda^{k+1}||`.
    pub lambda_diff: f64,
}

impl IterationDelta {
    pub fn max_image_diff(&self) -> f64 {
        self.image_diffs.iter().cloned().fold(0.0, f64::max)
    }
}

/// Bookkeeping for one completed iteration.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub delta: IterationDelta,
    pub primal_residual: f64,
    pub inner_iterations: usize,
}

/// Primal/dual snapshot.
#[derive(Debug, Clone)]
pub struct TracePoint {
    pub x: BlockVector,
    pub lambda: DVector<f64>,
}

/// Everything a run produced. `points` holds `w^1..w^K` when the config
/// recorded the trace; the starting point is always kept.
#[derive(Debug, Clone)]
pub struct Trace {
    pub initial: TracePoint,
    pub points: Vec<TracePoint>,
    pub records: Vec<IterationRecord>,
    pub final_state: IterateState,
    /// Iteration count at which the stop test fired, if it did.
    pub stopped_at: Option<usize>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_points(&self) -> bool {
        self.points.len() == self.records.len()
    }

    /// Snapshot `w^k`; `k = 0` is the starting point.
    pub fn point(&self, k: usize) -> &TracePoint {
        if k == 0 {
            &self.initial
        } else {
            &self.points[k - 1]
        }
    }

    /// Ergodic average over iterates `1..=t+1`, the object the sublinear
    /// bounds control at time `t`.
    pub fn ergodic_at(&self, t: usize) -> Result<(BlockVector, DVector<f64>), SolverError> {
        let count = t + 1;
        if !self.has_points() || self.points.len() < count {
            return Err(SolverError::NoIterates);
        }
        let mut sum_x = BlockVector::zeros(&self.initial.x.dims());
        let mut sum_l = DVector::zeros(self.initial.lambda.len());
        for pt in &self.points[..count] {
            sum_x.axpy(1.0, &pt.x);
            sum_l += &pt.lambda;
        }
        let inv = 1.0 / count as f64;
        Ok((sum_x.scale(inv), sum_l * inv))
    }
}

/// Gauss-Seidel sweep plus dual step; the mode hook supplies each block's
/// quadratic perturbation. Returns the iteration record.
fn sweep(
    prob: &ProblemSpec,
    cfg: &SolverConfig,
    state: &mut IterateState,
    perturb: &dyn Fn(usize) -> Option<Perturbation>,
) -> Result<IterationRecord, SolverError> {
    let n_blocks = prob.n_blocks();
    let scaled_dual = &state.lambda / cfg.gamma;

    // Running total of block images, refreshed from the exact cache.
    let mut total = DVector::zeros(prob.row_dim());
    for img in &state.images {
        total += img;
    }

    let mut image_diffs = vec![0.0; n_blocks];
    let mut x_last_diff = 0.0;
    let mut inner_iterations = 0usize;

    for i in 0..n_blocks {
        let block = prob.block(i);
        let offset = &total - &state.images[i] - prob.rhs() - &scaled_dual;
        let sp = BlockSubproblem {
            f: &block.f,
            set: &block.set,
            coupling: &block.coupling,
            offset,
            gamma: cfg.gamma,
            perturbation: perturb(i),
        };
        let (x_new, report) = solve_block(&sp, &state.x[i], cfg.inner_tol)?;
        inner_iterations += report.iterations;

        let image_new = &block.coupling * &x_new;
        image_diffs[i] = (&image_new - &state.images[i]).norm();
        if i == n_blocks - 1 {
            x_last_diff = (&x_new - &state.x[i]).norm();
        }
        total += &image_new - &state.images[i];
        state.images[i] = image_new;
        *state.x.part_mut(i) = x_new;
    }

    let residual_vec = &total - prob.rhs();
    let lambda_new = &state.lambda - &residual_vec * cfg.gamma;
    let lambda_diff = (&lambda_new - &state.lambda).norm();
    state.lambda = lambda_new;
    state.k += 1;
    state.ergodic_sum_x.axpy(1.0, &state.x);
    state.ergodic_sum_lambda += &state.lambda;

    Ok(IterationRecord {
        delta: IterationDelta {
            image_diffs,
            x_last_diff,
            lambda_diff,
        },
        primal_residual: residual_vec.norm(),
        inner_iterations,
    })
}

/// One iteration of plain multi-block ADMM.
pub fn plain_iterate(
    prob: &ProblemSpec,
    cfg: &SolverConfig,
    state: &mut IterateState,
) -> Result<IterationRecord, SolverError> {
    if !matches!(cfg.mode, Mode::Plain) {
        return Err(ConfigError::ModeMismatch {
            got: cfg.mode.name(),
            want: "plain",
        }
        .into());
    }
    sweep(prob, cfg, state, &|_| None)
}

/// One iteration of the perturbed variant. Block 1 is untouched; blocks
/// `2..N` carry the anchored quadratic with weight from [`compute_mu`].
pub fn perturbed_iterate(
    prob: &ProblemSpec,
    cfg: &SolverConfig,
    state: &mut IterateState,
) -> Result<IterationRecord, SolverError> {
    let Mode::Perturbed { epsilon } = cfg.mode else {
        return Err(ConfigError::ModeMismatch {
            got: cfg.mode.name(),
            want: "perturbed",
        }
        .into());
    };
    let mu = compute_mu(epsilon, prob.n_blocks())?;
    perturbed_iterate_with_mu(prob, cfg, state, mu)
}

/// Same sweep with the perturbation weight supplied directly. With
/// `mu = 0` this reproduces the plain iteration bit for bit.
#[doc(hidden)]
pub fn perturbed_iterate_with_mu(
    prob: &ProblemSpec,
    cfg: &SolverConfig,
    state: &mut IterateState,
    mu: f64,
) -> Result<IterationRecord, SolverError> {
    let anchor = cfg.anchor.as_ref().ok_or(ConfigError::AnchorRequired)?;
    if anchor.dims() != prob.block_dims() {
        return Err(ConfigError::AnchorShape.into());
    }
    let anchor_images: Vec<DVector<f64>> = prob
        .blocks()
        .iter()
        .zip(anchor.iter())
        .map(|(b, a)| &b.coupling * a)
        .collect();
    sweep(prob, cfg, state, &|i| {
        if i == 0 || mu == 0.0 {
            None
        } else {
            Some(Perturbation {
                mu,
                anchor_image: anchor_images[i].clone(),
            })
        }
    })
}

/// One iteration of the sharing specialization: the plain sweep on an
/// eligible problem, with the dual/gradient identity asserted after the
/// dual step (a violation signals inner solves looser than configured).
pub fn scenario2_iterate(
    prob: &ProblemSpec,
    cfg: &SolverConfig,
    state: &mut IterateState,
) -> Result<IterationRecord, SolverError> {
    if !matches!(cfg.mode, Mode::Scenario2) {
        return Err(ConfigError::ModeMismatch {
            got: cfg.mode.name(),
            want: "scenario2",
        }
        .into());
    }
    if !prob.scenario2_eligible() {
        return Err(ConfigError::NotScenario2Eligible.into());
    }
    let record = sweep(prob, cfg, state, &|_| None)?;
    let last = prob.n_blocks() - 1;
    let grad = prob.block(last).f.gradient_unchecked(&state.x[last]);
    let gap = (&grad - &state.lambda).norm();
    let bound = 10.0 * cfg.inner_tol * (1.0 + state.lambda.norm());
    if gap > bound {
        return Err(SolverError::DualGradientIdentityViolated {
            iteration: state.k,
            gap,
            bound,
        });
    }
    Ok(record)
}

/// Run failure carrying the trace accumulated before the failing iteration.
#[derive(Debug, Error)]
#[error("run failed at iteration {at}: {source}")]
pub struct RunError {
    pub at: usize,
    pub source: SolverError,
    pub partial: Box<Trace>,
}

/// Applies the configured mode `max_iter` times (or until the stop test
/// fires), recording the trace.
pub fn run(
    prob: &ProblemSpec,
    cfg: &SolverConfig,
    initial: Option<(BlockVector, DVector<f64>)>,
) -> Result<Trace, RunError> {
    let fail_at_start = |e: SolverError| RunError {
        at: 0,
        source: e,
        partial: Box::new(Trace {
            initial: TracePoint {
                x: prob.zero_point(),
                lambda: DVector::zeros(prob.row_dim()),
            },
            points: Vec::new(),
            records: Vec::new(),
            final_state: IterateState::initial(prob),
            stopped_at: None,
        }),
    };
    cfg.validate(prob).map_err(|e| fail_at_start(e.into()))?;

    let mut state = match initial {
        Some((x, lambda)) => {
            IterateState::new(prob, x, lambda).map_err(|e| fail_at_start(e.into()))?
        }
        None => IterateState::initial(prob),
    };

    // Freeze the perturbation anchor at the starting point for the whole
    // run; re-anchoring mid-run would change the problem being solved.
    let mut cfg = cfg.clone();
    if matches!(cfg.mode, Mode::Perturbed { .. }) && cfg.anchor.is_none() {
        cfg.anchor = Some(state.x().clone());
    }

    let initial_point = TracePoint {
        x: state.x().clone(),
        lambda: state.lambda().clone(),
    };
    let mut points = Vec::new();
    let mut records = Vec::new();
    let mut stopped_at = None;

    for k in 0..cfg.max_iter {
        let step = match cfg.mode {
            Mode::Plain => plain_iterate(prob, &cfg, &mut state),
            Mode::Perturbed { .. } => perturbed_iterate(prob, &cfg, &mut state),
            Mode::Scenario2 => scenario2_iterate(prob, &cfg, &mut state),
        };
        match step {
            Ok(record) => {
                if cfg.record_trace {
                    points.push(TracePoint {
                        x: state.x().clone(),
                        lambda: state.lambda().clone(),
                    });
                }
                let stop = cfg.stop_tol.map(|tol| {
                    record
                        .primal_residual
                        .max(record.delta.max_image_diff())
                        .max(record.delta.lambda_diff)
                        <= tol
                });
                records.push(record);
                if stop == Some(true) {
                    stopped_at = Some(k + 1);
                    break;
                }
            }
            Err(source) => {
                return Err(RunError {
                    at: k,
                    source,
                    partial: Box::new(Trace {
                        initial: initial_point,
                        points,
                        records,
                        final_state: state,
                        stopped_at: None,
                    }),
                });
            }
        }
    }

    Ok(Trace {
        initial: initial_point,
        points,
        records,
        final_state: state,
        stopped_at,
    })
}
