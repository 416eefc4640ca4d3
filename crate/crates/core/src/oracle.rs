//! Exact and high-accuracy reference solutions for small instances.
//!
//! Three routes, in order of preference:
//! - a direct solve of the stacked first-order system when every block is
//!   smooth and unconstrained;
//! - enumeration of sign/zero patterns of the l1 coordinates, solving the
//!   reduced linear system per pattern and keeping the pattern-consistent
//!   one (full ternary patterns while they fit the pattern budget, support
//!   subsets with an inner sign iteration otherwise);
//! - a two-block splitting reference (per-block proximal steps against
//!   consensus targets) run to a requested KKT tolerance.
//!
//! Every returned solution carries its own certified KKT residual.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::block_vec::BlockVector;
use crate::diagnostics::kkt_residual;
use crate::problem::{BlockFunction, FunctionKind, ProblemError, ProblemSpec};
use crate::subproblem::{solve_block, BlockSubproblem, SubproblemError};

/// Certification threshold every oracle solution must meet.
pub const ORACLE_CERT_TOL: f64 = 1e-8;

/// Budget on enumerated patterns.
pub const PATTERN_CAP: usize = 1 << 12;

/// Maximum total primal dimension the small-instance solver accepts.
const MAX_SMALL_DIM: usize = 30;

/// Iteration cap of the splitting reference.
const SPLIT_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    KktLinearSolve,
    ActiveSetEnumeration,
    HighAccuracyProxGrad,
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub u_star: BlockVector,
    pub lambda_star: DVector<f64>,
    pub f_star: f64,
    pub method: OracleMethod,
    pub certified_kkt_residual: f64,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("stacked first-order system is singular")]
    SingularKkt,
    #[error("problem shape unsupported by this oracle: {0}")]
    Unsupported(String),
    #[error("reference iteration did not reach tolerance {tol:e} within {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
    #[error("multiple consistent patterns with solutions {gap:e} apart; instance is degenerate")]
    AmbiguousPattern { gap: f64 },
    #[error("solution failed certification: KKT residual {residual:e}")]
    Certification { residual: f64 },
    #[error(transparent)]
    Inner(#[from] SubproblemError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

fn finalize(
    prob: &ProblemSpec,
    u_star: BlockVector,
    lambda_star: DVector<f64>,
    method: OracleMethod,
) -> Result<OracleSolution, OracleError> {
    let residual = kkt_residual(prob, &u_star, &lambda_star)?;
    if residual > ORACLE_CERT_TOL {
        return Err(OracleError::Certification { residual });
    }
    let f_star = prob.objective(&u_star)?;
    Ok(OracleSolution {
        u_star,
        lambda_star,
        f_star,
        method,
        certified_kkt_residual: residual,
    })
}

/// `(Q, q)` of a smooth block objective, `None` for the l1 variant.
fn smooth_terms(f: &BlockFunction) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let n = f.dim();
    match &f.kind {
        FunctionKind::Zero { .. } => Some((DMatrix::zeros(n, n), DVector::zeros(n))),
        FunctionKind::Quadratic { hessian, linear, .. } => {
            Some((hessian.clone(), linear.clone()))
        }
        FunctionKind::SquaredDistance { anchor, weight } => {
            Some((DMatrix::identity(n, n) * *weight, anchor * -*weight))
        }
        FunctionKind::WeightedL1 { .. } => None,
    }
}

/// Direct solve of the stacked system
/// `[blockdiag(Q_i), -A'; A, 0] (u, lambda) = (-q, b)` for all-smooth,
/// all-free problems.
pub fn solve_exact_qp(prob: &ProblemSpec) -> Result<OracleSolution, OracleError> {
    let n = prob.total_dim();
    let p = prob.row_dim();
    let mut kkt = DMatrix::zeros(n + p, n + p);
    let mut rhs = DVector::zeros(n + p);

    let mut col = 0usize;
    for block in prob.blocks() {
        if !block.set.is_free() {
            return Err(OracleError::Unsupported(
                "direct solve needs free sets".into(),
            ));
        }
        let (q_mat, q_vec) = smooth_terms(&block.f).ok_or_else(|| {
            OracleError::Unsupported("direct solve needs smooth blocks".into())
        })?;
        let d = block.dim;
        kkt.view_mut((col, col), (d, d)).copy_from(&q_mat);
        kkt.view_mut((col, n), (d, p))
            .copy_from(&(-block.coupling.transpose()));
        kkt.view_mut((n, col), (p, d)).copy_from(&block.coupling);
        rhs.rows_mut(col, d).copy_from(&(-q_vec));
        col += d;
    }
    rhs.rows_mut(n, p).copy_from(prob.rhs());

    let sol = kkt.lu().solve(&rhs).ok_or(OracleError::SingularKkt)?;
    let mut parts = Vec::with_capacity(prob.n_blocks());
    let mut at = 0usize;
    for block in prob.blocks() {
        parts.push(DVector::from(sol.rows(at, block.dim).clone_owned()));
        at += block.dim;
    }
    let lambda = DVector::from(sol.rows(n, p).clone_owned());
    finalize(prob, BlockVector::new(parts), lambda, OracleMethod::KktLinearSolve)
}

/// Position of one enumerable l1 coordinate.
#[derive(Debug, Clone, Copy)]
struct L1Coord {
    block: usize,
    coord: usize,
    weight: f64,
}

/// Static layout shared by all patterns of one enumeration.
struct PatternSystem<'a> {
    prob: &'a ProblemSpec,
    /// Indices of smooth blocks and the column offset of each.
    smooth: Vec<(usize, usize)>,
    smooth_dim: usize,
    coords: Vec<L1Coord>,
    /// Zero-weight coordinates behave like smooth scalars and are always on.
    always_on: Vec<L1Coord>,
}

impl<'a> PatternSystem<'a> {
    fn build(prob: &'a ProblemSpec) -> Result<Self, OracleError> {
        let mut smooth = Vec::new();
        let mut smooth_dim = 0usize;
        let mut coords = Vec::new();
        let mut always_on = Vec::new();
        for (i, block) in prob.blocks().iter().enumerate() {
            if !block.set.is_free() {
                return Err(OracleError::Unsupported(
                    "pattern enumeration needs free sets".into(),
                ));
            }
            match &block.f.kind {
                FunctionKind::WeightedL1 { weight, .. } => {
                    for j in 0..block.dim {
                        let c = L1Coord {
                            block: i,
                            coord: j,
                            weight: *weight,
                        };
                        if *weight > 0.0 {
                            coords.push(c);
                        } else {
                            always_on.push(c);
                        }
                    }
                }
                _ => {
                    smooth.push((i, smooth_dim));
                    smooth_dim += block.dim;
                }
            }
        }
        Ok(Self {
            prob,
            smooth,
            smooth_dim,
            coords,
            always_on,
        })
    }

    /// Solves the reduced stationarity system for the given signs of the
    /// active coordinates. Returns the full block point and multiplier.
    fn solve_pattern(
        &self,
        active: &[(L1Coord, f64)],
    ) -> Option<(BlockVector, DVector<f64>)> {
        let p = self.prob.row_dim();
        let extra = self.always_on.len();
        let unknowns = self.smooth_dim + active.len() + extra + p;
        let mut mat = DMatrix::zeros(unknowns, unknowns);
        let mut rhs = DVector::zeros(unknowns);
        let lambda_col = self.smooth_dim + active.len() + extra;

        // Smooth block stationarity: Q x - A' lambda = -q.
        for &(i, offset) in &self.smooth {
            let block = self.prob.block(i);
            let (q_mat, q_vec) = smooth_terms(&block.f).expect("smooth block");
            let d = block.dim;
            mat.view_mut((offset, offset), (d, d)).copy_from(&q_mat);
            mat.view_mut((offset, lambda_col), (d, p))
                .copy_from(&(-block.coupling.transpose()));
            rhs.rows_mut(offset, d).copy_from(&(-q_vec));
        }

        // Active l1 coordinates: (A' lambda)_j = w s. Zero-weight
        // coordinates follow with s = 0.
        let actives = active
            .iter()
            .map(|&(c, s)| (c, c.weight * s))
            .chain(self.always_on.iter().map(|&c| (c, 0.0)));
        for (row_idx, (c, target)) in actives.enumerate() {
            let row = self.smooth_dim + row_idx;
            let a_col = self.prob.block(c.block).coupling.column(c.coord);
            for r in 0..p {
                mat[(row, lambda_col + r)] = a_col[r];
            }
            rhs[row] = target;
        }

        // Coupling constraint over the active support.
        for &(i, offset) in &self.smooth {
            let block = self.prob.block(i);
            mat.view_mut((lambda_col, offset), (p, block.dim))
                .copy_from(&block.coupling);
        }
        for (col_idx, (c, _)) in active
            .iter()
            .map(|&(c, s)| (c, s))
            .chain(self.always_on.iter().map(|&c| (c, 0.0)))
            .enumerate()
        {
            let col = self.smooth_dim + col_idx;
            let a_col = self.prob.block(c.block).coupling.column(c.coord);
            for r in 0..p {
                mat[(lambda_col + r, col)] = a_col[r];
            }
        }
        rhs.rows_mut(lambda_col, p).copy_from(self.prob.rhs());

        let sol = mat.lu().solve(&rhs)?;

        let mut u = self.prob.zero_point();
        for &(i, offset) in &self.smooth {
            let d = self.prob.block(i).dim;
            u.part_mut(i).copy_from(&sol.rows(offset, d).clone_owned());
        }
        for (col_idx, (c, _)) in active
            .iter()
            .map(|&(c, s)| (c, s))
            .chain(self.always_on.iter().map(|&c| (c, 0.0)))
            .enumerate()
        {
            u.part_mut(c.block)[c.coord] = sol[self.smooth_dim + col_idx];
        }
        let lambda = DVector::from(sol.rows(lambda_col, p).clone_owned());
        Some((u, lambda))
    }

    /// Checks sign consistency on the support and dual feasibility off it.
    fn consistent(&self, active: &[(L1Coord, f64)], u: &BlockVector, lambda: &DVector<f64>) -> bool {
        const SIGN_TOL: f64 = 1e-12;
        const DUAL_TOL: f64 = 1e-9;
        for &(c, s) in active {
            if s * u[c.block][c.coord] < -SIGN_TOL {
                return false;
            }
        }
        let on_support = |c: &L1Coord| {
            active
                .iter()
                .any(|(a, _)| a.block == c.block && a.coord == c.coord)
        };
        for c in &self.coords {
            if on_support(c) {
                continue;
            }
            let dual = self.prob.block(c.block).coupling.column(c.coord).dot(lambda);
            if dual.abs() > c.weight + DUAL_TOL {
                return false;
            }
        }
        true
    }
}

/// Tracks the best consistent candidate and flags real ties.
struct CandidateSet {
    best: Option<(f64, BlockVector, DVector<f64>)>,
    ambiguity_gap: Option<f64>,
    tol: f64,
}

impl CandidateSet {
    fn new(tol: f64) -> Self {
        Self {
            best: None,
            ambiguity_gap: None,
            tol,
        }
    }

    fn offer(&mut self, f: f64, u: BlockVector, lambda: DVector<f64>) {
        match &self.best {
            None => self.best = Some((f, u, lambda)),
            Some((f_best, u_best, _)) => {
                let gap = u.sub(u_best).norm();
                if (f - f_best).abs() <= self.tol.max(1e-9) && gap > self.tol.max(1e-7) {
                    // Same optimal value reached at visibly different points.
                    self.ambiguity_gap =
                        Some(self.ambiguity_gap.map_or(gap, |g: f64| g.max(gap)));
                }
                if f < *f_best {
                    self.best = Some((f, u, lambda));
                }
            }
        }
    }
}

/// Enumerates full sign/zero patterns (`3^d` of them) in lexicographic
/// order. Requires `3^d` within the pattern budget.
fn enumerate_full(
    system: &PatternSystem,
    prob: &ProblemSpec,
    tol: f64,
) -> Result<Option<OracleSolution>, OracleError> {
    let d = system.coords.len();
    let mut candidates = CandidateSet::new(tol);
    let mut pattern = vec![-1i8; d];
    loop {
        let active: Vec<(L1Coord, f64)> = system
            .coords
            .iter()
            .zip(&pattern)
            .filter(|(_, &s)| s != 0)
            .map(|(&c, &s)| (c, s as f64))
            .collect();
        if let Some((u, lambda)) = system.solve_pattern(&active) {
            if system.consistent(&active, &u, &lambda) {
                let f = prob.objective(&u)?;
                candidates.offer(f, u, lambda);
            }
        }
        // Advance the ternary counter (-1, 0, +1).
        let mut i = 0;
        loop {
            if i == d {
                if let Some(gap) = candidates.ambiguity_gap {
                    return Err(OracleError::AmbiguousPattern { gap });
                }
                return match candidates.best {
                    Some((_, u, lambda)) => Ok(Some(finalize(
                        prob,
                        u,
                        lambda,
                        OracleMethod::ActiveSetEnumeration,
                    )?)),
                    None => Ok(None),
                };
            }
            if pattern[i] < 1 {
                pattern[i] += 1;
                break;
            }
            pattern[i] = -1;
            i += 1;
        }
    }
}

/// Enumerates zero/nonzero supports (`2^d`), resolving the signs on each
/// support by fixed-point iteration (exhaustively for small supports).
fn enumerate_supports(
    system: &PatternSystem,
    prob: &ProblemSpec,
    tol: f64,
) -> Result<Option<OracleSolution>, OracleError> {
    let d = system.coords.len();
    let mut candidates = CandidateSet::new(tol);
    for mask in 0u64..(1u64 << d) {
        let support: Vec<L1Coord> = (0..d)
            .filter(|j| mask >> j & 1 == 1)
            .map(|j| system.coords[j])
            .collect();
        let k = support.len();
        let mut tried: Vec<Vec<f64>> = Vec::new();
        let consider = |signs: &[f64],
                            candidates: &mut CandidateSet|
         -> Option<Vec<f64>> {
            let active: Vec<(L1Coord, f64)> =
                support.iter().cloned().zip(signs.iter().cloned()).collect();
            let (u, lambda) = system.solve_pattern(&active)?;
            let next: Vec<f64> = support
                .iter()
                .map(|c| if u[c.block][c.coord] < 0.0 { -1.0 } else { 1.0 })
                .collect();
            if system.consistent(&active, &u, &lambda) {
                if let Ok(f) = prob.objective(&u) {
                    candidates.offer(f, u, lambda);
                }
            }
            Some(next)
        };

        // Sign fixed point from an all-positive start.
        let mut signs = vec![1.0f64; k];
        for _ in 0..16 {
            if tried.contains(&signs) {
                break;
            }
            tried.push(signs.clone());
            match consider(&signs, &mut candidates) {
                Some(next) if next != signs => signs = next,
                _ => break,
            }
        }
        // Small supports afford exhaustive signs.
        if k <= 6 {
            for sign_mask in 0u64..(1u64 << k) {
                let signs: Vec<f64> = (0..k)
                    .map(|j| if sign_mask >> j & 1 == 1 { -1.0 } else { 1.0 })
                    .collect();
                if !tried.contains(&signs) {
                    tried.push(signs.clone());
                    consider(&signs, &mut candidates);
                }
            }
        }
    }
    if let Some(gap) = candidates.ambiguity_gap {
        return Err(OracleError::AmbiguousPattern { gap });
    }
    match candidates.best {
        Some((_, u, lambda)) => Ok(Some(finalize(
            prob,
            u,
            lambda,
            OracleMethod::ActiveSetEnumeration,
        )?)),
        None => Ok(None),
    }
}

/// Two-block splitting reference: per-block proximal solves against
/// consensus targets `z_i` constrained to sum to `b`, with a single shared
/// scaled dual. Stops at the requested KKT residual.
fn splitting_reference(prob: &ProblemSpec, tol: f64) -> Result<OracleSolution, OracleError> {
    let p = prob.row_dim();
    let n_blocks = prob.n_blocks();
    let beta = 1.0;
    let inner_tol = (tol * 1e-2).max(1e-13);

    let mut x = prob.zero_point();
    let mut z: Vec<DVector<f64>> = (0..n_blocks).map(|_| DVector::zeros(p)).collect();
    let mut w = DVector::zeros(p);

    let mut residual = f64::INFINITY;
    for iter in 0..SPLIT_CAP {
        for i in 0..n_blocks {
            let block = prob.block(i);
            let sp = BlockSubproblem {
                f: &block.f,
                set: &block.set,
                coupling: &block.coupling,
                offset: &w - &z[i],
                gamma: beta,
                perturbation: None,
            };
            let (xi, _) = solve_block(&sp, &x[i], inner_tol)?;
            *x.part_mut(i) = xi;
        }
        let images: Vec<DVector<f64>> = (0..n_blocks)
            .map(|i| &prob.block(i).coupling * &x[i])
            .collect();
        let mut v_sum = DVector::zeros(p);
        for img in &images {
            v_sum += img + &w;
        }
        let correction = (v_sum - prob.rhs()) / n_blocks as f64;
        for i in 0..n_blocks {
            z[i] = &images[i] + &w - &correction;
        }
        w = correction;

        if iter % 10 == 9 {
            let lambda = estimate_multiplier(prob, &x, &w, beta);
            residual = kkt_residual(prob, &x, &lambda)?;
            if residual <= tol {
                return finalize(prob, x, lambda, OracleMethod::HighAccuracyProxGrad);
            }
        }
    }
    Err(OracleError::NonConvergence {
        iterations: SPLIT_CAP,
        residual,
        tol,
    })
}

/// Multiplier recovery: the last block's gradient when the sharing
/// structure provides it exactly, otherwise the consensus dual.
fn estimate_multiplier(
    prob: &ProblemSpec,
    x: &BlockVector,
    w: &DVector<f64>,
    beta: f64,
) -> DVector<f64> {
    if prob.scenario2_eligible() {
        let last = prob.n_blocks() - 1;
        return prob.block(last).f.gradient_unchecked(&x[last]);
    }
    w * -beta
}

/// Reference solution for small instances with nonsmooth terms or sets.
/// Pattern enumeration is used while the pattern count fits the budget and
/// every set is free; otherwise the splitting reference runs to `tol`.
pub fn solve_small_nonsmooth(prob: &ProblemSpec, tol: f64) -> Result<OracleSolution, OracleError> {
    if prob.total_dim() > MAX_SMALL_DIM {
        return Err(OracleError::Unsupported(format!(
            "total dimension {} exceeds the small-instance cap {MAX_SMALL_DIM}",
            prob.total_dim()
        )));
    }
    let target = tol.min(ORACLE_CERT_TOL);

    let all_free = prob.blocks().iter().all(|b| b.set.is_free());
    let has_l1 = prob
        .blocks()
        .iter()
        .any(|b| matches!(b.f.kind, FunctionKind::WeightedL1 { .. }));

    if all_free && !has_l1 {
        // Smooth everywhere: prefer the direct solve, fall back to the
        // splitting reference when the stacked system is singular.
        return match solve_exact_qp(prob) {
            Ok(sol) => Ok(sol),
            Err(OracleError::SingularKkt) => splitting_reference(prob, target),
            Err(e) => Err(e),
        };
    }

    if all_free && has_l1 {
        let system = PatternSystem::build(prob)?;
        let d = system.coords.len();
        let full_count = 3usize.checked_pow(d as u32);
        if full_count.is_some_and(|c| c <= PATTERN_CAP) {
            if let Some(sol) = enumerate_full(&system, prob, target)? {
                return Ok(sol);
            }
        } else if d < 64 && (1usize << d) <= PATTERN_CAP {
            if let Some(sol) = enumerate_supports(&system, prob, target)? {
                return Ok(sol);
            }
        }
        // No consistent pattern (or too many coordinates): fall through.
    }

    splitting_reference(prob, target)
}
