//! Inner solvers for one block minimization
//!
//! ```text
//! argmin_{x in X}  f(x) + (gamma/2) ||A x + c||^2  [+ (mu/2) ||A x - m0||^2]
//! ```
//!
//! where `c` collects the other blocks' images and the scaled dual, and the
//! optional quadratic term regularizes the image around a fixed anchor.
//!
//! Strategy order: a direct normal-equation solve when the objective is
//! smooth and the set is free; a single soft-threshold when the coupling is
//! orthonormal and the objective is a weighted l1; projected (proximal)
//! gradient otherwise. Every returned point carries a computable optimality
//! residual: the fixed-point gap of one unit-step proximal-gradient map,
//! which vanishes exactly at subproblem minimizers.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg;
use crate::problem::{BlockFunction, ConstraintSet, FunctionKind};

/// Residual bound multiplier for direct solves: `1e-12 * (1 + ||x||)`.
pub const CLOSED_FORM_TOL: f64 = 1e-12;

/// Iterate-norm guard above which the inner problem is declared unbounded.
const DIVERGENCE_GUARD: f64 = 1e12;

#[derive(Debug, Error)]
pub enum SubproblemError {
    #[error("subproblem has no attainable minimizer (normal system singular, iterates unbounded)")]
    SingularSystem,
    #[error("inner solve exceeded {cap} iterations (residual {residual:e}, tolerance {tol:e})")]
    InnerNonConvergence { cap: usize, residual: f64, tol: f64 },
    #[error("inconsistent subproblem dimensions: {0}")]
    Dimension(String),
    #[error("inner tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

/// Optional quadratic regularization `(mu/2) ||A x - anchor_image||^2`.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub mu: f64,
    pub anchor_image: DVector<f64>,
}

/// One block minimization with all outer-iteration context folded in.
#[derive(Debug)]
pub struct BlockSubproblem<'a> {
    pub f: &'a BlockFunction,
    pub set: &'a ConstraintSet,
    pub coupling: &'a DMatrix<f64>,
    /// Fixed offset `c`: other blocks' images minus `b` minus `lambda/gamma`.
    pub offset: DVector<f64>,
    pub gamma: f64,
    pub perturbation: Option<Perturbation>,
}

/// Which inner strategy produced the answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    ClosedForm,
    Prox,
    ProjectedGradient,
}

#[derive(Debug, Clone)]
pub struct InnerSolveReport {
    pub strategy: Strategy,
    pub iterations: usize,
    pub final_residual: f64,
}

/// Componentwise `sign(v_j) * max(|v_j| - t, 0)`.
pub fn soft_threshold(v: &DVector<f64>, t: f64) -> DVector<f64> {
    assert!(t >= 0.0, "threshold must be nonnegative");
    v.map(|x| {
        if x > t {
            x - t
        } else if x < -t {
            x + t
        } else {
            0.0
        }
    })
}

/// Exact proximal map of `t ||.||_1 + indicator(set)`.
///
/// Free, nonnegative, and box sets are separable, so thresholding composes
/// with clamping coordinatewise. For a ball the multiplier of the norm
/// constraint is resolved by bisection on the shrunken iterate's distance
/// to the center.
pub fn composite_prox(set: &ConstraintSet, t: f64, v: &DVector<f64>) -> DVector<f64> {
    match set {
        ConstraintSet::Free { .. } => soft_threshold(v, t),
        ConstraintSet::NonNegative { .. } => v.map(|x| (x - t).max(0.0)),
        ConstraintSet::Box { lower, upper } => {
            let s = soft_threshold(v, t);
            DVector::from_fn(v.len(), |j, _| s[j].clamp(lower[j], upper[j]))
        }
        ConstraintSet::Ball { center, radius } => {
            if t == 0.0 {
                return set.project_unchecked(v);
            }
            let shrink = |beta: f64| -> DVector<f64> {
                let target = (v + center * beta) / (1.0 + beta);
                soft_threshold(&target, t / (1.0 + beta))
            };
            let unconstrained = shrink(0.0);
            if (&unconstrained - center).norm() <= *radius {
                return unconstrained;
            }
            // Distance to the center decreases continuously to 0 as the
            // multiplier grows; bracket then bisect.
            let mut lo = 0.0f64;
            let mut hi = 1.0f64;
            for _ in 0..200 {
                if (&shrink(hi) - center).norm() <= *radius {
                    break;
                }
                lo = hi;
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if (&shrink(mid) - center).norm() > *radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            shrink(hi)
        }
    }
}

impl<'a> BlockSubproblem<'a> {
    fn dim(&self) -> usize {
        self.coupling.ncols()
    }

    fn row_dim(&self) -> usize {
        self.coupling.nrows()
    }

    fn mu(&self) -> f64 {
        self.perturbation.as_ref().map(|p| p.mu).unwrap_or(0.0)
    }

    fn validate(&self) -> Result<(), SubproblemError> {
        if self.gamma <= 0.0 {
            return Err(SubproblemError::Dimension(format!(
                "penalty must be positive, got {}",
                self.gamma
            )));
        }
        if self.offset.len() != self.row_dim() {
            return Err(SubproblemError::Dimension(format!(
                "offset has {} rows, coupling has {}",
                self.offset.len(),
                self.row_dim()
            )));
        }
        if self.f.dim() != self.dim() || self.set.dim() != self.dim() {
            return Err(SubproblemError::Dimension(
                "function/set dimension differs from coupling columns".into(),
            ));
        }
        if let Some(p) = &self.perturbation {
            if p.mu < 0.0 {
                return Err(SubproblemError::Dimension(format!(
                    "perturbation weight must be nonnegative, got {}",
                    p.mu
                )));
            }
            if p.anchor_image.len() != self.row_dim() {
                return Err(SubproblemError::Dimension(
                    "perturbation anchor image dimension differs from coupling rows".into(),
                ));
            }
        }
        Ok(())
    }

    /// Full subproblem objective (without the set indicator).
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let image = self.coupling * x;
        let mut val = self.f.value_unchecked(x)
            + 0.5 * self.gamma * (&image + &self.offset).norm_squared();
        if let Some(p) = &self.perturbation {
            val += 0.5 * p.mu * (&image - &p.anchor_image).norm_squared();
        }
        val
    }

    /// Gradient of the smooth part (objective minus any l1 term).
    fn smooth_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let image = self.coupling * x;
        let mut g = self.coupling.transpose() * ((&image + &self.offset) * self.gamma);
        if let Some(p) = &self.perturbation {
            g += self.coupling.transpose() * ((&image - &p.anchor_image) * p.mu);
        }
        if self.f.is_differentiable() {
            g += self.f.gradient_unchecked(x);
        }
        g
    }

    /// Lipschitz bound for the smooth part's gradient.
    fn smooth_lipschitz(&self) -> f64 {
        let ata_norm = linalg::spectral_norm(self.coupling).powi(2);
        (self.gamma + self.mu()) * ata_norm + self.f.lipschitz.unwrap_or(0.0)
    }

    /// Fixed-point gap of the unit-step proximal-gradient map,
    /// `|| x - prox(x - grad_smooth(x)) ||`; zero exactly at minimizers.
    pub fn first_order_residual(&self, x: &DVector<f64>) -> f64 {
        let step = x - self.smooth_gradient(x);
        (x - composite_prox(self.set, self.f.l1_weight(), &step)).norm()
    }

    fn closed_form_system(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        if !self.set.is_free() {
            return None;
        }
        let n = self.dim();
        let (q_mat, q_vec): (DMatrix<f64>, DVector<f64>) = match &self.f.kind {
            FunctionKind::Zero { .. } => (DMatrix::zeros(n, n), DVector::zeros(n)),
            FunctionKind::Quadratic { hessian, linear, .. } => (hessian.clone(), linear.clone()),
            FunctionKind::SquaredDistance { anchor, weight } => {
                (DMatrix::identity(n, n) * *weight, anchor * -*weight)
            }
            FunctionKind::WeightedL1 { .. } => return None,
        };
        let ata = self.coupling.transpose() * self.coupling;
        let mut normal = q_mat + &ata * (self.gamma + self.mu());
        let mut rhs = -(q_vec + self.coupling.transpose() * (&self.offset * self.gamma));
        if let Some(p) = &self.perturbation {
            rhs += self.coupling.transpose() * (&p.anchor_image * p.mu);
        }
        // Symmetrize against accumulated rounding before factoring.
        normal = (&normal + normal.transpose()) * 0.5;
        Some((normal, rhs))
    }

    fn orthonormal_coupling(&self) -> bool {
        let n = self.dim();
        if self.row_dim() < n {
            return false;
        }
        let ata = self.coupling.transpose() * self.coupling;
        let mut max_dev = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((ata[(i, j)] - want).abs());
            }
        }
        max_dev <= 1e-12
    }
}

/// Iteration budget: `100 * n * max(1, log10(1/tol))`.
fn iteration_cap(dim: usize, inner_tol: f64) -> usize {
    let digits = (1.0 / inner_tol).log10().ceil().max(1.0);
    100 * dim.max(1) * digits as usize
}

/// Solves one block subproblem to the requested first-order tolerance.
pub fn solve_block(
    sp: &BlockSubproblem,
    warm_start: &DVector<f64>,
    inner_tol: f64,
) -> Result<(DVector<f64>, InnerSolveReport), SubproblemError> {
    if !(inner_tol > 0.0) {
        return Err(SubproblemError::BadTolerance(inner_tol));
    }
    sp.validate()?;
    if warm_start.len() != sp.dim() {
        return Err(SubproblemError::Dimension(format!(
            "warm start has {} entries, block has {}",
            warm_start.len(),
            sp.dim()
        )));
    }

    // Direct solve of the normal equations when the objective is smooth and
    // the set is free.
    if let Some((normal, rhs)) = sp.closed_form_system() {
        if let Some(x) = linalg::solve_dense(&normal, &rhs) {
            let residual = sp.first_order_residual(&x);
            if residual <= CLOSED_FORM_TOL * (1.0 + x.norm()) {
                return Ok((
                    x,
                    InnerSolveReport {
                        strategy: Strategy::ClosedForm,
                        iterations: 0,
                        final_residual: residual,
                    },
                ));
            }
            // Ill-conditioned factorization: polish by gradient iterations.
            return projected_gradient(sp, &x, inner_tol);
        }
        // Singular normal matrix: fall through to the gradient method, which
        // still reaches a minimizer whenever one exists.
        return projected_gradient(sp, warm_start, inner_tol);
    }

    // Orthonormal coupling turns the l1 subproblem into one shrinkage.
    if matches!(sp.f.kind, FunctionKind::WeightedL1 { .. })
        && sp.set.is_free()
        && sp.orthonormal_coupling()
    {
        let weight = sp.f.l1_weight();
        let total = sp.gamma + sp.mu();
        let mut v = sp.coupling.transpose() * (&sp.offset * (-sp.gamma / total));
        if let Some(p) = &sp.perturbation {
            v += sp.coupling.transpose() * (&p.anchor_image * (p.mu / total));
        }
        let x = soft_threshold(&v, weight / total);
        let residual = sp.first_order_residual(&x);
        return Ok((
            x,
            InnerSolveReport {
                strategy: Strategy::Prox,
                iterations: 0,
                final_residual: residual,
            },
        ));
    }

    projected_gradient(sp, warm_start, inner_tol)
}

/// Proximal/projected gradient with step `1/L`; monotone in the objective.
fn projected_gradient(
    sp: &BlockSubproblem,
    start: &DVector<f64>,
    inner_tol: f64,
) -> Result<(DVector<f64>, InnerSolveReport), SubproblemError> {
    let weight = sp.f.l1_weight();
    let lipschitz = sp.smooth_lipschitz().max(f64::MIN_POSITIVE);
    let step = 1.0 / lipschitz;
    let cap = iteration_cap(sp.dim(), inner_tol);

    let mut x = sp.set.project_unchecked(start);
    let mut residual = sp.first_order_residual(&x);
    let mut iterations = 0usize;
    while residual > inner_tol {
        if iterations >= cap {
            return Err(SubproblemError::InnerNonConvergence {
                cap,
                residual,
                tol: inner_tol,
            });
        }
        let grad = sp.smooth_gradient(&x);
        let trial = &x - grad * step;
        x = composite_prox(sp.set, weight * step, &trial);
        if !x.iter().all(|v| v.is_finite()) || x.norm() > DIVERGENCE_GUARD {
            return Err(SubproblemError::SingularSystem);
        }
        residual = sp.first_order_residual(&x);
        iterations += 1;
    }
    Ok((
        x,
        InnerSolveReport {
            strategy: Strategy::ProjectedGradient,
            iterations,
            final_residual: residual,
        },
    ))
}
