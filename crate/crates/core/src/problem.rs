//! Block functions, constraint sets, and the coupled problem definition.
//!
//! A problem couples `N >= 2` blocks through one linear equality:
//!
//! ```text
//! minimize   sum_i f_i(x_i)
//! subject to sum_i A_i x_i = b,   x_i in X_i.
//! ```
//!
//! Block functions are restricted to a closed catalogue of convex variants
//! so that objective values stay finite and every inner solve has a
//! computable optimality certificate. Set membership is handled entirely by
//! [`ConstraintSet`]; function values never take indicator contributions.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::block_vec::BlockVector;
use crate::linalg;

/// Tolerated negative lower bound on eigenvalues in the PSD check;
/// constructed instances accumulate rounding in the symmetrization of Q.
pub const PSD_TOL: f64 = 1e-10;

/// Tolerance for recognizing an exact-identity coupling matrix.
const IDENTITY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("gradient requested for a nondifferentiable function variant")]
    NotDifferentiable,
    #[error("invalid problem data: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ProblemError {
    ProblemError::Invalid(msg.into())
}

// ---------------------------------------------------------------------------
// Constraint sets
// ---------------------------------------------------------------------------

/// A nonempty closed convex set with an exact Euclidean projection.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    Free { dim: usize },
    NonNegative { dim: usize },
    Box { lower: DVector<f64>, upper: DVector<f64> },
    Ball { center: DVector<f64>, radius: f64 },
}

impl ConstraintSet {
    pub fn dim(&self) -> usize {
        match self {
            ConstraintSet::Free { dim } | ConstraintSet::NonNegative { dim } => *dim,
            ConstraintSet::Box { lower, .. } => lower.len(),
            ConstraintSet::Ball { center, .. } => center.len(),
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, ConstraintSet::Free { .. })
    }

    /// Whether the set is bounded (it then makes any function coercive).
    pub fn is_bounded(&self) -> bool {
        matches!(self, ConstraintSet::Box { .. } | ConstraintSet::Ball { .. })
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        match self {
            ConstraintSet::Free { .. } | ConstraintSet::NonNegative { .. } => Ok(()),
            ConstraintSet::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(ProblemError::DimensionMismatch {
                        context: "box bounds",
                        expected: lower.len(),
                        actual: upper.len(),
                    });
                }
                for (l, u) in lower.iter().zip(upper.iter()) {
                    if !l.is_finite() || !u.is_finite() {
                        return Err(invalid("box bounds must be finite"));
                    }
                    if l > u {
                        return Err(invalid(format!("box lower {l} exceeds upper {u}")));
                    }
                }
                Ok(())
            }
            ConstraintSet::Ball { radius, .. } => {
                if !radius.is_finite() || *radius < 0.0 {
                    Err(invalid(format!("ball radius must be >= 0, got {radius}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>, ProblemError> {
        if v.len() != self.dim() {
            return Err(ProblemError::DimensionMismatch {
                context: "projection input",
                expected: self.dim(),
                actual: v.len(),
            });
        }
        Ok(self.project_unchecked(v))
    }

    pub(crate) fn project_unchecked(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            ConstraintSet::Free { .. } => v.clone(),
            ConstraintSet::NonNegative { .. } => v.map(|x| x.max(0.0)),
            ConstraintSet::Box { lower, upper } => {
                DVector::from_fn(v.len(), |i, _| v[i].clamp(lower[i], upper[i]))
            }
            ConstraintSet::Ball { center, radius } => {
                let d = v - center;
                let norm = d.norm();
                if norm <= *radius {
                    v.clone()
                } else {
                    center + d * (*radius / norm)
                }
            }
        }
    }

    /// Membership test with absolute tolerance `tol`.
    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        if v.len() != self.dim() {
            return false;
        }
        (v - self.project_unchecked(v)).norm() <= tol
    }
}

// ---------------------------------------------------------------------------
// Block functions
// ---------------------------------------------------------------------------

/// The convex function variants a block may carry.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionKind {
    Zero {
        dim: usize,
    },
    /// `x -> 0.5 x'Qx + q'x + c` with symmetric PSD `Q`.
    Quadratic {
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        constant: f64,
    },
    /// `x -> weight * ||x||_1`.
    WeightedL1 {
        dim: usize,
        weight: f64,
    },
    /// `x -> (weight / 2) * ||x - anchor||^2`.
    SquaredDistance {
        anchor: DVector<f64>,
        weight: f64,
    },
}

/// A block objective together with its declared gradient-Lipschitz constant.
/// The constant is present exactly when the variant is differentiable
/// everywhere (`Zero`, `Quadratic`, `SquaredDistance`).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFunction {
    pub kind: FunctionKind,
    pub lipschitz: Option<f64>,
}

impl BlockFunction {
    pub fn zero(dim: usize) -> Self {
        Self {
            kind: FunctionKind::Zero { dim },
            lipschitz: Some(0.0),
        }
    }

    /// Builds a quadratic after symmetrizing the Hessian; the declared
    /// Lipschitz constant defaults to the largest eigenvalue.
    pub fn quadratic(hessian: DMatrix<f64>, linear: DVector<f64>, constant: f64) -> Self {
        let sym = (&hessian + hessian.transpose()) * 0.5;
        let (_, hi) = linalg::symmetric_eigen_bounds(&sym);
        Self {
            kind: FunctionKind::Quadratic {
                hessian: sym,
                linear,
                constant,
            },
            lipschitz: Some(hi.max(0.0)),
        }
    }

    pub fn weighted_l1(dim: usize, weight: f64) -> Self {
        Self {
            kind: FunctionKind::WeightedL1 { dim, weight },
            lipschitz: None,
        }
    }

    pub fn squared_distance(anchor: DVector<f64>, weight: f64) -> Self {
        Self {
            kind: FunctionKind::SquaredDistance { anchor, weight },
            lipschitz: Some(weight),
        }
    }

    /// Overrides the declared Lipschitz constant (still validated).
    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            FunctionKind::Zero { dim } | FunctionKind::WeightedL1 { dim, .. } => *dim,
            FunctionKind::Quadratic { linear, .. } => linear.len(),
            FunctionKind::SquaredDistance { anchor, .. } => anchor.len(),
        }
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(self.kind, FunctionKind::WeightedL1 { .. })
    }

    /// The l1 weight when the variant is nonsmooth, zero otherwise.
    pub(crate) fn l1_weight(&self) -> f64 {
        match self.kind {
            FunctionKind::WeightedL1 { weight, .. } => weight,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        match &self.kind {
            FunctionKind::Zero { .. } => {}
            FunctionKind::Quadratic { hessian, linear, .. } => {
                if hessian.nrows() != hessian.ncols() {
                    return Err(invalid("quadratic hessian must be square"));
                }
                if hessian.nrows() != linear.len() {
                    return Err(ProblemError::DimensionMismatch {
                        context: "quadratic hessian vs linear term",
                        expected: linear.len(),
                        actual: hessian.nrows(),
                    });
                }
                let asym = (hessian - hessian.transpose()).abs().max();
                if asym > 1e-12 * (1.0 + hessian.abs().max()) {
                    return Err(invalid("quadratic hessian must be symmetric"));
                }
                let (lo, hi) = linalg::symmetric_eigen_bounds(hessian);
                if lo < -PSD_TOL {
                    return Err(invalid(format!(
                        "quadratic hessian is not positive semidefinite (min eigenvalue {lo:e})"
                    )));
                }
                match self.lipschitz {
                    Some(l) if l + PSD_TOL >= hi => {}
                    Some(l) => {
                        return Err(invalid(format!(
                            "declared lipschitz constant {l} below max eigenvalue {hi}"
                        )))
                    }
                    None => return Err(invalid("differentiable variant must declare lipschitz")),
                }
            }
            FunctionKind::WeightedL1 { weight, .. } => {
                if !weight.is_finite() || *weight < 0.0 {
                    return Err(invalid(format!("l1 weight must be >= 0, got {weight}")));
                }
                if self.lipschitz.is_some() {
                    return Err(invalid("weighted l1 is nondifferentiable; lipschitz must be absent"));
                }
            }
            FunctionKind::SquaredDistance { weight, .. } => {
                if !weight.is_finite() || *weight < 0.0 {
                    return Err(invalid(format!("distance weight must be >= 0, got {weight}")));
                }
                match self.lipschitz {
                    Some(l) if l + PSD_TOL >= *weight => {}
                    Some(l) => {
                        return Err(invalid(format!(
                            "declared lipschitz constant {l} below curvature {weight}"
                        )))
                    }
                    None => return Err(invalid("differentiable variant must declare lipschitz")),
                }
            }
        }
        if matches!(self.kind, FunctionKind::Zero { .. }) && self.lipschitz.is_none() {
            return Err(invalid("differentiable variant must declare lipschitz"));
        }
        if let Some(l) = self.lipschitz {
            if !l.is_finite() || l < 0.0 {
                return Err(invalid(format!("lipschitz constant must be >= 0, got {l}")));
            }
        }
        Ok(())
    }

    /// Evaluates the function. Values are always finite; set membership is
    /// handled by [`ConstraintSet`], never by the function.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<f64, ProblemError> {
        if x.len() != self.dim() {
            return Err(ProblemError::DimensionMismatch {
                context: "function argument",
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(self.value_unchecked(x))
    }

    pub(crate) fn value_unchecked(&self, x: &DVector<f64>) -> f64 {
        match &self.kind {
            FunctionKind::Zero { .. } => 0.0,
            FunctionKind::Quadratic {
                hessian,
                linear,
                constant,
            } => 0.5 * x.dot(&(hessian * x)) + linear.dot(x) + constant,
            FunctionKind::WeightedL1 { weight, .. } => weight * x.iter().map(|v| v.abs()).sum::<f64>(),
            FunctionKind::SquaredDistance { anchor, weight } => {
                0.5 * weight * (x - anchor).norm_squared()
            }
        }
    }

    /// Exact gradient of a differentiable variant.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, ProblemError> {
        if x.len() != self.dim() {
            return Err(ProblemError::DimensionMismatch {
                context: "gradient argument",
                expected: self.dim(),
                actual: x.len(),
            });
        }
        if !self.is_differentiable() {
            return Err(ProblemError::NotDifferentiable);
        }
        Ok(self.gradient_unchecked(x))
    }

    pub(crate) fn gradient_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            FunctionKind::Zero { dim } => DVector::zeros(*dim),
            FunctionKind::Quadratic { hessian, linear, .. } => hessian * x + linear,
            FunctionKind::WeightedL1 { .. } => unreachable!("checked by gradient()"),
            FunctionKind::SquaredDistance { anchor, weight } => (x - anchor) * *weight,
        }
    }

    /// A subgradient at `x`. For the l1 variant the selection at zero
    /// coordinates is the element of `[-w, w]` closest to `target`, which
    /// yields the least pessimistic stationarity residual; elsewhere it is
    /// the unique (sub)gradient.
    pub fn min_norm_subgradient(&self, x: &DVector<f64>, target: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            FunctionKind::WeightedL1 { weight, .. } => DVector::from_fn(x.len(), |j, _| {
                if x[j] > 0.0 {
                    *weight
                } else if x[j] < 0.0 {
                    -*weight
                } else {
                    target[j].clamp(-*weight, *weight)
                }
            }),
            _ => self.gradient_unchecked(x),
        }
    }
}

// ---------------------------------------------------------------------------
// Blocks and the coupled problem
// ---------------------------------------------------------------------------

/// One block: its dimension, coupling matrix, objective, and feasible set.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub dim: usize,
    pub coupling: DMatrix<f64>,
    pub f: BlockFunction,
    pub set: ConstraintSet,
}

impl BlockSpec {
    pub fn new(coupling: DMatrix<f64>, f: BlockFunction, set: ConstraintSet) -> Self {
        Self {
            dim: coupling.ncols(),
            coupling,
            f,
            set,
        }
    }

    pub fn validate(&self, row_dim: usize) -> Result<(), ProblemError> {
        if self.coupling.nrows() != row_dim {
            return Err(ProblemError::DimensionMismatch {
                context: "coupling rows",
                expected: row_dim,
                actual: self.coupling.nrows(),
            });
        }
        if self.coupling.ncols() != self.dim {
            return Err(ProblemError::DimensionMismatch {
                context: "coupling columns",
                expected: self.dim,
                actual: self.coupling.ncols(),
            });
        }
        if self.f.dim() != self.dim {
            return Err(ProblemError::DimensionMismatch {
                context: "block function",
                expected: self.dim,
                actual: self.f.dim(),
            });
        }
        if self.set.dim() != self.dim {
            return Err(ProblemError::DimensionMismatch {
                context: "block constraint set",
                expected: self.dim,
                actual: self.set.dim(),
            });
        }
        self.f.validate()?;
        self.set.validate()
    }

    /// Coercivity of `f + indicator(set)`, decided syntactically: an l1 term
    /// with positive weight, a positive-definite quadratic, a positive-weight
    /// squared distance, or any function on a bounded set.
    pub fn is_coercive(&self) -> bool {
        if self.set.is_bounded() {
            return true;
        }
        match &self.f.kind {
            FunctionKind::WeightedL1 { weight, .. } => *weight > 0.0,
            FunctionKind::SquaredDistance { weight, .. } => *weight > 0.0,
            FunctionKind::Quadratic { hessian, .. } => {
                linalg::symmetric_eigen_bounds(hessian).0 > PSD_TOL
            }
            FunctionKind::Zero { .. } => false,
        }
    }

    fn coupling_is_identity(&self) -> bool {
        let a = &self.coupling;
        if a.nrows() != a.ncols() {
            return false;
        }
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                if (a[(i, j)] - want).abs() > IDENTITY_TOL {
                    return false;
                }
            }
        }
        true
    }
}

/// The full coupled problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    blocks: Vec<BlockSpec>,
    b: DVector<f64>,
    scenario2_eligible: bool,
}

impl ProblemSpec {
    pub fn new(blocks: Vec<BlockSpec>, b: DVector<f64>) -> Result<Self, ProblemError> {
        if blocks.len() < 2 {
            return Err(invalid(format!(
                "need at least 2 blocks, got {}",
                blocks.len()
            )));
        }
        for block in &blocks {
            block.validate(b.len())?;
        }
        let scenario2_eligible = Self::check_scenario2(&blocks);
        Ok(Self {
            blocks,
            b,
            scenario2_eligible,
        })
    }

    /// The sharing structure required by the identity-last-block analysis:
    /// last block has identity coupling, a free set, and a differentiable
    /// objective with declared curvature; all earlier blocks are coercive.
    fn check_scenario2(blocks: &[BlockSpec]) -> bool {
        let last = blocks.last().expect("nonempty");
        if !last.coupling_is_identity() || !last.set.is_free() {
            return false;
        }
        if !last.f.is_differentiable() || last.f.lipschitz.is_none() {
            return false;
        }
        blocks[..blocks.len() - 1].iter().all(BlockSpec::is_coercive)
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Shared row dimension of the coupling constraint.
    pub fn row_dim(&self) -> usize {
        self.b.len()
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &BlockSpec {
        &self.blocks[i]
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dim).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    pub fn scenario2_eligible(&self) -> bool {
        self.scenario2_eligible
    }

    fn check_block_dims(&self, u: &BlockVector, context: &'static str) -> Result<(), ProblemError> {
        if u.len() != self.blocks.len() {
            return Err(ProblemError::DimensionMismatch {
                context,
                expected: self.blocks.len(),
                actual: u.len(),
            });
        }
        for (part, block) in u.iter().zip(&self.blocks) {
            if part.len() != block.dim {
                return Err(ProblemError::DimensionMismatch {
                    context,
                    expected: block.dim,
                    actual: part.len(),
                });
            }
        }
        Ok(())
    }

    /// Objective value `sum_i f_i(x_i)`.
    pub fn objective(&self, u: &BlockVector) -> Result<f64, ProblemError> {
        self.check_block_dims(u, "objective argument")?;
        Ok(self
            .blocks
            .iter()
            .zip(u.iter())
            .map(|(b, x)| b.f.value_unchecked(x))
            .sum())
    }

    /// `sum_i A_i x_i`.
    pub fn total_image(&self, u: &BlockVector) -> Result<DVector<f64>, ProblemError> {
        self.check_block_dims(u, "image argument")?;
        let mut acc = DVector::zeros(self.row_dim());
        for (block, x) in self.blocks.iter().zip(u.iter()) {
            acc += &block.coupling * x;
        }
        Ok(acc)
    }

    /// Euclidean norm of the constraint violation `||sum_i A_i x_i - b||`.
    pub fn primal_residual(&self, u: &BlockVector) -> Result<f64, ProblemError> {
        Ok((self.total_image(u)? - &self.b).norm())
    }

    /// Declared gradient-Lipschitz constant of the last block, when present.
    pub fn last_block_lipschitz(&self) -> Option<f64> {
        self.blocks.last().and_then(|b| b.f.lipschitz)
    }

    pub fn zero_point(&self) -> BlockVector {
        BlockVector::zeros(&self.block_dims())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::SplitMix64;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn rng_vec(rng: &mut SplitMix64, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn evaluate_known_values() {
        let q = BlockFunction::quadratic(DMatrix::identity(2, 2), DVector::zeros(2), 0.0);
        assert_eq!(q.evaluate(&dvector![3.0, 4.0]).unwrap(), 12.5);

        let l1 = BlockFunction::weighted_l1(2, 2.0);
        assert_eq!(l1.evaluate(&dvector![1.0, -3.0]).unwrap(), 8.0);

        let z = BlockFunction::zero(3);
        assert_eq!(z.evaluate(&dvector![5.0, -1.0, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_rejects_dimension_mismatch() {
        let z = BlockFunction::zero(3);
        assert!(matches!(
            z.evaluate(&dvector![1.0]),
            Err(ProblemError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gradient_known_values() {
        let q = BlockFunction::quadratic(DMatrix::identity(2, 2), dvector![1.0, 0.0], 0.0);
        assert_eq!(q.gradient(&dvector![2.0, 2.0]).unwrap(), dvector![3.0, 2.0]);

        let anchor = dvector![0.3, -0.7, 1.1];
        let d = BlockFunction::squared_distance(anchor.clone(), 1.0);
        assert_eq!(d.gradient(&anchor).unwrap(), DVector::zeros(3));

        let l1 = BlockFunction::weighted_l1(2, 1.0);
        assert!(matches!(
            l1.gradient(&dvector![1.0, 2.0]),
            Err(ProblemError::NotDifferentiable)
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Central differences with step 1e-5 as the independent oracle,
        // 100 random points per differentiable variant.
        let mut rng = SplitMix64::new(0xFD_0001);
        let variants: Vec<BlockFunction> = vec![
            BlockFunction::quadratic(dmatrix![2.0, 0.0; 0.0, 4.0], dvector![0.2, -0.4], 0.3),
            BlockFunction::squared_distance(dvector![0.5, -1.5], 0.8),
            BlockFunction::zero(2),
        ];
        let h = 1e-5;
        for f in &variants {
            for _ in 0..100 {
                let x = rng_vec(&mut rng, 2);
                let g = f.gradient(&x).unwrap();
                let mut fd = DVector::zeros(2);
                for j in 0..2 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    fd[j] = (f.evaluate(&xp).unwrap() - f.evaluate(&xm).unwrap()) / (2.0 * h);
                }
                assert!(
                    (&g - &fd).norm() <= 1e-6 * (1.0 + g.norm()),
                    "finite differences disagree: {g:?} vs {fd:?}"
                );
            }
        }
    }

    #[test]
    fn projection_known_values() {
        let nn = ConstraintSet::NonNegative { dim: 2 };
        assert_eq!(nn.project(&dvector![-1.0, 2.0]).unwrap(), dvector![0.0, 2.0]);

        let free = ConstraintSet::Free { dim: 2 };
        let v = dvector![0.1, -9.0];
        assert_eq!(free.project(&v).unwrap(), v);

        let ball = ConstraintSet::Ball {
            center: DVector::zeros(2),
            radius: 1.0,
        };
        let p = ball.project(&dvector![3.0, 4.0]).unwrap();
        assert_relative_eq!(p[0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(p[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn projection_is_idempotent_and_obtuse() {
        let mut rng = SplitMix64::new(0xFD_0002);
        let sets = vec![
            ConstraintSet::Free { dim: 3 },
            ConstraintSet::NonNegative { dim: 3 },
            ConstraintSet::Box {
                lower: dvector![-0.5, -1.0, 0.0],
                upper: dvector![0.5, 0.25, 2.0],
            },
            ConstraintSet::Ball {
                center: dvector![0.1, 0.2, -0.3],
                radius: 0.75,
            },
        ];
        for set in &sets {
            for _ in 0..50 {
                let v = rng_vec(&mut rng, 3) * 3.0;
                let pv = set.project(&v).unwrap();
                assert!((set.project(&pv).unwrap() - &pv).norm() <= 1e-14);
                // Obtuse-angle property against sampled members of the set.
                for _ in 0..10 {
                    let w = set.project(&(rng_vec(&mut rng, 3) * 3.0)).unwrap();
                    let inner = (&v - &pv).dot(&(&w - &pv));
                    assert!(inner <= 1e-10, "projection angle violated: {inner}");
                }
            }
        }
    }

    #[test]
    fn block_functions_are_midpoint_convex() {
        let mut rng = SplitMix64::new(0xFD_0003);
        let variants: Vec<BlockFunction> = vec![
            BlockFunction::zero(3),
            BlockFunction::quadratic(dmatrix![2.0, 0.5, 0.0; 0.5, 1.0, 0.0; 0.0, 0.0, 0.25], rng_vec(&mut rng, 3), -0.2),
            BlockFunction::weighted_l1(3, 1.5),
            BlockFunction::squared_distance(rng_vec(&mut rng, 3), 2.0),
        ];
        for f in &variants {
            for _ in 0..100 {
                let x = rng_vec(&mut rng, 3) * 2.0;
                let y = rng_vec(&mut rng, 3) * 2.0;
                let mid = (&x + &y) * 0.5;
                let lhs = f.evaluate(&mid).unwrap();
                let rhs = 0.5 * f.evaluate(&x).unwrap() + 0.5 * f.evaluate(&y).unwrap();
                assert!(lhs <= rhs + 1e-10, "convexity violated: {lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn validation_guards_shapes_and_signs() {
        assert!(ConstraintSet::Box {
            lower: dvector![1.0],
            upper: dvector![0.0]
        }
        .validate()
        .is_err());
        assert!(ConstraintSet::Ball {
            center: dvector![0.0],
            radius: -1.0
        }
        .validate()
        .is_err());

        // Indefinite quadratic is rejected.
        let bad = BlockFunction::quadratic(dmatrix![1.0, 0.0; 0.0, -1.0], DVector::zeros(2), 0.0);
        assert!(bad.validate().is_err());

        // Declared L below the top eigenvalue is rejected.
        let low_l = BlockFunction::quadratic(dmatrix![3.0, 0.0; 0.0, 1.0], DVector::zeros(2), 0.0)
            .with_lipschitz(1.0);
        assert!(low_l.validate().is_err());

        // Lipschitz on a nondifferentiable variant is rejected.
        let mut l1 = BlockFunction::weighted_l1(2, 1.0);
        l1.lipschitz = Some(1.0);
        assert!(l1.validate().is_err());
    }

    #[test]
    fn primal_residual_known_values() {
        let scalar = |f: BlockFunction| {
            BlockSpec::new(DMatrix::from_element(1, 1, 1.0), f, ConstraintSet::Free { dim: 1 })
        };
        let prob = ProblemSpec::new(
            vec![
                scalar(BlockFunction::zero(1)),
                scalar(BlockFunction::zero(1)),
                scalar(BlockFunction::zero(1)),
            ],
            dvector![3.0],
        )
        .unwrap();

        let feasible = BlockVector::new(vec![dvector![1.0], dvector![1.0], dvector![1.0]]);
        assert_eq!(prob.primal_residual(&feasible).unwrap(), 0.0);

        let u = BlockVector::new(vec![dvector![1.0], dvector![1.0], dvector![0.0]]);
        assert_eq!(prob.primal_residual(&u).unwrap(), 1.0);
    }

    #[test]
    fn primal_residual_matches_dense_oracle() {
        let mut rng = SplitMix64::new(0xFD_0004);
        let p = 4;
        let dims = [2usize, 3, 1];
        let blocks: Vec<BlockSpec> = dims
            .iter()
            .map(|&n| {
                BlockSpec::new(
                    DMatrix::from_fn(p, n, |_, _| rng.uniform(-1.0, 1.0)),
                    BlockFunction::zero(n),
                    ConstraintSet::Free { dim: n },
                )
            })
            .collect();
        let b = rng_vec(&mut rng, p);
        let prob = ProblemSpec::new(blocks.clone(), b.clone()).unwrap();
        let u = BlockVector::new(dims.iter().map(|&n| rng_vec(&mut rng, n)).collect());

        // Naive entrywise loop as the oracle.
        let mut acc = vec![0.0; p];
        for (block, x) in blocks.iter().zip(u.iter()) {
            for r in 0..p {
                for c in 0..x.len() {
                    acc[r] += block.coupling[(r, c)] * x[c];
                }
            }
        }
        let expect = acc
            .iter()
            .zip(b.iter())
            .map(|(s, bi)| (s - bi) * (s - bi))
            .sum::<f64>()
            .sqrt();
        assert_relative_eq!(prob.primal_residual(&u).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn min_norm_subgradient_selection() {
        let l1 = BlockFunction::weighted_l1(3, 2.0);
        let x = dvector![1.5, 0.0, -0.2];
        let target = dvector![9.0, 0.7, 9.0];
        let g = l1.min_norm_subgradient(&x, &target);
        assert_eq!(g, dvector![2.0, 0.7, -2.0]);
        // Target beyond the interval is clamped.
        let g = l1.min_norm_subgradient(&dvector![0.0, 0.0, 0.0], &dvector![5.0, -5.0, 0.1]);
        assert_eq!(g, dvector![2.0, -2.0, 0.1]);
    }
}
