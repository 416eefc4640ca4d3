//! Deterministic seeded generators for the test problems the solver and
//! certificate machinery target.
//!
//! All randomness flows through [`SplitMix64`], a fixed, named 64-bit
//! generator, so a recipe (name, shape, seed) reproduces a bit-identical
//! problem on every run. Matrices are drawn dense with controlled singular
//! values so that inner solves stay well conditioned and reference oracles
//! stay nonsingular.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::{BlockFunction, BlockSpec, ConstraintSet, ProblemSpec};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid instance shape: {0}")]
    InvalidShape(String),
    #[error("instance construction failed after {attempts} resampling attempts: {reason}")]
    ConstructionFailed { attempts: usize, reason: String },
    #[error("unknown recipe name {0:?}")]
    UnknownRecipe(String),
}

/// SplitMix64: counter-based, splittable, trivially portable across
/// languages. Reference: Steele, Lea & Flood, "Fast splittable
/// pseudorandom number generators" (the java.util.SplittableRandom core).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn index(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Derives an independent stream (the splittable part of the design).
    pub fn split(&mut self) -> SplitMix64 {
        SplitMix64::new(self.next_u64())
    }

    pub fn vector(&mut self, n: usize, lo: f64, hi: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.uniform(lo, hi))
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
        // Row-major fill order is part of the determinism contract.
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = self.uniform(lo, hi);
            }
        }
        m
    }
}

/// A named, seeded description that regenerates a problem bit-identically.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InstanceRecipe {
    pub name: String,
    pub n_blocks: usize,
    pub dims: Vec<usize>,
    pub p: usize,
    pub seed: u64,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

impl InstanceRecipe {
    pub fn build(&self) -> Result<ProblemSpec, InstanceError> {
        match self.name.as_str() {
            "sharing" => {
                let n = *self.dims.first().ok_or_else(|| {
                    InstanceError::InvalidShape("sharing recipe needs dims[0]".into())
                })?;
                make_sharing_instance(self.n_blocks, n, self.p, self.seed)
            }
            "qp" => {
                let strongly_convex = self
                    .parameters
                    .get("strongly_convex")
                    .map(|v| *v != 0.0)
                    .unwrap_or(true);
                make_qp_instance(self.n_blocks, &self.dims, self.p, self.seed, strongly_convex)
            }
            "divergence" => Ok(make_divergence_instance()),
            other => Err(InstanceError::UnknownRecipe(other.to_string())),
        }
    }
}

/// Dense `rows x cols` matrix with singular values in `[0.75, 1.5]`,
/// built as `U S V'` from QR factors of seeded square matrices. Keeps the
/// spectral norm within the advertised bound of 2 and conditioning mild.
fn shaped_matrix(rng: &mut SplitMix64, rows: usize, cols: usize) -> DMatrix<f64> {
    let gu = rng.matrix(rows, rows, -1.0, 1.0);
    let gv = rng.matrix(cols, cols, -1.0, 1.0);
    let u = gu.qr().q();
    let v = gv.qr().q();
    let k = rows.min(cols);
    let mut s = DMatrix::zeros(rows, cols);
    for j in 0..k {
        s[(j, j)] = rng.uniform(0.75, 1.5);
    }
    &u * s * v.transpose()
}

/// Sharing-structure instance: `N-1` weighted-l1 blocks with dense coupling
/// plus one squared-distance loss block with identity coupling. The right
/// hand side is the image of a planted sparse point plus small noise, so the
/// optimum carries meaningful sparse structure.
pub fn make_sharing_instance(
    n_blocks: usize,
    n: usize,
    p: usize,
    seed: u64,
) -> Result<ProblemSpec, InstanceError> {
    if n_blocks < 3 {
        return Err(InstanceError::InvalidShape(format!(
            "sharing instance needs at least 3 blocks, got {n_blocks}"
        )));
    }
    if n == 0 || p == 0 {
        return Err(InstanceError::InvalidShape("dimensions must be positive".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut blocks = Vec::with_capacity(n_blocks);
    let mut planted_image = DVector::zeros(p);
    for _ in 0..n_blocks - 1 {
        let a = shaped_matrix(&mut rng, p, n);
        // Planted sparse point: two nonzero coordinates per block.
        let mut x = DVector::zeros(n);
        for _ in 0..2.min(n) {
            let j = rng.index(n);
            let sign = if rng.unit() < 0.5 { -1.0 } else { 1.0 };
            x[j] = sign * rng.uniform(0.5, 1.5);
        }
        planted_image += &a * &x;
        blocks.push(BlockSpec::new(
            a,
            BlockFunction::weighted_l1(n, 1.0),
            ConstraintSet::Free { dim: n },
        ));
    }
    let loss_anchor = rng.vector(p, -1.0, 1.0);
    let noise = rng.vector(p, -0.01, 0.01);
    let b = &planted_image + &loss_anchor + noise;
    blocks.push(BlockSpec::new(
        DMatrix::identity(p, p),
        BlockFunction::squared_distance(loss_anchor, 1.0),
        ConstraintSet::Free { dim: p },
    ));
    ProblemSpec::new(blocks, b).map_err(|e| InstanceError::InvalidShape(e.to_string()))
}

/// Quadratic-program instance with free sets and a nonsingular stacked
/// first-order system, resampled on degeneracy up to 10 times. With
/// `strongly_convex` every Hessian is identity plus scaled PSD noise;
/// without it the first block objective is zero and the rest carry only
/// the (possibly rank-deficient) PSD noise.
pub fn make_qp_instance(
    n_blocks: usize,
    dims: &[usize],
    p: usize,
    seed: u64,
    strongly_convex: bool,
) -> Result<ProblemSpec, InstanceError> {
    if n_blocks < 2 {
        return Err(InstanceError::InvalidShape(format!(
            "qp instance needs at least 2 blocks, got {n_blocks}"
        )));
    }
    if dims.len() != n_blocks {
        return Err(InstanceError::InvalidShape(format!(
            "expected {n_blocks} block dimensions, got {}",
            dims.len()
        )));
    }
    if p == 0 || dims.contains(&0) {
        return Err(InstanceError::InvalidShape("dimensions must be positive".into()));
    }

    const ATTEMPTS: usize = 10;
    let mut rng = SplitMix64::new(seed);
    let mut last_reason = String::new();
    for _ in 0..ATTEMPTS {
        let mut stream = rng.split();
        let mut blocks = Vec::with_capacity(n_blocks);
        for (i, &n) in dims.iter().enumerate() {
            let a = shaped_matrix(&mut stream, p, n);
            let f = if !strongly_convex && i == 0 {
                BlockFunction::zero(n)
            } else {
                let g = stream.matrix(n, n, -1.0, 1.0);
                let psd = &g.transpose() * &g;
                let scale = crate::linalg::spectral_norm(&g).powi(2).max(1e-12);
                let noise = psd * (0.5 / scale);
                let base = if strongly_convex {
                    DMatrix::identity(n, n)
                } else {
                    DMatrix::zeros(n, n)
                };
                BlockFunction::quadratic(base + noise, stream.vector(n, -1.0, 1.0), 0.0)
            };
            blocks.push(BlockSpec::new(a, f, ConstraintSet::Free { dim: n }));
        }
        let b = stream.vector(p, -1.0, 1.0);
        let prob = ProblemSpec::new(blocks, b)
            .map_err(|e| InstanceError::InvalidShape(e.to_string()))?;
        match crate::oracle::solve_exact_qp(&prob) {
            Ok(_) => return Ok(prob),
            Err(e) => last_reason = e.to_string(),
        }
    }
    Err(InstanceError::ConstructionFailed {
        attempts: ATTEMPTS,
        reason: last_reason,
    })
}

/// Three scalar blocks with zero objectives and linearly independent
/// coupling columns for which plain Gauss-Seidel ADMM is known not to
/// converge. The only feasible point of `A u = 0` is `u = 0`, so any
/// orbit growth witnesses non-convergence.
pub fn make_divergence_instance() -> ProblemSpec {
    let columns: [[f64; 3]; 3] = [[1.0, 1.0, 1.0], [1.0, 1.0, 2.0], [1.0, 2.0, 2.0]];
    let blocks = columns
        .iter()
        .map(|col| {
            BlockSpec::new(
                DMatrix::from_column_slice(3, 1, col),
                BlockFunction::zero(1),
                ConstraintSet::Free { dim: 1 },
            )
        })
        .collect();
    ProblemSpec::new(blocks, DVector::zeros(3)).expect("static instance is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    #[test]
    fn splitmix_reference_stream() {
        // First outputs for seed 0 from the published SplitMix64 algorithm.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn sharing_instance_structure() {
        let prob = make_sharing_instance(3, 5, 5, 7).unwrap();
        assert_eq!(prob.n_blocks(), 3);
        assert!(prob.scenario2_eligible());
        assert_eq!(prob.last_block_lipschitz(), Some(1.0));
        // The loss block couples through an exact identity.
        let last = prob.block(2);
        assert_eq!(last.coupling, DMatrix::identity(5, 5));
        // Advertised spectral-norm bound.
        for block in prob.blocks() {
            assert!(linalg::spectral_norm(&block.coupling) <= 2.0 + 1e-8);
        }
    }

    #[test]
    fn sharing_instance_rejects_two_blocks() {
        assert!(matches!(
            make_sharing_instance(2, 3, 3, 1),
            Err(InstanceError::InvalidShape(_))
        ));
    }

    #[test]
    fn sharing_instance_is_deterministic() {
        let a = make_sharing_instance(4, 3, 6, 99).unwrap();
        let b = make_sharing_instance(4, 3, 6, 99).unwrap();
        assert_eq!(
            crate::io::problem_to_json(&a, None).unwrap(),
            crate::io::problem_to_json(&b, None).unwrap()
        );
        let c = make_sharing_instance(4, 3, 6, 100).unwrap();
        assert_ne!(
            crate::io::problem_to_json(&a, None).unwrap(),
            crate::io::problem_to_json(&c, None).unwrap()
        );
    }

    #[test]
    fn qp_instance_shapes_and_errors() {
        let prob = make_qp_instance(3, &[2, 2, 2], 3, 11, true).unwrap();
        assert_eq!(prob.total_dim(), 6);
        assert!(!prob.scenario2_eligible());
        assert!(matches!(
            make_qp_instance(3, &[2, 2], 3, 11, true),
            Err(InstanceError::InvalidShape(_))
        ));
    }

    #[test]
    fn qp_instance_without_strong_convexity_has_zero_block() {
        let prob = make_qp_instance(3, &[1, 2, 2], 4, 5, false).unwrap();
        assert_eq!(
            prob.block(0).f,
            crate::problem::BlockFunction::zero(1)
        );
    }

    #[test]
    fn divergence_instance_has_independent_columns() {
        let prob = make_divergence_instance();
        let stacked = DMatrix::from_fn(3, 3, |r, c| prob.block(c).coupling[(r, 0)]);
        // Rank check: the column matrix must be invertible.
        assert!(stacked.lu().is_invertible());
        assert_eq!(prob.rhs(), &DVector::zeros(3));
        let zero = prob.zero_point();
        assert_eq!(prob.objective(&zero).unwrap(), 0.0);
    }

    #[test]
    fn recipe_round_trip() {
        let recipe = InstanceRecipe {
            name: "sharing".into(),
            n_blocks: 3,
            dims: vec![5, 5, 5],
            p: 5,
            seed: 7,
            parameters: BTreeMap::new(),
        };
        let prob = recipe.build().unwrap();
        let direct = make_sharing_instance(3, 5, 5, 7).unwrap();
        assert_eq!(
            crate::io::problem_to_json(&prob, None).unwrap(),
            crate::io::problem_to_json(&direct, None).unwrap()
        );
        assert!(matches!(
            InstanceRecipe {
                name: "nope".into(),
                ..recipe
            }
            .build(),
            Err(InstanceError::UnknownRecipe(_))
        ));
    }
}
