//! Stacked per-block vectors.

use nalgebra::DVector;

/// A tuple of per-block vectors `(x_1, ..., x_N)`, one entry per problem
/// block. Blocks may have different dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    parts: Vec<DVector<f64>>,
}

impl BlockVector {
    pub fn new(parts: Vec<DVector<f64>>) -> Self {
        Self { parts }
    }

    /// All-zero block vector with the given per-block dimensions.
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            parts: dims.iter().map(|&n| DVector::zeros(n)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn part(&self, i: usize) -> &DVector<f64> {
        &self.parts[i]
    }

    pub fn part_mut(&mut self, i: usize) -> &mut DVector<f64> {
        &mut self.parts[i]
    }

    pub fn parts(&self) -> &[DVector<f64>] {
        &self.parts
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.parts.iter()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.parts.iter().map(|v| v.len()).collect()
    }

    /// Euclidean norm of the stacked vector.
    pub fn norm(&self) -> f64 {
        self.parts
            .iter()
            .map(|v| v.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Componentwise `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &BlockVector) {
        assert_eq!(self.parts.len(), other.parts.len());
        for (a, b) in self.parts.iter_mut().zip(other.parts.iter()) {
            a.axpy(alpha, b, 1.0);
        }
    }

    /// Componentwise `self / s`.
    pub fn scale(&self, s: f64) -> BlockVector {
        BlockVector {
            parts: self.parts.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &BlockVector) -> BlockVector {
        assert_eq!(self.parts.len(), other.parts.len());
        BlockVector {
            parts: self
                .parts
                .iter()
                .zip(other.parts.iter())
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl std::ops::Index<usize> for BlockVector {
    type Output = DVector<f64>;

    fn index(&self, i: usize) -> &DVector<f64> {
        &self.parts[i]
    }
}
