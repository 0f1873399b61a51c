//! Flat-vector linear operators and power iteration.

use ndarray::{Array1, Array2};

use crate::error::{shape_err, PatError, Result};
use crate::rng::SeededRng;

/// A real linear map `R^input_len -> R^output_len` with its transpose.
pub trait LinearOperator: Sync {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn apply(&self, x: &Array1<f64>) -> Result<Array1<f64>>;
    fn apply_transpose(&self, y: &Array1<f64>) -> Result<Array1<f64>>;
}

/// Explicit matrix operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    pub matrix: Array2<f64>,
}

impl DenseOperator {
    pub fn new(matrix: Array2<f64>) -> Self {
        Self { matrix }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(Array2::eye(n))
    }
}

impl LinearOperator for DenseOperator {
    fn input_len(&self) -> usize {
        self.matrix.ncols()
    }

    fn output_len(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_len() {
            return Err(shape_err(self.input_len(), x.len()));
        }
        Ok(self.matrix.dot(x))
    }

    fn apply_transpose(&self, y: &Array1<f64>) -> Result<Array1<f64>> {
        if y.len() != self.output_len() {
            return Err(shape_err(self.output_len(), y.len()));
        }
        Ok(self.matrix.t().dot(y))
    }
}

/// Materializes `op` column by column. Only sensible for tiny operators.
pub fn assemble_dense(op: &dyn LinearOperator) -> Result<Array2<f64>> {
    let (m, n) = (op.output_len(), op.input_len());
    let mut dense = Array2::zeros((m, n));
    let mut e = Array1::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        dense.column_mut(j).assign(&op.apply(&e)?);
        e[j] = 0.0;
    }
    Ok(dense)
}

#[derive(Debug, Clone)]
pub struct NormEstimate {
    /// Best estimate of `||A||`; a lower bound on the true norm.
    pub norm: f64,
    /// `||A x_k||` for the normalized power iterates `x_k`.
    pub history: Vec<f64>,
}

/// Power iteration on `A^T A` from a seeded Gaussian start vector.
///
/// The per-iteration values `||A x_k||` are non-decreasing in exact
/// arithmetic; the reported norm is their running maximum.
pub fn power_iteration(op: &dyn LinearOperator, iters: usize, seed: u64) -> Result<NormEstimate> {
    if iters == 0 {
        return Err(PatError::InvalidArgument("power iteration needs iters >= 1".into()));
    }
    let n = op.input_len();
    let mut rng = SeededRng::new(seed);
    let draw = |rng: &mut SeededRng| -> Array1<f64> {
        loop {
            let v: Array1<f64> = (0..n).map(|_| rng.normal()).collect();
            let norm = v.dot(&v).sqrt();
            if norm > 0.0 {
                return v / norm;
            }
        }
    };
    let mut x = draw(&mut rng);
    let mut history = Vec::with_capacity(iters);
    let mut best = 0.0f64;
    for _ in 0..iters {
        let y = op.apply(&x)?;
        let est = y.dot(&y).sqrt();
        best = best.max(est);
        history.push(est);
        let z = op.apply_transpose(&y)?;
        let zn = z.dot(&z).sqrt();
        x = if zn > 0.0 { z / zn } else { draw(&mut rng) };
    }
    Ok(NormEstimate { norm: best, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_has_unit_norm() {
        let est = power_iteration(&DenseOperator::identity(10), 3, 1).unwrap();
        assert!((est.norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_dominant_value() {
        let op = DenseOperator::new(array![[3.0, 0.0], [0.0, 1.0]]);
        let est = power_iteration(&op, 60, 5).unwrap();
        assert!((est.norm - 3.0).abs() < 1e-9);
        for w in est.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn zero_operator_resamples() {
        let op = DenseOperator::new(Array2::zeros((3, 4)));
        let est = power_iteration(&op, 4, 0).unwrap();
        assert_eq!(est.norm, 0.0);
        assert!(power_iteration(&op, 0, 0).is_err());
    }

    #[test]
    fn assemble_roundtrip() {
        let m = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        assert_eq!(assemble_dense(&DenseOperator::new(m.clone())).unwrap(), m);
    }
}
