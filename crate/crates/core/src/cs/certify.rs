//! Desk-scale certificates: operator norm, restricted isometry constants and
//! dual certificates for exact l1 recovery.

use nalgebra::DMatrix;
use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{PatError, Result};
use crate::linop::{power_iteration, LinearOperator};

/// Power-iteration estimate of `||A|| = sqrt(lambda_max(A^T A))`; a lower
/// bound on the true norm that grows with `iters`.
pub fn op_norm(op: &dyn LinearOperator, iters: usize, seed: u64) -> Result<f64> {
    Ok(power_iteration(op, iters, seed)?.norm)
}

const RIP_BUDGET: u128 = 1_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

fn to_dmatrix(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Exact restricted isometry constant of order `s`: the smallest `delta`
/// with `(1 - delta)|z|^2 <= |A z|^2 <= (1 + delta)|z|^2` for every
/// `s`-sparse `z`, by enumerating all column supports of size `s`.
pub fn rip_constant(a: ArrayView2<f64>, s: usize) -> Result<f64> {
    let n = a.ncols();
    if s == 0 || s > n {
        return Err(PatError::InvalidArgument(format!(
            "sparsity must be in 1..={n}, got {s}"
        )));
    }
    let supports = binomial(n, s);
    if supports > RIP_BUDGET {
        return Err(PatError::Budget {
            supports,
            budget: RIP_BUDGET,
        });
    }
    let dense = to_dmatrix(a);
    let gram = dense.transpose() * &dense;
    let mut idx: Vec<usize> = (0..s).collect();
    let mut delta = 0.0f64;
    loop {
        let sub = DMatrix::from_fn(s, s, |i, j| gram[(idx[i], idx[j])]);
        let eig = sub.symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| {
            (lo.min(l), hi.max(l))
        });
        delta = delta.max(hi - 1.0).max(1.0 - lo);

        // Next combination in lexicographic order.
        let mut i = s;
        loop {
            if i == 0 {
                return Ok(delta);
            }
            i -= 1;
            if idx[i] < n - s + i {
                idx[i] += 1;
                for j in i + 1..s {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceVerdict {
    /// The minimum-norm certificate satisfies both conditions and the
    /// restriction to the support is injective.
    Certified,
    /// The minimum-norm certificate fails strict complementarity; another
    /// certificate may still exist.
    Inconclusive,
    /// The columns on the support are linearly dependent.
    NotInjective,
}

#[derive(Debug, Clone)]
pub struct SourceConditionReport {
    pub eta: Array1<f64>,
    /// `(A^T eta)_i = sign(h_i)` holds on the support.
    pub sign_match: bool,
    /// `max |(A^T eta)_i|` over indices outside the support (0 if none).
    pub strict_interior_max: f64,
    pub injective_on_support: bool,
}

impl SourceConditionReport {
    pub fn verdict(&self) -> SourceVerdict {
        if !self.injective_on_support {
            SourceVerdict::NotInjective
        } else if self.sign_match && self.strict_interior_max < 1.0 {
            SourceVerdict::Certified
        } else {
            SourceVerdict::Inconclusive
        }
    }
}

/// Checks the dual-certificate conditions for exact l1 recovery of `h` from
/// `A h` using the minimum-norm solution `eta` of `A_T^T eta = sign(h_T)`.
pub fn check_source_condition(a: ArrayView2<f64>, h: ArrayView1<f64>) -> Result<SourceConditionReport> {
    if h.len() != a.ncols() {
        return Err(crate::error::shape_err(a.ncols(), h.len()));
    }
    let support: Vec<usize> = (0..h.len()).filter(|&i| h[i] != 0.0).collect();
    let rows = a.nrows();
    if support.is_empty() {
        return Ok(SourceConditionReport {
            eta: Array1::zeros(rows),
            sign_match: true,
            strict_interior_max: 0.0,
            injective_on_support: true,
        });
    }
    let a_t = DMatrix::from_fn(rows, support.len(), |i, j| a[[i, support[j]]]);
    let signs = nalgebra::DVector::from_iterator(support.len(), support.iter().map(|&i| h[i].signum()));

    let svd = a_t.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let tol = rows.max(support.len()) as f64 * f64::EPSILON * sigma_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let injective_on_support = rank == support.len();

    // eta = pinv(A_T^T) signs = U diag(1/sigma) V^T signs.
    let u = svd.u.as_ref().expect("u computed");
    let v_t = svd.v_t.as_ref().expect("v_t computed");
    let coeffs = v_t * &signs;
    let mut eta = nalgebra::DVector::zeros(rows);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            eta += u.column(k) * (coeffs[k] / s);
        }
    }

    let dense = to_dmatrix(a);
    let correlations = dense.transpose() * &eta;
    let sign_match = support
        .iter()
        .zip(signs.iter())
        .all(|(&i, &sg)| (correlations[i] - sg).abs() <= 1e-9);
    let strict_interior_max = (0..h.len())
        .filter(|i| h[*i] == 0.0)
        .map(|i| correlations[i].abs())
        .fold(0.0, f64::max);
    Ok(SourceConditionReport {
        eta: eta.iter().copied().collect(),
        sign_match,
        strict_interior_max,
        injective_on_support,
    })
}
