//! Small dense vector helpers and a cyclic Jacobi eigensolver.
//!
//! Agent variables are plain `Vec<T>`; a block of agent variables is a
//! `Vec<Vec<T>>` with one row per agent.

use crate::error::{DsboError, Result};
use crate::scalar::Scalar;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&u, &v)| u * v).sum()
}

#[inline]
pub fn norm_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    norm_sq(a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&u, &v)| u - v).collect()
}

pub fn scale<T: Scalar>(alpha: T, a: &[T]) -> Vec<T> {
    a.iter().map(|&v| alpha * v).collect()
}

pub fn dist_sq<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)).sum()
}

/// Concatenate two vectors.
pub fn concat<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// Arithmetic mean of a nonempty set of equal-length rows.
pub fn mean_rows<T: Scalar>(rows: &[Vec<T>]) -> Vec<T> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut acc = vec![T::zero(); dim];
    for r in rows {
        axpy(T::one(), r, &mut acc);
    }
    let inv = T::one() / T::of(rows.len().max(1) as f64);
    acc.iter_mut().for_each(|v| *v *= inv);
    acc
}

/// `(1/n) Σ_i ‖row_i − mean‖²`.
pub fn deviation_energy<T: Scalar>(rows: &[Vec<T>]) -> T {
    if rows.is_empty() {
        return T::zero();
    }
    let m = mean_rows(rows);
    let total: T = rows.iter().map(|r| dist_sq(r, &m)).sum();
    total / T::of(rows.len() as f64)
}

pub fn all_finite<T: Scalar>(a: &[T]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Eigenvalues of a symmetric `n×n` row-major matrix, sorted descending.
/// Computed in double precision.
pub fn symmetric_eigenvalues<T: Scalar>(entries: &[T], n: usize) -> Result<Vec<T>> {
    if entries.len() != n * n {
        return Err(DsboError::InvalidMatrix(format!(
            "expected {} entries, got {}",
            n * n,
            entries.len()
        )));
    }
    if !all_finite(entries) {
        return Err(DsboError::InvalidMatrix("matrix has non-finite entries".into()));
    }
    let m = nalgebra::DMatrix::from_row_iterator(n, n, entries.iter().map(|v| v.as_f64()));
    let mut eig: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|u, v| v.total_cmp(u));
    Ok(eig.into_iter().map(T::of).collect())
}
