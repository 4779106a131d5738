//! Small dense helpers for the per-bin linear algebra (M x M at most).

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Lower Cholesky factor of a real symmetric positive definite matrix
/// given row-major as `n x n`.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::NumericalFailure(format!(
                        "matrix not positive definite (pivot {i} = {s:e})"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solves `L L^T x = b` for complex `b` given the real lower factor `L`.
pub fn cholesky_solve(l: &[f64], n: usize, b: &[Complex64]) -> Vec<Complex64> {
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for p in 0..i {
            s -= y[p] * l[i * n + p];
        }
        y[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for p in i + 1..n {
            s -= y[p] * l[p * n + i];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

/// `sum_i conj(a_i) b_i`
#[inline]
pub fn dot_h(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[inline]
pub fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let l = cholesky(&a, 3).unwrap();
        let b = [Complex64::new(1.0, 2.0), Complex64::new(-1.0, 0.5), Complex64::new(0.0, 3.0)];
        let x = cholesky_solve(&l, 3, &b);
        for i in 0..3 {
            let r: Complex64 = (0..3).map(|j| x[j] * a[i * 3 + j]).sum();
            assert!((r - b[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
        assert!(cholesky(&[1.0, 1.0, 1.0, 1.0], 2).is_err());
    }
}
