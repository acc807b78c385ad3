//! Small dense linear algebra: partial-pivot LU factorization on row-major
//! buffers. Matrices here are tiny (invertible linear flow layers and
//! numeric Jacobians, dimension <= 32), so there is no blocking or BLAS.

use crate::error::{Error, Result};

/// LU factorization PA = LU with row pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    /// Combined L (unit lower, below diagonal) and U (upper incl. diagonal).
    lu: Vec<f64>,
    /// Row permutation: pivot row chosen at each elimination step.
    piv: Vec<usize>,
    /// Sign of the permutation (+1/-1).
    sign: f64,
}

/// Factor a row-major n x n matrix. Fails on non-square input, non-finite
/// entries, or a pivot smaller than 1e-300 in magnitude (numerically
/// singular).
pub fn lu_factor(a: &[f64], n: usize) -> Result<Lu> {
    if a.len() != n * n {
        return Err(Error::DimMismatch {
            what: "lu_factor",
            expected: n * n,
            got: a.len(),
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "lu_factor" });
    }
    let mut lu = a.to_vec();
    let mut piv = vec![0usize; n];
    let mut sign = 1.0;
    for k in 0..n {
        // Pick the largest magnitude pivot in column k.
        let mut p = k;
        let mut best = lu[k * n + k].abs();
        for i in (k + 1)..n {
            let v = lu[i * n + k].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if !(best > 1e-300) {
            return Err(Error::Singular { what: "lu_factor" });
        }
        piv[k] = p;
        if p != k {
            for j in 0..n {
                lu.swap(k * n + j, p * n + j);
            }
            sign = -sign;
        }
        let pivot = lu[k * n + k];
        for i in (k + 1)..n {
            let m = lu[i * n + k] / pivot;
            lu[i * n + k] = m;
            for j in (k + 1)..n {
                lu[i * n + j] -= m * lu[k * n + j];
            }
        }
    }
    Ok(Lu { n, lu, piv, sign })
}

impl Lu {
    pub fn log_abs_det(&self) -> f64 {
        (0..self.n).map(|k| self.lu[k * self.n + k].abs().ln()).sum()
    }

    pub fn det_sign(&self) -> f64 {
        let mut s = self.sign;
        for k in 0..self.n {
            if self.lu[k * self.n + k] < 0.0 {
                s = -s;
            }
        }
        s
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::DimMismatch {
                what: "lu solve",
                expected: n,
                got: b.len(),
            });
        }
        let mut x = b.to_vec();
        // Apply the row swaps in elimination order, then forward/back subst.
        for k in 0..n {
            x.swap(k, self.piv[k]);
        }
        for k in 1..n {
            for j in 0..k {
                x[k] -= self.lu[k * n + j] * x[j];
            }
        }
        for k in (0..n).rev() {
            for j in (k + 1)..n {
                x[k] -= self.lu[k * n + j] * x[j];
            }
            x[k] /= self.lu[k * n + k];
        }
        Ok(x)
    }

    /// Full inverse, row-major.
    pub fn inverse(&self) -> Result<Vec<f64>> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.fill(0.0);
            e[j] = 1.0;
            let col = self.solve(&e)?;
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        Ok(inv)
    }
}

/// y = x A for row vector x and row-major n x n matrix A.
pub(crate) fn vec_mat(x: &[f64], a: &[f64], n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for (i, &xi) in x.iter().enumerate() {
        let row = &a[i * n..(i + 1) * n];
        for j in 0..n {
            y[j] += xi * row[j];
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_logdet_and_solves_trivially() {
        let n = 4;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        let lu = lu_factor(&a, n).unwrap();
        assert_eq!(lu.log_abs_det(), 0.0);
        assert_eq!(lu.det_sign(), 1.0);
        let b = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(lu.solve(&b).unwrap(), b);
    }

    #[test]
    fn known_determinant() {
        // det [[2, 1], [1, 3]] = 5.
        let a = [2.0, 1.0, 1.0, 3.0];
        let lu = lu_factor(&a, 2).unwrap();
        assert!((lu.log_abs_det() - 5f64.ln()).abs() < 1e-14);
        assert_eq!(lu.det_sign(), 1.0);
    }

    #[test]
    fn negative_determinant_sign() {
        // Swap matrix has det -1.
        let a = [0.0, 1.0, 1.0, 0.0];
        let lu = lu_factor(&a, 2).unwrap();
        assert!(lu.log_abs_det().abs() < 1e-14);
        assert_eq!(lu.det_sign(), -1.0);
    }

    #[test]
    fn solve_and_inverse_agree_on_random_matrix() {
        let mut rng = crate::numerics::Rng::from_seed(3);
        let n = 6;
        let a: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
        let lu = lu_factor(&a, n).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let x = lu.solve(&b).unwrap();
        // Residual A x - b.
        for i in 0..n {
            let mut r = -b[i];
            for j in 0..n {
                r += a[i * n + j] * x[j];
            }
            assert!(r.abs() < 1e-10, "residual {r}");
        }
        let inv = lu.inverse().unwrap();
        // A * inv ~ I.
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += a[i * n + k] * inv[k * n + j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = [1.0, 2.0, 2.0, 4.0]; // rank 1
        assert!(matches!(
            lu_factor(&a, 2),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let a = [0.0, 1.0, 2.0, 0.0];
        let lu = lu_factor(&a, 2).unwrap();
        assert!((lu.log_abs_det() - 2f64.ln()).abs() < 1e-14);
        let x = lu.solve(&[3.0, 4.0]).unwrap();
        // x solves [[0,1],[2,0]] x = (3,4) => x = (2, 3).
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn vec_mat_row_convention() {
        // x A with A = [[1,2],[3,4]] and x = (1, 1) gives (4, 6).
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(vec_mat(&[1.0, 1.0], &a, 2), vec![4.0, 6.0]);
    }
}
