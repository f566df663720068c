//! Small dense linear algebra on row-major slices.
//!
//! Per-step work (matrix products, the σ₁ solve) runs on caller-owned buffers
//! so the simulation inner loop does not allocate. Once-per-path work (the
//! SPD solve against Q_T, its spectrum) goes through nalgebra.

use nalgebra::{DMatrix, DVector};

/// `out = a · x` for an `rows × cols` matrix `a`.
#[inline]
pub fn mat_vec(a: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &a[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (aij, xj) in row.iter().zip(x) {
            acc += aij * xj;
        }
        *o = acc;
    }
}

/// `out = a · bᵀ` for square `n × n` matrices.
#[inline]
pub fn mat_mul_bt(a: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a[i * n + k] * b[j * n + k];
            }
            out[i * n + j] = acc;
        }
    }
}

/// `out = a · aᵀ`, filled symmetrically (upper triangle mirrored).
#[inline]
pub fn gram(a: &[f64], n: usize, out: &mut [f64]) {
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a[i * n + k] * a[j * n + k];
            }
            out[i * n + j] = acc;
            out[j * n + i] = acc;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn trace(a: &[f64], n: usize) -> f64 {
    (0..n).map(|i| a[i * n + i]).sum()
}

/// Smallest eigenvalue of a symmetric `n × n` matrix.
pub fn min_eigenvalue_sym(a: &[f64], n: usize) -> f64 {
    match n {
        1 => a[0],
        2 => {
            let (p, q, r) = (a[0], a[1], a[3]);
            let mean = 0.5 * (p + r);
            let half = (0.25 * (p - r) * (p - r) + q * q).sqrt();
            mean - half
        }
        _ => {
            let m = DMatrix::from_row_slice(n, n, a);
            m.symmetric_eigenvalues().min()
        }
    }
}

/// Cholesky factor of a symmetric positive definite matrix, used to apply
/// its inverse to several right-hand sides without forming the inverse.
pub struct SpdFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    n: usize,
}

impl SpdFactor {
    pub fn new(a: &[f64], n: usize) -> Option<Self> {
        let m = DMatrix::from_row_slice(n, n, a);
        m.cholesky().map(|chol| Self { chol, n })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = DVector::from_column_slice(b);
        self.chol.solve(&rhs).as_slice().to_vec()
    }

    /// Trace of `A⁻¹ B` for a row-major `B`, solved column by column.
    pub fn trace_solve(&self, b: &[f64]) -> f64 {
        let n = self.n;
        let mut tr = 0.0;
        let mut col = vec![0.0; n];
        for j in 0..n {
            for i in 0..n {
                col[i] = b[i * n + j];
            }
            let w = self.solve(&col);
            tr += w[j];
        }
        tr
    }
}

/// Spectral norm of an `rows × cols` matrix by power iteration on `aᵀa`.
pub fn spectral_norm(a: &[f64], rows: usize, cols: usize) -> f64 {
    if rows == 1 && cols == 1 {
        return a[0].abs();
    }
    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut av = vec![0.0; rows];
    let mut atav = vec![0.0; cols];
    let mut sigma = 0.0;
    for _ in 0..200 {
        mat_vec(a, rows, cols, &v, &mut av);
        for (j, out) in atav.iter_mut().enumerate() {
            *out = (0..rows).map(|i| a[i * cols + j] * av[i]).sum();
        }
        let nrm = norm(&atav);
        if nrm == 0.0 {
            return 0.0;
        }
        for (vj, aj) in v.iter_mut().zip(&atav) {
            *vj = aj / nrm;
        }
        let next = nrm.sqrt();
        if (next - sigma).abs() <= 1e-14 * next {
            sigma = next;
            break;
        }
        sigma = next;
    }
    sigma
}

/// In-place LU with partial pivoting for small square systems.
///
/// `factor` returns `None` for an exactly singular matrix; the condition
/// estimate is the 1-norm condition number computed through the factors.
pub struct SmallLu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
    work: Vec<f64>,
}

impl SmallLu {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            lu: vec![0.0; n * n],
            piv: vec![0; n],
            work: vec![0.0; n],
        }
    }

    pub fn factor(&mut self, a: &[f64]) -> bool {
        let n = self.n;
        self.lu.copy_from_slice(a);
        for (i, p) in self.piv.iter_mut().enumerate() {
            *p = i;
        }
        for k in 0..n {
            let mut best = k;
            let mut best_abs = self.lu[k * n + k].abs();
            for r in k + 1..n {
                let v = self.lu[r * n + k].abs();
                if v > best_abs {
                    best = r;
                    best_abs = v;
                }
            }
            if best_abs == 0.0 || !best_abs.is_finite() {
                return false;
            }
            if best != k {
                for c in 0..n {
                    self.lu.swap(k * n + c, best * n + c);
                }
                self.piv.swap(k, best);
            }
            let pivot = self.lu[k * n + k];
            for r in k + 1..n {
                let f = self.lu[r * n + k] / pivot;
                self.lu[r * n + k] = f;
                for c in k + 1..n {
                    self.lu[r * n + c] -= f * self.lu[k * n + c];
                }
            }
        }
        true
    }

    pub fn solve(&mut self, b: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            self.work[i] = b[self.piv[i]];
        }
        for i in 0..n {
            let mut acc = self.work[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * self.work[j];
            }
            self.work[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = self.work[i];
            for j in i + 1..n {
                acc -= self.lu[i * n + j] * self.work[j];
            }
            self.work[i] = acc / self.lu[i * n + i];
        }
        out[..n].copy_from_slice(&self.work);
    }

    /// `‖a‖₁ · ‖a⁻¹‖₁` for the matrix last passed to [`factor`](Self::factor).
    pub fn condition_1(&mut self, a: &[f64]) -> f64 {
        let n = self.n;
        if n == 1 {
            return 1.0;
        }
        let col_norm = |m: &[f64], j: usize| (0..n).map(|i| m[i * n + j].abs()).sum::<f64>();
        let a_norm = (0..n).map(|j| col_norm(a, j)).fold(0.0, f64::max);
        let mut e = vec![0.0; n];
        let mut x = vec![0.0; n];
        let mut inv_norm: f64 = 0.0;
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            self.solve(&e, &mut x);
            inv_norm = inv_norm.max(x.iter().map(|v| v.abs()).sum());
        }
        a_norm * inv_norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_solve_and_trace() {
        // A = [[4,1],[1,3]], B = I -> tr(A^-1) = (3+4)/11
        let a = [4.0, 1.0, 1.0, 3.0];
        let f = SpdFactor::new(&a, 2).unwrap();
        let x = f.solve(&[1.0, 2.0]);
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-14);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-14);
        let tr = f.trace_solve(&[1.0, 0.0, 0.0, 1.0]);
        assert!((tr - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn indefinite_matrix_has_no_cholesky() {
        assert!(SpdFactor::new(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }

    #[test]
    fn min_eig_closed_forms() {
        assert_eq!(min_eigenvalue_sym(&[2.5], 1), 2.5);
        let l = min_eigenvalue_sym(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((l - 1.0).abs() < 1e-15);
        let l3 = min_eigenvalue_sym(&[2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.5], 3);
        assert!((l3 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_diagonal_and_rank_one() {
        assert!((spectral_norm(&[3.0, 0.0, 0.0, -5.0], 2, 2) - 5.0).abs() < 1e-12);
        // u vᵀ with |u| = sqrt(2), |v| = sqrt(5)
        let a = [1.0, 2.0, 1.0, 2.0];
        assert!((spectral_norm(&a, 2, 2) - (10.0f64).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn lu_solves_and_estimates_condition() {
        let a = [0.0, 2.0, 1.0, 1.0];
        let mut lu = SmallLu::new(2);
        assert!(lu.factor(&a));
        let mut x = [0.0; 2];
        lu.solve(&[4.0, 3.0], &mut x);
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        let k = lu.condition_1(&a);
        // a^-1 = [[-0.5, 1],[0.5, 0]] -> ‖a‖₁ = 3, ‖a⁻¹‖₁ = 1
        assert!((k - 3.0).abs() < 1e-14);
        assert!(!lu.factor(&[1.0, 2.0, 2.0, 4.0]));
    }
}
