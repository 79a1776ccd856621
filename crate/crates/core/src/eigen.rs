//! Cyclic Jacobi eigensolver for small real symmetric matrices.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenpairs sorted by descending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Array1<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Array2<f64>,
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[[i, j]] * a[[i, j]];
            }
        }
    }
    sum.sqrt()
}

fn check_symmetric(a: ArrayView2<'_, f64>) -> Result<()> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(Error::shape("symmetric matrix", format!("{rows}x{rows}"), format!("{rows}x{cols}")));
    }
    let scale = a.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    for i in 0..rows {
        for j in (i + 1)..rows {
            let gap = (a[[i, j]] - a[[j, i]]).abs();
            if gap > SYMMETRY_TOL * scale || gap.is_nan() {
                return Err(Error::Asymmetric { row: i, col: j, gap });
            }
        }
    }
    Ok(())
}

/// Full eigendecomposition `A = V diag(values) V^T`.
///
/// Sweeps over all `(p, q)` pairs in row order, zeroing `a[p,q]` with one
/// plane rotation each, until the off-diagonal Frobenius norm falls below
/// `1e-12 * max(1, ||A||_F)`. Ties in the final ordering keep the original
/// diagonal order, and each eigenvector is flipped so that its
/// largest-magnitude component is positive.
pub fn symmetric_eigen(matrix: ArrayView2<'_, f64>) -> Result<SymmetricEigen> {
    check_symmetric(matrix)?;
    let n = matrix.nrows();
    // symmetrize exactly so that rotations act on a truly symmetric matrix
    let mut a = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (matrix[[i, j]] + matrix[[j, i]]));
    let mut v = Array2::<f64>::eye(n);
    let frob = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = OFF_DIAGONAL_TOL * frob.max(1.0);

    let mut converged = off_diagonal_norm(&a) < tol;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // A <- J^T A J, touching rows/cols p and q only
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;

                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        converged = off_diagonal_norm(&a) < tol;
    }
    if !converged {
        return Err(Error::Convergence {
            solver: "Jacobi eigensolver",
            iterations: sweeps,
        });
    }

    let diag: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep their index order
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]));

    let mut values = Array1::zeros(n);
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = diag[src];
        let mut col = v.column(src).to_owned();
        let pivot = col
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (i, x)| if x.abs() > best.1 { (i, x.abs()) } else { best })
            .0;
        if col[pivot] < 0.0 {
            col.mapv_inplace(|x| -x);
        }
        vectors.column_mut(dst).assign(&col);
    }
    Ok(SymmetricEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn diagonal_input() {
        let eig = symmetric_eigen(array![[4.0, 0.0], [0.0, 1.0]].view()).unwrap();
        assert_eq!(eig.values, array![4.0, 1.0]);
        assert_eq!(eig.vectors, Array2::<f64>::eye(2));

        let eig = symmetric_eigen(array![[1.0, 0.0], [0.0, 4.0]].view()).unwrap();
        assert_eq!(eig.values, array![4.0, 1.0]);
        assert_eq!(eig.vectors, array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn ties_keep_index_order() {
        let eig = symmetric_eigen(Array2::<f64>::eye(3).view()).unwrap();
        assert_eq!(eig.vectors, Array2::<f64>::eye(3));
    }

    #[test]
    fn two_by_two_analytic() {
        let eig = symmetric_eigen(array![[2.0, 2.0], [2.0, 2.0]].view()).unwrap();
        assert_abs_diff_eq!(eig.values[0], 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.values[1], 0.0, epsilon = 1e-14);
        let h = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(eig.vectors[[0, 0]], h, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.vectors[[1, 0]], h, epsilon = 1e-14);
    }

    #[test]
    fn rejects_asymmetric() {
        let err = symmetric_eigen(array![[1.0, 2.0], [2.1, 1.0]].view());
        assert!(matches!(err, Err(Error::Asymmetric { row: 0, col: 1, .. })));
        assert!(symmetric_eigen(Array2::<f64>::zeros((2, 3)).view()).is_err());
    }

    fn residual_ok(m: &Array2<f64>) {
        let eig = symmetric_eigen(m.view()).unwrap();
        let n = m.nrows();
        for k in 0..n {
            let v = eig.vectors.column(k);
            let lam = eig.values[k];
            let r = m.dot(&v) - &v * lam;
            let res = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(res < 1e-8 * lam.abs().max(1.0), "residual {res}");
            if k + 1 < n {
                assert!(eig.values[k] >= eig.values[k + 1]);
            }
            let pivot = v.iter().cloned().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(pivot > 0.0);
        }
        let gram = eig.vectors.t().dot(&eig.vectors);
        let dev = (&gram - &Array2::<f64>::eye(n)).iter().fold(0.0f64, |a, x| a.max(x.abs()));
        assert!(dev < 1e-10);
    }

    #[test]
    fn random_psd_six_by_six() {
        let g = Array2::from_shape_fn((6, 9), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        residual_ok(&g.dot(&g.t()));
    }

    proptest! {
        #[test]
        fn random_symmetric(entries in proptest::collection::vec(-10.0f64..10.0, 36)) {
            let a = Array2::from_shape_vec((6, 6), entries).unwrap();
            let s = &a + &a.t();
            residual_ok(&s);
        }
    }
}
