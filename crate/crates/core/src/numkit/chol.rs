use super::matrix::Matrix;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-9;

/// Cholesky factor `L` (lower triangular) with `L·Lᵀ = a`.
///
/// Only the lower triangle of `a` is read once symmetry has been checked.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: a.cols(),
        });
    }
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let n = a.rows();
    let src = a.as_slice();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = src[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { row: j, pivot: d });
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = src[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Ok(Matrix::from_raw(n, n, l))
}

/// Solves `L·y = b` in place by forward substitution.
pub fn forward_substitute(l: &Matrix, b: &mut [f64]) -> Result<()> {
    let n = l.rows();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let data = l.as_slice();
    for i in 0..n {
        let row = &data[i * n..i * n + i];
        let s: f64 = row.iter().zip(&b[..i]).map(|(a, y)| a * y).sum();
        b[i] = (b[i] - s) / data[i * n + i];
    }
    Ok(())
}

/// Solves `Lᵀ·x = y` in place by back substitution.
pub fn backward_substitute(l: &Matrix, y: &mut [f64]) -> Result<()> {
    let n = l.rows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    let data = l.as_slice();
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= data[k * n + i] * y[k];
        }
        y[i] = s / data[i * n + i];
    }
    Ok(())
}

/// Solves `(L·Lᵀ)·x = b` given the Cholesky factor `L`.
pub fn solve_chol(l: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if !l.is_square() {
        return Err(Error::DimensionMismatch {
            expected: l.rows(),
            got: l.cols(),
        });
    }
    let mut x = b.to_vec();
    forward_substitute(l, &mut x)?;
    backward_substitute(l, &mut x)?;
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngStream;

    fn random_spd(n: usize, rng: &mut RngStream) -> Matrix {
        let g = Matrix::new(
            n,
            n,
            (0..n * n).map(|_| rng.standard_gaussian()).collect(),
        )
        .unwrap();
        let mut a = g.matmul(&g.transpose()).unwrap();
        for i in 0..n {
            a.set(i, i, a.get(i, i) + n as f64);
        }
        a
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        let diff = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        diff / a.max_abs()
    }

    /// Gaussian elimination with partial pivoting, kept independent of the
    /// Cholesky path.
    fn gauss_solve(a: &Matrix, b: &[f64]) -> Vec<f64> {
        let n = a.rows();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = a.row(i).to_vec();
                r.push(b[i]);
                r
            })
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
                .unwrap();
            m.swap(col, piv);
            for r in (col + 1)..n {
                let f = m[r][col] / m[col][col];
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|k| m[i][k] * x[k]).sum();
            x[i] = (m[i][n] - s) / m[i][i];
        }
        x
    }

    #[test]
    fn identity_factor_is_identity() {
        assert_eq!(cholesky(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn two_by_two_multiplies_back() {
        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        assert_eq!(l.get(0, 1), 0.0);
        let back = l.matmul(&l.transpose()).unwrap();
        assert!(rel_err(&a, &back) <= 1e-12);
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(
            cholesky(&a),
            Err(Error::NotPositiveDefinite { row: 1, .. })
        ));
    }

    #[test]
    fn asymmetric_and_rectangular_are_rejected() {
        let a = Matrix::from_rows(&[[1.0, 0.5], [0.4, 1.0]]).unwrap();
        assert!(matches!(cholesky(&a), Err(Error::NotSymmetric(_))));
        assert!(cholesky(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn round_trip_up_to_128() {
        let mut rng = RngStream::new(7, 0);
        for n in [1, 2, 5, 17, 64, 128] {
            let a = random_spd(n, &mut rng);
            let l = cholesky(&a).unwrap();
            let back = l.matmul(&l.transpose()).unwrap();
            assert!(rel_err(&a, &back) <= 1e-9, "n={n}");
        }
    }

    #[test]
    fn solve_identity() {
        let x = solve_chol(&Matrix::identity(2), &[1.0, 2.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
        assert!(matches!(
            solve_chol(&Matrix::identity(2), &[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn solve_residual_and_elimination_oracle() {
        let mut rng = RngStream::new(11, 3);
        for n in [5, 8, 16, 32] {
            let a = random_spd(n, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.standard_gaussian()).collect();
            let x = solve_chol(&cholesky(&a).unwrap(), &b).unwrap();
            let ax = a.matvec(&x).unwrap();
            let res: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(res / bn <= 1e-8);

            let oracle = gauss_solve(&a, &b);
            let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (u, v) in x.iter().zip(&oracle) {
                assert!((u - v).abs() <= 1e-8 * scale, "n={n}");
            }
        }
    }
}
