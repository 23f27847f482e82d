//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{LcdError, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Singular values in descending order. Handles empty matrices.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &Matrix, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        None => 0,
        Some(&top) if top <= f64::MIN_POSITIVE => 0,
        Some(&top) => s.iter().filter(|&&v| v > rel_tol * top).count(),
    }
}

/// Moore–Penrose pseudo-inverse with relative cutoff.
pub fn pinv(m: &Matrix) -> Matrix {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Matrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let top = svd.singular_values.iter().fold(0.0_f64, |a, &b| a.max(b));
    let cutoff = top * 1e-13 * (m.nrows().max(m.ncols()) as f64);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = Matrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            out += (vt.row(k).transpose() * u.column(k).transpose()) / s;
        }
    }
    out
}

/// Inverse of a square matrix via LU, with an error on singularity.
pub fn inverse(m: &Matrix) -> Result<Matrix> {
    if m.nrows() != m.ncols() {
        return Err(LcdError::ShapeMismatch(format!(
            "cannot invert {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    m.clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or_else(|| LcdError::Singular("matrix is not invertible".into()))
}

/// `‖estimate − truth‖_F / ‖truth‖_F`.
pub fn relative_frobenius_error(truth: &Matrix, estimate: &Matrix) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(LcdError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            truth.shape(),
            estimate.shape()
        )));
    }
    let n = truth.norm();
    if n == 0.0 {
        return Err(LcdError::InvalidInput("truth has zero norm".into()));
    }
    Ok((estimate - truth).norm() / n)
}

/// Least-norm solution and null-space basis of `a x = b`.
///
/// Returns `(x, basis)` where the columns of `basis` span the null space of `a`
/// under the relative rank tolerance `rel_tol`.
pub fn least_norm_solve(a: &Matrix, b: &Vector, rel_tol: f64) -> (Vector, Matrix) {
    let n = a.ncols();
    if a.nrows() == 0 {
        return (Vector::zeros(n), Matrix::identity(n, n));
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let top = svd.singular_values.iter().fold(0.0_f64, |acc, &s| acc.max(s));
    let mut x = Vector::zeros(n);
    let mut kept = Vec::new();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if top > 0.0 && s > rel_tol * top {
            let coef = u.column(k).dot(b) / s;
            x += vt.row(k).transpose() * coef;
            kept.push(k);
        }
    }
    // Complete the row space to an orthonormal basis of R^n; the remainder is the kernel.
    let row_space: Vec<Vector> = kept.iter().map(|&k| vt.row(k).transpose()).collect();
    let mut basis = Vec::new();
    for e in 0..n {
        let mut v = Vector::zeros(n);
        v[e] = 1.0;
        for w in row_space.iter().chain(basis.iter()) {
            let c = w.dot(&v);
            v -= w * c;
        }
        let nv = v.norm();
        if nv > 1e-8 {
            basis.push(v / nv);
        }
        if row_space.len() + basis.len() == n {
            break;
        }
    }
    let cols: Vec<Vector> = basis;
    let basis = if cols.is_empty() {
        Matrix::zeros(n, 0)
    } else {
        Matrix::from_columns(&cols)
    };
    (x, basis)
}

/// Relative ℓ2 distance `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Matrix of a permutation `sigma`, with `P[i, sigma[i]] = 1`.
pub fn permutation_matrix(sigma: &[usize]) -> Matrix {
    let q = sigma.len();
    let mut p = Matrix::zeros(q, q);
    for (i, &j) in sigma.iter().enumerate() {
        p[(i, j)] = 1.0;
    }
    p
}

/// Bijective assignment maximising `Σ score[row][col]`, by DP over column subsets.
///
/// Suitable for the small `q` used throughout (q ≤ 16).
pub fn max_weight_assignment(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    assert!(n <= 20, "assignment DP limited to 20 rows");
    let full = 1usize << n;
    let mut best = vec![f64::NEG_INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    best[0] = 0.0;
    for mask in 0..full {
        if best[mask] == f64::NEG_INFINITY {
            continue;
        }
        let row = mask.count_ones() as usize;
        if row == n {
            continue;
        }
        for col in 0..n {
            if mask & (1 << col) == 0 {
                let next = mask | (1 << col);
                let v = best[mask] + score[row][col];
                if v > best[next] {
                    best[next] = v;
                    choice[next] = col;
                }
            }
        }
    }
    let mut assignment = vec![0; n];
    let mut mask = full - 1;
    for row in (0..n).rev() {
        let col = choice[mask];
        assignment[row] = col;
        mask &= !(1 << col);
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_frobenius_hand_value() {
        let truth = Matrix::identity(2, 2);
        let mut est = truth.clone();
        est[(0, 1)] = 0.1;
        let e = relative_frobenius_error(&truth, &est).unwrap();
        assert!((e - 0.1 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(relative_frobenius_error(&truth, &truth).unwrap(), 0.0);
        assert!((relative_frobenius_error(&truth, &(&truth * 2.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!(relative_frobenius_error(&Matrix::zeros(2, 2), &truth).is_err());
    }

    #[test]
    fn least_norm_recovers_kernel() {
        let a = Matrix::from_row_slice(1, 2, &[-14.0, 5.0]);
        let b = Vector::from_vec(vec![-105.0]);
        let (x, basis) = least_norm_solve(&a, &b, 1e-10);
        assert!(((&a * &x)[0] + 105.0).abs() < 1e-10);
        assert_eq!(basis.ncols(), 1);
        assert!((&a * basis.column(0)).norm() < 1e-12);
    }

    #[test]
    fn assignment_prefers_diagonal() {
        let s = vec![vec![1.0, 0.0, 0.0], vec![0.9, 1.0, 0.0], vec![0.0, 0.0, 0.5]];
        assert_eq!(max_weight_assignment(&s), vec![0, 1, 2]);
        let s = vec![vec![1.0, 0.9], vec![1.0, 0.0]];
        assert_eq!(max_weight_assignment(&s), vec![1, 0]);
    }

    #[test]
    fn pinv_of_tall_matrix_is_left_inverse() {
        let a = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, 3.0, -1.0]);
        let c = pinv(&a);
        assert!((c * a - Matrix::identity(2, 2)).norm() < 1e-12);
    }
}
