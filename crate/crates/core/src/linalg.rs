//! Dense least-squares and small linear solves.

/// Least-squares solution of `A x ≈ b` by Householder QR.
///
/// `a` is column-major: `a[j]` is column `j`, every column of length `b.len()`.
/// Returns `None` when a column is numerically dependent on the previous ones.
pub fn lstsq_columns(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let m = b.len();
    let n = a.len();
    if n == 0 {
        return Some(Vec::new());
    }
    if n > m {
        return None;
    }
    let mut q: Vec<Vec<f64>> = a.to_vec();
    let mut rhs = b.to_vec();
    let scale = q
        .iter()
        .flat_map(|c| c.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    let mut diag = vec![0.0; n];
    for k in 0..n {
        let norm = q[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-13 * scale {
            return None;
        }
        let alpha = if q[k][k] > 0.0 { -norm } else { norm };
        // v = x - alpha e1, stored in place of column k below the diagonal
        q[k][k] -= alpha;
        let vnorm2: f64 = q[k][k..].iter().map(|v| v * v).sum();
        diag[k] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        let v: Vec<f64> = q[k][k..].to_vec();
        for col in q.iter_mut().skip(k + 1) {
            let dot: f64 = v.iter().zip(&col[k..]).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in col[k..].iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
        let dot: f64 = v.iter().zip(&rhs[k..]).map(|(a, b)| a * b).sum();
        let f = 2.0 * dot / vnorm2;
        for (r, vi) in rhs[k..].iter_mut().zip(&v) {
            *r -= f * vi;
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = rhs[k];
        for j in k + 1..n {
            s -= q[j][k] * x[j];
        }
        x[k] = s / diag[k];
    }
    Some(x)
}

/// Solve the square system `A x = b` (row-major `A`) by Gaussian elimination
/// with partial pivoting. Returns `None` for a singular matrix.
pub fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[piv][k].abs() < 1e-300 {
            return None;
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Some(x)
}
