//! Small dense helpers for the handful of determinants and projections the
//! geometry code needs. Matrices are row-major `n × n` slices.

/// Determinant by LU decomposition with partial pivoting.
pub(crate) fn determinant(mut a: Vec<f64>, n: usize) -> f64 {
    debug_assert_eq!(a.len(), n * n);
    let mut det = 1.0;
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col * n + col].abs();
        for row in (col + 1)..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            det = -det;
        }
        let p = a[col * n + col];
        det *= p;
        for row in (col + 1)..n {
            let factor = a[row * n + col] / p;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
        }
    }
    det
}

/// `ln det` of a symmetric positive semi-definite matrix by elimination with
/// symmetric (diagonal) pivoting. Returns the smallest pivot as the error when
/// a pivot is at or below `floor`.
pub(crate) fn pivoted_log_det(mut a: Vec<f64>, n: usize, floor: f64) -> Result<f64, f64> {
    debug_assert_eq!(a.len(), n * n);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut ln_det = 0.0;
    for step in 0..n {
        let (mut best, mut best_val) = (step, f64::NEG_INFINITY);
        for (idx, &p) in perm.iter().enumerate().skip(step) {
            if a[p * n + p] > best_val {
                best_val = a[p * n + p];
                best = idx;
            }
        }
        if best_val <= floor {
            return Err(best_val);
        }
        perm.swap(step, best);
        let p = perm[step];
        let pivot = a[p * n + p];
        ln_det += pivot.ln();
        for &r in &perm[step + 1..] {
            let factor = a[r * n + p] / pivot;
            if factor == 0.0 {
                continue;
            }
            for &c in &perm[step + 1..] {
                a[r * n + c] -= factor * a[p * n + c];
            }
        }
    }
    Ok(ln_det)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Removes from `r` its components along the orthonormal rows in `basis`.
/// Two passes of modified Gram-Schmidt keep the residual orthogonal to
/// working precision.
pub(crate) fn reject(r: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(r, q);
            r.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
        }
    }
}
