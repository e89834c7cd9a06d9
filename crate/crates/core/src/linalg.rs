use nalgebra::{DMatrix, DVector};

/// Least-squares solution of `design · β ≈ y` with optional ridge damping.
///
/// `design` is row-major with `cols` columns. Ridge damping is applied by
/// augmenting the system with `√ridge · I`, which keeps the solve in SVD form.
pub(crate) fn least_squares(design: &[f64], cols: usize, y: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let rows = y.len();
    debug_assert_eq!(design.len(), rows * cols);
    if rows == 0 || cols == 0 {
        return None;
    }
    let extra = if ridge > 0.0 { cols } else { 0 };
    let mut a = DMatrix::<f64>::zeros(rows + extra, cols);
    let mut b = DVector::<f64>::zeros(rows + extra);
    for r in 0..rows {
        for c in 0..cols {
            a[(r, c)] = design[r * cols + c];
        }
        b[r] = y[r];
    }
    if extra > 0 {
        let s = ridge.sqrt();
        for c in 0..cols {
            a[(rows + c, c)] = s;
        }
    }
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = max_sv * 1e-13 * (rows.max(cols) as f64);
    let sol = svd.solve(&b, eps).ok()?;
    let out: Vec<f64> = sol.iter().copied().collect();
    out.iter().all(|v| v.is_finite()).then_some(out)
}
