//! Savitzky-Golay smoothing along a 1D series.
//!
//! The center-point weights come from the least-squares normal equations:
//! fitting a degree-`order` polynomial over a window of `2m+1` samples and
//! evaluating it at the window center is a fixed convolution. Edges use
//! mirror padding (reflection about the boundary sample, no edge repeat).

use crate::error::{PtalError, Result};

/// Center-evaluation weights for a window of odd length and a polynomial
/// order strictly below the window length.
pub fn coefficients(window: usize, order: usize) -> Result<Vec<f64>> {
    if window % 2 == 0 || window == 0 {
        return Err(PtalError::Config(format!(
            "savgol window must be odd and >= 1, got {window}"
        )));
    }
    if order >= window {
        return Err(PtalError::Config(format!(
            "savgol order {order} must be < window {window}"
        )));
    }
    let m = (window / 2) as i64;
    let n = order + 1;
    // Normal matrix M[j][k] = sum_i i^(j+k) over i in [-m, m].
    let mut mat = vec![vec![0.0; n]; n];
    for j in 0..n {
        for k in 0..n {
            let mut s = 0.0;
            for i in -m..=m {
                s += (i as f64).powi((j + k) as i32);
            }
            mat[j][k] = s;
        }
    }
    // Solve M y = e0 by Gauss-Jordan elimination with partial pivoting.
    let mut rhs = vec![0.0; n];
    rhs[0] = 1.0;
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if mat[r][col].abs() > mat[piv][col].abs() {
                piv = r;
            }
        }
        mat.swap(col, piv);
        rhs.swap(col, piv);
        let d = mat[col][col];
        if d.abs() < 1e-300 {
            return Err(PtalError::Numeric("singular savgol system".into()));
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = mat[r][col] / d;
            for c in col..n {
                mat[r][c] -= f * mat[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let y: Vec<f64> = (0..n).map(|j| rhs[j] / mat[j][j]).collect();
    // w_i = sum_j y_j * i^j
    let mut w = Vec::with_capacity(window);
    for i in -m..=m {
        let mut acc = 0.0;
        for (j, yj) in y.iter().enumerate() {
            acc += yj * (i as f64).powi(j as i32);
        }
        w.push(acc);
    }
    Ok(w)
}

/// Mirror index about the series boundaries (no edge repeat): -1 -> 1,
/// len -> len-2.
fn mirror(i: isize, len: usize) -> usize {
    let len = len as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= len {
            i = 2 * (len - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Smooths one series. A window longer than the series falls back to the
/// identity (the series is returned unchanged).
pub fn smooth_series(series: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    if window > series.len() {
        return Ok(series.to_vec());
    }
    let w = coefficients(window, order)?;
    let m = (window / 2) as isize;
    let mut out = Vec::with_capacity(series.len());
    for t in 0..series.len() as isize {
        let mut acc = 0.0;
        for (k, wk) in w.iter().enumerate() {
            let src = mirror(t + k as isize - m, series.len());
            acc += wk * series[src];
        }
        out.push(acc);
    }
    Ok(out)
}
