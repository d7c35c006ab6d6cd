//! Index bookkeeping for the sliding window.

use nalgebra::{DMatrix, DVector};

/// Moves every entry one slot up the main diagonal: `out[i][j] = d[i+1][j+1]`,
/// with a zero last row and column.
pub fn shift_diagonal(d: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(d.nrows(), d.ncols(), "shift needs a square matrix");
    let h = d.nrows();
    let mut out = DMatrix::zeros(h, h);
    if h > 1 {
        out.view_mut((0, 0), (h - 1, h - 1))
            .copy_from(&d.view((1, 1), (h - 1, h - 1)));
    }
    out
}

/// Appends a zero.
pub fn extend_vector(v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len() + 1);
    out.rows_mut(0, v.len()).copy_from(v);
    out
}

/// Appends a zero row and a zero column.
pub fn extend_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(r + 1, c + 1);
    out.view_mut((0, 0), (r, c)).copy_from(m);
    out
}

/// First `len` entries of `v`.
pub fn head(v: &DVector<f64>, len: usize) -> DVector<f64> {
    assert!(
        len <= v.len(),
        "head length {len} exceeds vector length {}",
        v.len()
    );
    v.rows(0, len).into_owned()
}
