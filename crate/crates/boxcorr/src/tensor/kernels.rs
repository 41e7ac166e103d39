//! Shared dense kernels used by both forward ops and their VJPs.

use crate::scalar::Scalar;

/// `out += a @ b` for row-major `a: [m,k]`, `b: [k,n]`, `out: [m,n]`.
/// i-k-j loop order keeps the inner loop contiguous in both `b` and `out`.
pub fn matmul_acc<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            if a_ik == S::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ik * bv;
            }
        }
    }
}

pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    matmul_acc(a, b, m, k, n, &mut out);
    out
}

/// `aᵀ @ b` for row-major `a: [m,k]`, `b: [m,n]`, giving `[k,n]`, without
/// materializing the transpose.
pub fn matmul_at_b<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut out = vec![S::zero(); k * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            if a_ik == S::zero() {
                continue;
            }
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ik * bv;
            }
        }
    }
    out
}

pub fn transpose<S: Scalar>(src: &[S], rows: usize, cols: usize) -> Vec<S> {
    debug_assert_eq!(src.len(), rows * cols);
    let mut out = vec![S::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Bilinear interpolation stencil at continuous feature coordinates `(x, y)`
/// on an `h`×`w` grid, borders clamped to the edge cell. Returns up to four
/// `(row, col, weight)` taps whose weights sum to one.
pub fn bilinear_taps(h: usize, w: usize, x: f64, y: f64) -> [(usize, usize, f64); 4] {
    let cx = x.clamp(0.0, (w - 1) as f64);
    let cy = y.clamp(0.0, (h - 1) as f64);
    let x0 = cx.floor() as usize;
    let y0 = cy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = cx - x0 as f64;
    let fy = cy - y0 as f64;
    [
        (y0, x0, (1.0 - fy) * (1.0 - fx)),
        (y0, x1, (1.0 - fy) * fx),
        (y1, x0, fy * (1.0 - fx)),
        (y1, x1, fy * fx),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small_known_product() {
        // [[1,2],[3,4]] @ [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = vec![1.0f64, 2.0, 3.0, 4.0];
        let b = vec![5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn at_b_matches_explicit_transpose() {
        let a = vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // [3,2]
        let b = vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // [3,2]
        let at = transpose(&a, 3, 2); // [2,3]
        assert_eq!(matmul_at_b(&a, &b, 3, 2, 2), matmul(&at, &b, 2, 3, 2));
    }

    #[test]
    fn bilinear_center_of_2x2_map() {
        // [[1,2],[3,4]] sampled at (0.5, 0.5) averages all four cells.
        let map = [1.0, 2.0, 3.0, 4.0];
        let v: f64 = bilinear_taps(2, 2, 0.5, 0.5)
            .iter()
            .map(|&(r, c, w)| map[r * 2 + c] * w)
            .sum();
        assert!((v - 2.5).abs() < 1e-12);
    }

    #[test]
    fn bilinear_clamps_outside_coordinates() {
        let map = [1.0, 2.0, 3.0, 4.0];
        let v: f64 = bilinear_taps(2, 2, -1.0, -1.0)
            .iter()
            .map(|&(r, c, w)| map[r * 2 + c] * w)
            .sum();
        assert!((v - 1.0).abs() < 1e-12);
    }
}
