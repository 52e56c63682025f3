//! Dense numeric kernels: GEMM-backed convolution (im2col), average pooling,
//! and elementwise activations. All routines are single-threaded and
//! deterministic; batch layout is `[item][channel][row][col]`, row-major.

/// Safe wrapper over the f64 GEMM: `C = alpha·A·B + beta·C` with explicit
/// row/column strides, panicking on out-of-bounds buffer extents.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    let extent = |rows: usize, cols: usize, rs: isize, cs: isize| -> usize {
        if rows == 0 || cols == 0 {
            return 0;
        }
        let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
        assert!(last >= 0, "negative strides unsupported");
        last as usize + 1
    };
    assert!(a.len() >= extent(m, k, rsa, csa), "matrix A too small");
    assert!(b.len() >= extent(k, n, rsb, csb), "matrix B too small");
    assert!(c.len() >= extent(m, n, rsc, csc), "matrix C too small");
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Unfolds one image into patch columns.
///
/// `cols` has `in_ch·kh·kw` rows and `h_out·w_out` columns (row-major); row
/// order enumerates `(channel, kernel_row, kernel_col)` to match the conv
/// weight layout. Out-of-bounds taps (padding) produce zeros.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col(
    x: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
    cols: &mut [f64],
) {
    let n_cols = h_out * w_out;
    debug_assert_eq!(cols.len(), in_ch * kh * kw * n_cols);
    for ic in 0..in_ch {
        let plane = &x[ic * h * w..(ic + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ic * kh + ki) * kw + kj;
                let out_row = &mut cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..h_out {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let base = oy * w_out;
                    if iy < 0 || iy >= h as isize {
                        out_row[base..base + w_out].fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..w_out {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        out_row[base + ox] = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds patch-column gradients back onto the
/// image gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_add(
    cols: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
    dx: &mut [f64],
) {
    let n_cols = h_out * w_out;
    for ic in 0..in_ch {
        let plane = &mut dx[ic * h * w..(ic + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ic * kh + ki) * kw + kj;
                let col_row = &cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..h_out {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = oy * w_out;
                    for ox in 0..w_out {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += col_row[base + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Channelwise window-mean pooling over one batch.
#[allow(clippy::too_many_arguments)]
pub(crate) fn avgpool_forward(
    x: &[f64],
    n: usize,
    ch: usize,
    h: usize,
    w: usize,
    win: usize,
    stride: usize,
    h_out: usize,
    w_out: usize,
    y: &mut [f64],
) {
    let inv = 1.0 / (win * win) as f64;
    for item in 0..n {
        for c in 0..ch {
            let plane = &x[(item * ch + c) * h * w..];
            let out = &mut y[(item * ch + c) * h_out * w_out..(item * ch + c + 1) * h_out * w_out];
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = 0.0;
                    for ky in 0..win {
                        let iy = oy * stride + ky;
                        for kx in 0..win {
                            acc += plane[iy * w + ox * stride + kx];
                        }
                    }
                    out[oy * w_out + ox] = acc * inv;
                }
            }
        }
    }
}

/// Backward of average pooling: spreads each output gradient uniformly over
/// its window.
#[allow(clippy::too_many_arguments)]
pub(crate) fn avgpool_backward(
    dy: &[f64],
    n: usize,
    ch: usize,
    h: usize,
    w: usize,
    win: usize,
    stride: usize,
    h_out: usize,
    w_out: usize,
    dx: &mut [f64],
) {
    let inv = 1.0 / (win * win) as f64;
    dx.fill(0.0);
    for item in 0..n {
        for c in 0..ch {
            let grad_out = &dy[(item * ch + c) * h_out * w_out..];
            let grad_in = &mut dx[(item * ch + c) * h * w..(item * ch + c + 1) * h * w];
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let g = grad_out[oy * w_out + ox] * inv;
                    for ky in 0..win {
                        let iy = oy * stride + ky;
                        for kx in 0..win {
                            grad_in[iy * w + ox * stride + kx] += g;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn tanh_forward(x: &mut [f64]) {
    for v in x {
        *v = v.tanh();
    }
}

/// Backward of tanh given the cached *outputs* `y`: `dx = dy·(1 − y²)`.
pub(crate) fn tanh_backward(y: &[f64], dy: &mut [f64]) {
    for (g, &out) in dy.iter_mut().zip(y) {
        *g *= 1.0 - out * out;
    }
}

pub(crate) fn relu_forward(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Backward of relu given the cached outputs `y`: passes gradient where `y > 0`.
pub(crate) fn relu_backward(y: &[f64], dy: &mut [f64]) {
    for (g, &out) in dy.iter_mut().zip(y) {
        if out <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dgemm_matches_hand_product() {
        // A(2×3) · B(3×2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0; 4];
        dgemm(2, 3, 2, 1.0, &a, 3, 1, &b, 2, 1, 0.0, &mut c, 2, 1);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn dgemm_transposed_b_via_strides() {
        // A(1×2) · Bᵀ where B is stored 2×2 row-major.
        let a = [1.0, 2.0];
        let b = [10.0, 20.0, 30.0, 40.0]; // B[r][c]
        let mut c = [0.0; 2];
        // Bᵀ[k][j] = B[j][k]: row stride 1, col stride 2.
        dgemm(1, 2, 2, 1.0, &a, 2, 1, &b, 1, 2, 0.0, &mut c, 2, 1);
        assert_eq!(c, [1.0 * 10.0 + 2.0 * 20.0, 1.0 * 30.0 + 2.0 * 40.0]);
    }

    #[test]
    fn im2col_identity_kernel_recovers_pixels() {
        // 1×1 kernel, stride 1, no padding: columns are the pixels themselves.
        let x = [1.0, 2.0, 3.0, 4.0];
        let mut cols = [0.0; 4];
        im2col(&x, 1, 2, 2, 1, 1, 1, 0, 2, 2, &mut cols);
        assert_eq!(cols, x);
    }

    #[test]
    fn im2col_padding_produces_zero_taps() {
        // 3×3 kernel centered on a 1×1 image with pad 1: only the center tap
        // is the pixel, the 8 border taps are zero.
        let x = [5.0];
        let mut cols = [0.0; 9];
        im2col(&x, 1, 1, 1, 3, 3, 1, 1, 1, 1, &mut cols);
        let expect = [0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(cols, expect);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for random-ish inputs.
        let (in_ch, h, w, kh, kw, stride, pad) = (2, 5, 4, 3, 2, 2, 1);
        let h_out = (h + 2 * pad - kh) / stride + 1;
        let w_out = (w + 2 * pad - kw) / stride + 1;
        let x: Vec<f64> = (0..in_ch * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let k = in_ch * kh * kw;
        let n_cols = h_out * w_out;
        let c: Vec<f64> = (0..k * n_cols).map(|i| (i as f64 * 0.71).cos()).collect();
        let mut cols = vec![0.0; k * n_cols];
        im2col(&x, in_ch, h, w, kh, kw, stride, pad, h_out, w_out, &mut cols);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im_add(&c, in_ch, h, w, kh, kw, stride, pad, h_out, w_out, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn avgpool_window_means() {
        // One 4×4 plane, 2×2 window, stride 2.
        let x: Vec<f64> = (1..=16).map(f64::from).collect();
        let mut y = [0.0; 4];
        avgpool_forward(&x, 1, 1, 4, 4, 2, 2, 2, 2, &mut y);
        assert_eq!(y, [3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn avgpool_backward_distributes_uniformly() {
        let dy = [4.0, 8.0, 12.0, 16.0];
        let mut dx = vec![0.0; 16];
        avgpool_backward(&dy, 1, 1, 4, 4, 2, 2, 2, 2, &mut dx);
        assert_eq!(dx[0], 1.0);
        assert_eq!(dx[1], 1.0);
        assert_eq!(dx[2], 2.0);
        assert_eq!(dx[15], 4.0);
        let total: f64 = dx.iter().sum();
        assert_eq!(total, dy.iter().sum::<f64>());
    }
}
