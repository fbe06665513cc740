//! Dense kernels shared by the differentiable ops.

use crate::real::Real;

/// `C[m,n] = op(A)[m,k] * op(B)[k,n] + beta * C`, all row-major.
///
/// `trans_a` means `a` is stored as `[k, m]`; `trans_b` means `b` is stored
/// as `[n, k]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<F: Real>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    a: &[F],
    b: &[F],
    c: &mut [F],
    beta: F,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs buffer");
    assert_eq!(b.len(), k * n, "gemm: rhs buffer");
    assert_eq!(c.len(), m * n, "gemm: output buffer");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: buffer lengths were checked against the logical dimensions
    // above and `c` is uniquely borrowed.
    unsafe {
        F::gemm_raw(m, k, n, F::one(), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Geometry of a strided, zero-padded 1-D window sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Length of the (unpadded) signal the windows slide over.
    pub src_len: usize,
    /// Number of window positions.
    pub positions: usize,
}

impl Window {
    pub fn sweep(src_len: usize, kernel: usize, stride: usize, padding: usize) -> Option<Self> {
        let padded = src_len + 2 * padding;
        if kernel == 0 || stride == 0 || kernel > padded {
            return None;
        }
        Some(Window { kernel, stride, padding, src_len, positions: (padded - kernel) / stride + 1 })
    }

    #[inline]
    fn source_index(&self, pos: usize, k: usize) -> Option<usize> {
        let idx = (pos * self.stride + k) as isize - self.padding as isize;
        if idx >= 0 && (idx as usize) < self.src_len {
            Some(idx as usize)
        } else {
            None
        }
    }
}

/// Unfolds `channels` rows of `src` (`[.., src_len]`, starting at row
/// `row0`) into `[channels * kernel, positions]`.
pub(crate) fn im2col<F: Real>(src: &[F], row0: usize, channels: usize, win: &Window) -> Vec<F> {
    let mut cols = vec![F::zero(); channels * win.kernel * win.positions];
    for c in 0..channels {
        let row = &src[(row0 + c) * win.src_len..(row0 + c + 1) * win.src_len];
        for k in 0..win.kernel {
            let dst = &mut cols[(c * win.kernel + k) * win.positions..][..win.positions];
            for (pos, d) in dst.iter_mut().enumerate() {
                if let Some(i) = win.source_index(pos, k) {
                    *d = row[i];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds `cols` back onto rows of `dst`.
pub(crate) fn col2im<F: Real>(cols: &[F], dst: &mut [F], row0: usize, channels: usize, win: &Window) {
    for c in 0..channels {
        let row = &mut dst[(row0 + c) * win.src_len..(row0 + c + 1) * win.src_len];
        for k in 0..win.kernel {
            let src = &cols[(c * win.kernel + k) * win.positions..][..win.positions];
            for (pos, &s) in src.iter().enumerate() {
                if let Some(i) = win.source_index(pos, k) {
                    row[i] += s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        gemm(false, false, 2, 2, 2, &a, &b, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(true, false, 2, 2, 2, &a, &b, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(false, true, 2, 2, 2, &a, &b, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let win = Window::sweep(7, 3, 2, 1).unwrap();
        let src: Vec<f64> = (0..14).map(|i| (i as f64).sin()).collect();
        let cols = im2col(&src, 0, 2, &win);
        let probe: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.7).cos()).collect();
        let lhs: f64 = cols.iter().zip(&probe).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; 14];
        col2im(&probe, &mut back, 0, 2, &win);
        let rhs: f64 = src.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
