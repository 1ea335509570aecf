//! Raw slice kernels behind the tape operations.

/// `c = op(a) * op(b) + beta * c` for row-major operands.
///
/// `op(a)` is `m x k`; when `trans_a` is set, `a` is stored as `k x m`.
/// `op(b)` is `k x n`; when `trans_b` is set, `b` is stored as `n x k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    a: &[f32],
    b: &[f32],
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index reachable through the
    // given dimensions and strides lies inside the three slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    pub fn cols_width(&self) -> usize {
        self.n * self.out_plane()
    }
}

/// Unfolds an NCHW input into a `[C*k*k, N*OH*OW]` patch matrix.
pub(crate) fn im2col(x: &[f32], g: &ConvGeom) -> Vec<f32> {
    let width = g.cols_width();
    let plane = g.out_plane();
    let mut cols = vec![0.0f32; g.patch_len() * width];
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let row_buf = &mut cols[row * width..(row + 1) * width];
                for n in 0..g.n {
                    let src = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    let dst = &mut row_buf[n * plane..(n + 1) * plane];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let dst_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto NCHW.
pub(crate) fn col2im(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let width = g.cols_width();
    let plane = g.out_plane();
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let row_buf = &cols[row * width..(row + 1) * width];
                for n in 0..g.n {
                    let dst = &mut dx[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    let src = &row_buf[n * plane..(n + 1) * plane];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.ow {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += src[oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[N, O, P]` <-> `[O, N*P]` layout swap.
pub(crate) fn nop_to_onp(x: &[f32], n: usize, o: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for ni in 0..n {
        for oi in 0..o {
            let src = &x[(ni * o + oi) * p..(ni * o + oi + 1) * p];
            out[oi * n * p + ni * p..oi * n * p + (ni + 1) * p].copy_from_slice(src);
        }
    }
    out
}

pub(crate) fn onp_to_nop(x: &[f32], n: usize, o: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for oi in 0..o {
        for ni in 0..n {
            let src = &x[oi * n * p + ni * p..oi * n * p + (ni + 1) * p];
            out[(ni * o + oi) * p..(ni * o + oi + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// Row-wise softmax computed with max subtraction in f64.
pub fn softmax_rows(logits: &[f32], cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; logits.len()];
    for (row, dst) in logits.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let denom: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = ((v as f64 - max).exp() / denom) as f32;
        }
    }
    out
}
