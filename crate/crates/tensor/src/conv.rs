//! Convolution geometry and single-sample kernels (im2col + GEMM).
//!
//! Everything here is cross-correlation without kernel flipping. A transposed
//! convolution is computed as the exact adjoint of the forward convolution
//! with the same geometry, so both share one [`ConvGeom`].

use crate::{Result, Scalar, TensorError};

/// Geometry of a strided, zero-padded 2-D convolution from
/// `c_in x h x w` to `c_out x out_h x out_w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        op: &'static str,
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(TensorError::ZeroStride { op });
        }
        let (ph, pw) = (h + 2 * padding, w + 2 * padding);
        if kh == 0 || kw == 0 || ph < kh || pw < kw {
            return Err(TensorError::KernelTooLarge {
                op,
                kernel: (kh, kw),
                padded: (ph, pw),
            });
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    /// Geometry of the forward convolution whose adjoint maps
    /// `c_in x h x w` to `c_out x out_h x out_w` with
    /// `out = (in - 1) * stride - 2 * padding + k`.
    #[allow(clippy::too_many_arguments)]
    pub fn transposed(
        op: &'static str,
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(TensorError::ZeroStride { op });
        }
        if h == 0 || w == 0 {
            return Err(TensorError::Invalid(format!("{op}: empty input {h}x{w}")));
        }
        let full_h = (h - 1) * stride + kh;
        let full_w = (w - 1) * stride + kw;
        if full_h <= 2 * padding || full_w <= 2 * padding {
            return Err(TensorError::KernelTooLarge {
                op,
                kernel: (kh, kw),
                padded: (full_h, full_w),
            });
        }
        let g = Self::new(op, c_out, full_h - 2 * padding, full_w - 2 * padding, c_in, kh, kw, stride, padding)?;
        debug_assert_eq!((g.out_h, g.out_w), (h, w));
        Ok(g)
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.out_h * self.out_w
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.patch_len()
    }
}

/// Output columns `ox` whose input column `ox * stride + j - pad` lies in
/// `0..w`.
fn valid_columns(g: &ConvGeom, j: usize) -> (usize, usize) {
    let (s, pad) = (g.stride, g.padding);
    let lo = if j >= pad { 0 } else { (pad - j).div_ceil(s) };
    let hi = if g.w + pad > j { (g.w + pad - j).div_ceil(s).min(g.out_w) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfolds one sample into rows of a column matrix: patch row `r` of the
/// sample occupies `cols[r * ld + offset..][..positions]`.
pub fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T], ld: usize, offset: usize) {
    let p = g.positions();
    debug_assert_eq!(x.len(), g.in_len());
    debug_assert!(cols.len() >= (g.patch_len() - 1) * ld + offset + p);
    let (s, pad) = (g.stride, g.padding as isize);
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let (lo, hi) = valid_columns(g, j);
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * ld + offset..row * ld + offset + p];
                for oy in 0..g.out_h {
                    let iy = (oy * s + i) as isize - pad;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    let first = lo * s + j - g.padding;
                    if s == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (v, &x) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(s)) {
                            *v = x;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into a sample.
pub fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], ld: usize, offset: usize, x: &mut [T]) {
    let p = g.positions();
    debug_assert_eq!(x.len(), g.in_len());
    let (s, pad) = (g.stride, g.padding as isize);
    for c in 0..g.c_in {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let (lo, hi) = valid_columns(g, j);
                if lo >= hi {
                    continue;
                }
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * ld + offset..row * ld + offset + p];
                let first = lo * s + j - g.padding;
                for oy in 0..g.out_h {
                    let iy = (oy * s + i) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                    for (d, &v) in dst[first..].iter_mut().step_by(s).zip(line) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Upper bound on column-matrix elements per GEMM; larger batches are
/// processed in chunks of whole samples.
const MAX_COLS: usize = 1 << 22;

/// Scratch buffers reused across the samples of one op.
#[derive(Debug, Default)]
pub struct Workspace<T> {
    cols: Vec<T>,
    tmp: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new() -> Self {
        Workspace {
            cols: Vec::new(),
            tmp: Vec::new(),
        }
    }
}

fn chunks(g: &ConvGeom, n: usize) -> impl Iterator<Item = (usize, usize)> {
    let per = (MAX_COLS / (g.patch_len() * g.positions()).max(1)).clamp(1, n.max(1));
    (0..n).step_by(per).map(move |b0| (b0, (b0 + per).min(n)))
}

/// `[m, C, P]` sample-major planes to a `C x (m P)` matrix.
fn gather<T: Scalar>(src: &[T], m: usize, c: usize, p: usize, dst: &mut Vec<T>) {
    dst.resize(c * m * p, T::zero());
    for s in 0..m {
        for ch in 0..c {
            let from = &src[(s * c + ch) * p..(s * c + ch + 1) * p];
            dst[ch * m * p + s * p..ch * m * p + (s + 1) * p].copy_from_slice(from);
        }
    }
}

/// Inverse of [`gather`].
fn scatter<T: Scalar>(src: &[T], m: usize, c: usize, p: usize, dst: &mut [T]) {
    for s in 0..m {
        for ch in 0..c {
            dst[(s * c + ch) * p..(s * c + ch + 1) * p].copy_from_slice(&src[ch * m * p + s * p..ch * m * p + (s + 1) * p]);
        }
    }
}

fn unfold<T: Scalar>(g: &ConvGeom, x: &[T], b0: usize, b1: usize, cols: &mut Vec<T>) {
    let (m, p) = (b1 - b0, g.positions());
    cols.resize(g.patch_len() * m * p, T::zero());
    for b in b0..b1 {
        im2col(g, &x[b * g.in_len()..(b + 1) * g.in_len()], cols, m * p, (b - b0) * p);
    }
}

/// Forward convolution of `n` samples sharing one weight:
/// `out[b] = weight * im2col(x[b])`.
pub fn conv_forward<T: Scalar>(g: &ConvGeom, n: usize, x: &[T], weight: &[T], ws: &mut Workspace<T>, out: &mut [T]) {
    let p = g.positions();
    for (b0, b1) in chunks(g, n) {
        let m = b1 - b0;
        unfold(g, x, b0, b1, &mut ws.cols);
        let dst = &mut out[b0 * g.out_len()..b1 * g.out_len()];
        if m == 1 {
            T::gemm(g.c_out, g.patch_len(), p, T::one(), weight, false, &ws.cols, false, T::zero(), dst);
        } else {
            ws.tmp.resize(g.c_out * m * p, T::zero());
            T::gemm(g.c_out, g.patch_len(), m * p, T::one(), weight, false, &ws.cols, false, T::zero(), &mut ws.tmp);
            scatter(&ws.tmp, m, g.c_out, p, dst);
        }
    }
}

/// Input gradient of [`conv_forward`], added into `dx`. Also the forward
/// pass of a transposed convolution.
pub fn conv_backward_input<T: Scalar>(g: &ConvGeom, n: usize, dout: &[T], weight: &[T], ws: &mut Workspace<T>, dx: &mut [T]) {
    let p = g.positions();
    for (b0, b1) in chunks(g, n) {
        let m = b1 - b0;
        let src = &dout[b0 * g.out_len()..b1 * g.out_len()];
        let rhs = if m == 1 {
            src
        } else {
            gather(src, m, g.c_out, p, &mut ws.tmp);
            &ws.tmp[..]
        };
        ws.cols.resize(g.patch_len() * m * p, T::zero());
        T::gemm(g.patch_len(), g.c_out, m * p, T::one(), weight, true, rhs, false, T::zero(), &mut ws.cols);
        for b in b0..b1 {
            col2im(g, &ws.cols, m * p, (b - b0) * p, &mut dx[b * g.in_len()..(b + 1) * g.in_len()]);
        }
    }
}

/// Weight gradient of [`conv_forward`] summed over the `n` samples:
/// `dw = beta * dw + sum_b dout[b] * im2col(x[b])^T`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward_weight<T: Scalar>(
    g: &ConvGeom,
    n: usize,
    x: &[T],
    dout: &[T],
    ws: &mut Workspace<T>,
    beta: T,
    dw: &mut [T],
) {
    let p = g.positions();
    let mut beta = beta;
    for (b0, b1) in chunks(g, n) {
        let m = b1 - b0;
        unfold(g, x, b0, b1, &mut ws.cols);
        let src = &dout[b0 * g.out_len()..b1 * g.out_len()];
        let lhs = if m == 1 {
            src
        } else {
            gather(src, m, g.c_out, p, &mut ws.tmp);
            &ws.tmp[..]
        };
        T::gemm(g.c_out, m * p, g.patch_len(), T::one(), lhs, false, &ws.cols, true, beta, dw);
        beta = T::one();
    }
}
