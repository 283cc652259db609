//! Numerical kernels behind the graph ops: forward/backward pairs as pure
//! functions over dense row-major buffers.
//!
//! The graph layer owns bookkeeping (node wiring, gradient accumulation);
//! everything here is stateless math. Convolutions route through im2col plus
//! one GEMM so the single matrix product carries almost all of the FLOPs.
//! Reductions accumulate in f64 regardless of the working precision to keep
//! loss values accurate at f32.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Training allocates and frees multi-megabyte temporaries every batch
/// (im2col patch matrices, gradient buffers). glibc serves those straight
/// from mmap and returns them to the kernel on free, so each step pays the
/// page-fault cost of the same pages over and over — roughly half the step
/// time at this model's scale. Raising the mmap/trim thresholds once keeps
/// the buffers in the arena for reuse. Harmless no-op where unsupported.
pub(crate) fn tune_allocator() {
    use std::sync::Once;
    static ONCE: Once = Once::new();
    ONCE.call_once(|| unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 256 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 256 << 20);
    });
}

/// An uninitialized buffer destined to be fully overwritten as a GEMM
/// output (beta = 0 stores every element without reading). Skipping the
/// zero fill saves a memset per multi-megabyte temporary on the training
/// hot path.
///
/// Safety: the caller must pass the buffer as the `c` operand of a
/// `gemm` call with `beta == 0` covering all `len` elements before any
/// read.
unsafe fn uninit_buf<T: Scalar>(len: usize) -> Vec<T> {
    let mut v = Vec::with_capacity(len);
    // Safety: T is Copy plain-old-data (f32/f64); the contract above
    // guarantees every element is written before it is read.
    unsafe { v.set_len(len) };
    v
}

/// Row-major GEMM wrapper: C = alpha * A(m×k) * B(k×n) + beta * C(m×n),
/// with explicit row/column strides per operand so transposed views cost
/// nothing.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    rsa: isize,
    csa: isize,
    b: &[T],
    rsb: isize,
    csb: isize,
    beta: T,
    c: &mut [T],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // Safety: callers pass buffers whose extents cover every index reachable
    // from the stated strides; debug builds double-check the far corners.
    debug_assert!(a.len() as isize > (m as isize - 1) * rsa.max(0) + (k as isize - 1) * csa.max(0));
    debug_assert!(b.len() as isize > (k as isize - 1) * rsb.max(0) + (n as isize - 1) * csb.max(0));
    debug_assert!(c.len() as isize > (m as isize - 1) * rsc.max(0) + (n as isize - 1) * csc.max(0));
    unsafe {
        T::gemm(
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

// ---------------------------------------------------------------------------
// 2D convolution (stride/dilation/symmetric zero padding per axis)
// ---------------------------------------------------------------------------

/// Geometry of one conv2d application, precomputed and validated once.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv2dGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
    pub oh: usize,
    pub ow: usize,
}

/// Output extent along one axis: floor((in + 2p − d(k−1) − 1)/s) + 1.
fn conv_out_extent(input: usize, k: usize, stride: usize, dilation: usize, pad: usize) -> Result<usize> {
    if stride == 0 || dilation == 0 || k == 0 {
        return Err(Error::Shape(format!(
            "conv parameters must be positive (kernel {k}, stride {stride}, dilation {dilation})"
        )));
    }
    let span = dilation * (k - 1) + 1;
    let padded = input + 2 * pad;
    if padded < span {
        return Err(Error::Shape(format!(
            "padded extent {padded} admits no placement of kernel span {span}"
        )));
    }
    Ok((padded - span) / stride + 1)
}

impl Conv2dGeom {
    pub fn resolve(
        x_shape: &[usize],
        w_shape: &[usize],
        stride: (usize, usize),
        dilation: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let [batch, in_ch, h, w] = *x_shape else {
            return Err(Error::Shape(format!(
                "conv2d input must be [batch, ch, h, w], got {x_shape:?}"
            )));
        };
        let [out_ch, w_in_ch, kh, kw] = *w_shape else {
            return Err(Error::Shape(format!(
                "conv2d weight must be [out_ch, in_ch, kh, kw], got {w_shape:?}"
            )));
        };
        if in_ch != w_in_ch {
            return Err(Error::Shape(format!(
                "conv2d input channels {in_ch} do not match weight channels {w_in_ch} (input {x_shape:?}, weight {w_shape:?})"
            )));
        }
        let oh = conv_out_extent(h, kh, stride.0, dilation.0, padding.0)?;
        let ow = conv_out_extent(w, kw, stride.1, dilation.1, padding.1)?;
        Ok(Conv2dGeom {
            batch,
            in_ch,
            h,
            w,
            out_ch,
            kh,
            kw,
            stride,
            dilation,
            padding,
            oh,
            ow,
        })
    }

    fn k_rows(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn n_cols(&self) -> usize {
        self.batch * self.oh * self.ow
    }
}

/// Gather input patches into a [in_ch·kh·kw, batch·oh·ow] matrix; positions
/// that fall into the zero padding gather 0.
fn im2col<T: Scalar>(x: &[T], g: &Conv2dGeom) -> Vec<T> {
    let (kr, nc) = (g.k_rows(), g.n_cols());
    let mut cols = vec![T::zero(); kr * nc];
    let ohw = g.oh * g.ow;
    for c in 0..g.in_ch {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * nc..(row + 1) * nc];
                let shift = kj as isize * g.dilation.1 as isize - g.padding.1 as isize;
                for b in 0..g.batch {
                    let src = &x[(b * g.in_ch + c) * g.h * g.w..];
                    for oi in 0..g.oh {
                        let ih = (oi * g.stride.0 + ki * g.dilation.0) as isize - g.padding.0 as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[ih as usize * g.w..ih as usize * g.w + g.w];
                        let dst_row = &mut dst[b * ohw + oi * g.ow..b * ohw + (oi + 1) * g.ow];
                        if g.stride.1 == 1 {
                            // Contiguous width: the valid output range maps to
                            // one input slice.
                            let lo = (-shift).max(0) as usize;
                            let hi = (g.w as isize - shift).clamp(0, g.ow as isize) as usize;
                            if lo < hi {
                                let s0 = (lo as isize + shift) as usize;
                                dst_row[lo..hi].copy_from_slice(&src_row[s0..s0 + (hi - lo)]);
                            }
                        } else {
                            for (oj, d) in dst_row.iter_mut().enumerate() {
                                let iw = oj as isize * g.stride.1 as isize + shift;
                                if iw >= 0 && iw < g.w as isize {
                                    *d = src_row[iw as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add the transpose of im2col: accumulate column-matrix gradients
/// back onto input positions, skipping padding.
fn col2im_add<T: Scalar>(d_cols: &[T], g: &Conv2dGeom, d_x: &mut [T]) {
    let nc = g.n_cols();
    let ohw = g.oh * g.ow;
    for c in 0..g.in_ch {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &d_cols[row * nc..(row + 1) * nc];
                let shift = kj as isize * g.dilation.1 as isize - g.padding.1 as isize;
                for b in 0..g.batch {
                    let dst = &mut d_x[(b * g.in_ch + c) * g.h * g.w..(b * g.in_ch + c + 1) * g.h * g.w];
                    for oi in 0..g.oh {
                        let ih = (oi * g.stride.0 + ki * g.dilation.0) as isize - g.padding.0 as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[b * ohw + oi * g.ow..b * ohw + (oi + 1) * g.ow];
                        let dst_row = &mut dst[ih as usize * g.w..ih as usize * g.w + g.w];
                        if g.stride.1 == 1 {
                            let lo = (-shift).max(0) as usize;
                            let hi = (g.w as isize - shift).clamp(0, g.ow as isize) as usize;
                            if lo < hi {
                                let s0 = (lo as isize + shift) as usize;
                                for (d, s) in dst_row[s0..s0 + (hi - lo)].iter_mut().zip(&src_row[lo..hi]) {
                                    *d += *s;
                                }
                            }
                        } else {
                            for (oj, s) in src_row.iter().enumerate() {
                                let iw = oj as isize * g.stride.1 as isize + shift;
                                if iw >= 0 && iw < g.w as isize {
                                    dst_row[iw as usize] += *s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output together with the im2col patch matrix, which the
/// backward pass reuses instead of rebuilding (callers that never run
/// backward just drop it).
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    g: &Conv2dGeom,
) -> Result<(Tensor<T>, Vec<T>)> {
    if bias.shape() != [g.out_ch] {
        return Err(Error::Shape(format!(
            "conv2d bias must be [{}], got {:?}",
            g.out_ch,
            bias.shape()
        )));
    }
    let (kr, nc) = (g.k_rows(), g.n_cols());
    let cols = im2col(x.data(), g);
    // out_mat[oc, (b, oi, oj)] = sum_k w[oc, k] * cols[k, (b, oi, oj)]
    // Safety: fully overwritten by the beta = 0 GEMM below.
    let mut out_mat = unsafe { uninit_buf::<T>(g.out_ch * nc) };
    gemm(
        g.out_ch,
        kr,
        nc,
        T::one(),
        w.data(),
        kr as isize,
        1,
        &cols,
        nc as isize,
        1,
        T::zero(),
        &mut out_mat,
        nc as isize,
        1,
    );
    let ohw = g.oh * g.ow;
    // Safety: the transpose-plus-bias loop below writes every element.
    let mut out = unsafe { uninit_buf::<T>(g.batch * g.out_ch * ohw) };
    for b in 0..g.batch {
        for oc in 0..g.out_ch {
            let bv = bias.data()[oc];
            let src = &out_mat[oc * nc + b * ohw..oc * nc + (b + 1) * ohw];
            let dst = &mut out[(b * g.out_ch + oc) * ohw..(b * g.out_ch + oc + 1) * ohw];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *s + bv;
            }
        }
    }
    Ok((Tensor::new(vec![g.batch, g.out_ch, g.oh, g.ow], out)?, cols))
}

pub(crate) struct Conv2dGrads<T> {
    pub d_x: Option<Tensor<T>>,
    pub d_w: Tensor<T>,
    pub d_b: Tensor<T>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    d_out: &Tensor<T>,
    g: &Conv2dGeom,
    saved_cols: &[T],
    need_dx: bool,
) -> Conv2dGrads<T> {
    let (kr, nc) = (g.k_rows(), g.n_cols());
    let ohw = g.oh * g.ow;
    // Reorder upstream grad [b, oc, oh, ow] into the GEMM layout [oc, b·oh·ow].
    let mut d_mat = vec![T::zero(); g.out_ch * nc];
    for b in 0..g.batch {
        for oc in 0..g.out_ch {
            let src = &d_out.data()[(b * g.out_ch + oc) * ohw..(b * g.out_ch + oc + 1) * ohw];
            d_mat[oc * nc + b * ohw..oc * nc + (b + 1) * ohw].copy_from_slice(src);
        }
    }
    let mut d_b = vec![T::zero(); g.out_ch];
    for oc in 0..g.out_ch {
        let mut acc = 0.0f64;
        for v in &d_mat[oc * nc..(oc + 1) * nc] {
            acc += v.as_f64();
        }
        d_b[oc] = T::from_f64(acc);
    }
    // d_w[oc, k] = d_mat[oc, :] · cols[k, :]ᵀ. Computed transposed so the
    // large patch matrix streams row-major — packing it as a transposed
    // operand costs ~3× — then flipped, which is cheap at weight size.
    let rebuilt;
    let cols: &[T] = if saved_cols.is_empty() {
        rebuilt = im2col(x.data(), g);
        &rebuilt
    } else {
        saved_cols
    };
    // Safety: fully overwritten by the beta = 0 GEMM below.
    let mut d_wt = unsafe { uninit_buf::<T>(kr * g.out_ch) };
    gemm(
        kr,
        nc,
        g.out_ch,
        T::one(),
        cols,
        nc as isize,
        1,
        &d_mat,
        1,
        nc as isize,
        T::zero(),
        &mut d_wt,
        g.out_ch as isize,
        1,
    );
    let mut d_w = vec![T::zero(); g.out_ch * kr];
    for (r, row) in d_wt.chunks_exact(g.out_ch).enumerate() {
        for (oc, v) in row.iter().enumerate() {
            d_w[oc * kr + r] = *v;
        }
    }
    let d_x = need_dx.then(|| {
        // d_cols[k, :] = wᵀ[k, oc] · d_mat[oc, :], then scatter-add to input.
        // Safety: fully overwritten by the beta = 0 GEMM below.
        let mut d_cols = unsafe { uninit_buf::<T>(kr * nc) };
        gemm(
            kr,
            g.out_ch,
            nc,
            T::one(),
            w.data(),
            1,
            kr as isize,
            &d_mat,
            nc as isize,
            1,
            T::zero(),
            &mut d_cols,
            nc as isize,
            1,
        );
        let mut d_x = vec![T::zero(); x.numel()];
        col2im_add(&d_cols, g, &mut d_x);
        Tensor::new(x.shape().to_vec(), d_x).expect("d_x matches input shape")
    });
    Conv2dGrads {
        d_x,
        d_w: Tensor::new(w.shape().to_vec(), d_w).expect("d_w matches weight shape"),
        d_b: Tensor::new(vec![g.out_ch], d_b).expect("d_b matches bias shape"),
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// Lane width of the streaming linear kernels: batches up to this size keep
/// one accumulator slot per sample in registers.
const LANES: usize = 16;

/// The general GEMM repacks its operands on every call, and for a skinny
/// batch against a large weight matrix that packing costs more than the
/// arithmetic. Such layers take a direct streaming path instead, where the
/// weight matrix is read exactly once per pass.
fn use_streaming_linear(batch: usize, f_in: usize, f_out: usize) -> bool {
    batch <= LANES && f_in * f_out >= 1 << 18
}

/// y[j, r] = Σ_i x[j, i]·w[r, i] + b[r] for all sample lanes j at once.
/// Four accumulator banks (i mod 4) hide FMA latency; `FUSED` selects fused
/// multiply-add, which the feature-gated wrappers map to one instruction.
#[inline(always)]
fn stream_linear_fwd_body<T: Scalar, const FUSED: bool>(
    x: &[T],
    w: &[T],
    bias: &[T],
    y: &mut [T],
    batch: usize,
    f_in: usize,
    f_out: usize,
) {
    debug_assert!(batch <= LANES);
    let fma = |a: T, b: T, c: T| if FUSED { a.mul_add(b, c) } else { a * b + c };
    // Input transposed into fixed-width lanes (zero-padded past the batch).
    let mut xt = vec![T::zero(); f_in * LANES];
    for j in 0..batch {
        for (i, &v) in x[j * f_in..(j + 1) * f_in].iter().enumerate() {
            xt[i * LANES + j] = v;
        }
    }
    for r in 0..f_out {
        let wrow = &w[r * f_in..(r + 1) * f_in];
        let mut acc = [[T::zero(); LANES]; 4];
        let mut wi = wrow.chunks_exact(4);
        let mut xi = xt.chunks_exact(4 * LANES);
        for (wc, xc) in (&mut wi).zip(&mut xi) {
            for t in 0..4 {
                for j in 0..LANES {
                    acc[t][j] = fma(wc[t], xc[t * LANES + j], acc[t][j]);
                }
            }
        }
        let tail_x = xi.remainder();
        for (t, &wv) in wi.remainder().iter().enumerate() {
            for j in 0..LANES {
                acc[0][j] = fma(wv, tail_x[t * LANES + j], acc[0][j]);
            }
        }
        let bv = bias[r];
        for j in 0..batch {
            y[j * f_out + r] = (acc[0][j] + acc[1][j]) + (acc[2][j] + acc[3][j]) + bv;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2", enable = "fma")]
unsafe fn stream_linear_fwd_avx2<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: &[T],
    y: &mut [T],
    batch: usize,
    f_in: usize,
    f_out: usize,
) {
    stream_linear_fwd_body::<T, true>(x, w, bias, y, batch, f_in, f_out)
}

fn stream_linear_fwd<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: &[T],
    y: &mut [T],
    batch: usize,
    f_in: usize,
    f_out: usize,
) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
        // Safety: the required CPU features were just detected.
        return unsafe { stream_linear_fwd_avx2(x, w, bias, y, batch, f_in, f_out) };
    }
    stream_linear_fwd_body::<T, false>(x, w, bias, y, batch, f_in, f_out)
}

pub(crate) fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [batch, f_in] = *x.shape() else {
        return Err(Error::Shape(format!(
            "linear input must be [batch, features], got {:?}",
            x.shape()
        )));
    };
    let [f_out, w_in] = *w.shape() else {
        return Err(Error::Shape(format!(
            "linear weight must be [out, in], got {:?}",
            w.shape()
        )));
    };
    if f_in != w_in || b.shape() != [f_out] {
        return Err(Error::Shape(format!(
            "linear dimensions disagree: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    if use_streaming_linear(batch, f_in, f_out) {
        // Safety: the kernel writes every (sample, output) pair.
        let mut y = unsafe { uninit_buf::<T>(batch * f_out) };
        stream_linear_fwd(x.data(), w.data(), b.data(), &mut y, batch, f_in, f_out);
        return Tensor::new(vec![batch, f_out], y);
    }
    // y = x · wᵀ + b, computed transposed (yᵀ = w · xᵀ) so the weight —
    // by far the largest operand — streams row-major instead of being
    // packed through a strided view.
    // Safety: fully overwritten by the beta = 0 GEMM below.
    let mut yt = unsafe { uninit_buf::<T>(f_out * batch) };
    gemm(
        f_out,
        f_in,
        batch,
        T::one(),
        w.data(),
        f_in as isize,
        1,
        x.data(),
        1,
        f_in as isize,
        T::zero(),
        &mut yt,
        batch as isize,
        1,
    );
    // Safety: the transpose loop covers every (row, batch) pair.
    let mut y = unsafe { uninit_buf::<T>(batch * f_out) };
    for (r, (row, bv)) in yt.chunks_exact(batch).zip(b.data()).enumerate() {
        for (bi, v) in row.iter().enumerate() {
            y[bi * f_out + r] = *v + *bv;
        }
    }
    Tensor::new(vec![batch, f_out], y)
}

pub(crate) struct LinearGrads<T> {
    pub d_x: Option<Tensor<T>>,
    pub d_w: Tensor<T>,
    pub d_b: Tensor<T>,
}

pub(crate) fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    d_y: &Tensor<T>,
    need_dx: bool,
) -> LinearGrads<T> {
    let (batch, f_in) = (x.shape()[0], x.shape()[1]);
    let f_out = w.shape()[0];
    // Safety: fully overwritten by the beta = 0 GEMM below.
    let mut d_w = unsafe { uninit_buf::<T>(f_out * f_in) };
    // d_w = d_yᵀ · x
    gemm(
        f_out,
        batch,
        f_in,
        T::one(),
        d_y.data(),
        1,
        f_out as isize,
        x.data(),
        f_in as isize,
        1,
        T::zero(),
        &mut d_w,
        f_in as isize,
        1,
    );
    let mut d_b = vec![T::zero(); f_out];
    for (j, db) in d_b.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for r in 0..batch {
            acc += d_y.data()[r * f_out + j].as_f64();
        }
        *db = T::from_f64(acc);
    }
    let d_x = need_dx.then(|| {
        // Safety: fully overwritten by the beta = 0 GEMM below.
        let mut d_x = unsafe { uninit_buf::<T>(batch * f_in) };
        // d_x = d_y · w
        gemm(
            batch,
            f_out,
            f_in,
            T::one(),
            d_y.data(),
            f_out as isize,
            1,
            w.data(),
            f_in as isize,
            1,
            T::zero(),
            &mut d_x,
            f_in as isize,
            1,
        );
        Tensor::new(x.shape().to_vec(), d_x).expect("d_x matches input shape")
    });
    LinearGrads {
        d_x,
        d_w: Tensor::new(w.shape().to_vec(), d_w).expect("d_w matches weight shape"),
        d_b: Tensor::new(vec![f_out], d_b).expect("d_b matches bias shape"),
    }
}

// ---------------------------------------------------------------------------
// Pointwise activations / dropout
// ---------------------------------------------------------------------------

pub(crate) fn leaky_relu_forward<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { slope * v })
}

/// Subgradient at exactly 0 follows the negative side (slope).
pub(crate) fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, slope: T, d_y: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(d_y.data())
        .map(|(&xv, &dv)| if xv > T::zero() { dv } else { slope * dv })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

/// Inverted dropout: zero with probability p, scale survivors by 1/(1−p).
/// Returns the output together with the per-element multiplier mask (0 or
/// the scale), which the backward pass reuses.
pub(crate) fn dropout_forward<T: Scalar>(x: &Tensor<T>, p: f64, rng: &mut StreamRng) -> Result<(Tensor<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability must be in [0,1), got {p}")));
    }
    let scale = T::from_f64(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.numel())
        .map(|_| if rng.coin(p) { T::zero() } else { scale })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data).expect("shape preserved"), mask))
}

// ---------------------------------------------------------------------------
// Batch norm over [batch, ch, T]
// ---------------------------------------------------------------------------

/// Per-channel statistics saved by the forward pass for backward.
#[derive(Debug, Clone)]
pub(crate) struct BnCtx<T> {
    pub train: bool,
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm1d_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    momentum: f64,
    eps: f64,
    train: bool,
) -> Result<(Tensor<T>, BnCtx<T>)> {
    let [batch, ch, t] = *x.shape() else {
        return Err(Error::Shape(format!(
            "batchnorm1d input must be [batch, ch, T], got {:?}",
            x.shape()
        )));
    };
    for (name, s) in [("gamma", gamma), ("beta", beta)] {
        if s.shape() != [ch] {
            return Err(Error::Shape(format!(
                "batchnorm1d {name} must be [{ch}], got {:?}",
                s.shape()
            )));
        }
    }
    let n = batch * t;
    let (mean, inv_std) = if train {
        if n < 2 {
            return Err(Error::Shape(format!(
                "batchnorm1d in train mode needs at least 2 values per channel, got {n}"
            )));
        }
        let mut mean = vec![T::zero(); ch];
        let mut inv_std = vec![T::zero(); ch];
        for c in 0..ch {
            let mut sum = 0.0f64;
            for b in 0..batch {
                for v in &x.data()[(b * ch + c) * t..(b * ch + c + 1) * t] {
                    sum += v.as_f64();
                }
            }
            let m = sum / n as f64;
            let mut sq = 0.0f64;
            for b in 0..batch {
                for v in &x.data()[(b * ch + c) * t..(b * ch + c + 1) * t] {
                    let d = v.as_f64() - m;
                    sq += d * d;
                }
            }
            let var_biased = sq / n as f64;
            let var_unbiased = sq / (n - 1) as f64;
            let rm = running_mean.data()[c].as_f64();
            let rv = running_var.data()[c].as_f64();
            running_mean.data_mut()[c] = T::from_f64((1.0 - momentum) * rm + momentum * m);
            running_var.data_mut()[c] = T::from_f64((1.0 - momentum) * rv + momentum * var_unbiased);
            mean[c] = T::from_f64(m);
            inv_std[c] = T::from_f64(1.0 / (var_biased + eps).sqrt());
        }
        (mean, inv_std)
    } else {
        let mean = running_mean.data().to_vec();
        let inv_std = running_var
            .data()
            .iter()
            .map(|v| T::from_f64(1.0 / (v.as_f64() + eps).sqrt()))
            .collect();
        (mean, inv_std)
    };
    let mut y = vec![T::zero(); x.numel()];
    for b in 0..batch {
        for c in 0..ch {
            let (m, is, g, be) = (mean[c], inv_std[c], gamma.data()[c], beta.data()[c]);
            let src = &x.data()[(b * ch + c) * t..(b * ch + c + 1) * t];
            let dst = &mut y[(b * ch + c) * t..(b * ch + c + 1) * t];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - m) * is * g + be;
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), y).expect("shape preserved"),
        BnCtx { train, mean, inv_std },
    ))
}

pub(crate) struct BnGrads<T> {
    pub d_x: Tensor<T>,
    pub d_gamma: Tensor<T>,
    pub d_beta: Tensor<T>,
}

pub(crate) fn batchnorm1d_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    ctx: &BnCtx<T>,
    d_y: &Tensor<T>,
) -> BnGrads<T> {
    let (batch, ch, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = (batch * t) as f64;
    let mut d_x = vec![T::zero(); x.numel()];
    let mut d_gamma = vec![T::zero(); ch];
    let mut d_beta = vec![T::zero(); ch];
    for c in 0..ch {
        let (m, is) = (ctx.mean[c].as_f64(), ctx.inv_std[c].as_f64());
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for b in 0..batch {
            let base = (b * ch + c) * t;
            for i in 0..t {
                let dy = d_y.data()[base + i].as_f64();
                let xhat = (x.data()[base + i].as_f64() - m) * is;
                sum_dy += dy;
                sum_dy_xhat += dy * xhat;
            }
        }
        d_gamma[c] = T::from_f64(sum_dy_xhat);
        d_beta[c] = T::from_f64(sum_dy);
        let g = gamma.data()[c].as_f64();
        for b in 0..batch {
            let base = (b * ch + c) * t;
            for i in 0..t {
                let dy = d_y.data()[base + i].as_f64();
                let dx = if ctx.train {
                    let xhat = (x.data()[base + i].as_f64() - m) * is;
                    g * is / n * (n * dy - sum_dy - xhat * sum_dy_xhat)
                } else {
                    // Running statistics are constants in eval mode.
                    g * is * dy
                };
                d_x[base + i] = T::from_f64(dx);
            }
        }
    }
    BnGrads {
        d_x: Tensor::new(x.shape().to_vec(), d_x).expect("shape preserved"),
        d_gamma: Tensor::new(vec![ch], d_gamma).expect("per-channel"),
        d_beta: Tensor::new(vec![ch], d_beta).expect("per-channel"),
    }
}

// ---------------------------------------------------------------------------
// Max pooling over [batch, ch, T]
// ---------------------------------------------------------------------------

pub(crate) fn maxpool1d_forward<T: Scalar>(
    x: &Tensor<T>,
    k: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [batch, ch, t] = *x.shape() else {
        return Err(Error::Shape(format!(
            "maxpool1d input must be [batch, ch, T], got {:?}",
            x.shape()
        )));
    };
    if k == 0 || stride == 0 {
        return Err(Error::Shape(format!(
            "maxpool1d kernel and stride must be positive (k {k}, stride {stride})"
        )));
    }
    if t < k {
        return Err(Error::Shape(format!(
            "maxpool1d window {k} exceeds input length {t}"
        )));
    }
    let t_out = (t - k) / stride + 1;
    let mut y = vec![T::zero(); batch * ch * t_out];
    let mut argmax = vec![0usize; batch * ch * t_out];
    for bc in 0..batch * ch {
        let src_base = bc * t;
        for o in 0..t_out {
            let start = src_base + o * stride;
            // Strict > keeps the first occurrence on ties.
            let mut best_idx = start;
            let mut best = x.data()[start];
            for j in 1..k {
                let v = x.data()[start + j];
                if v > best {
                    best = v;
                    best_idx = start + j;
                }
            }
            y[bc * t_out + o] = best;
            argmax[bc * t_out + o] = best_idx;
        }
    }
    Ok((Tensor::new(vec![batch, ch, t_out], y)?, argmax))
}

pub(crate) fn maxpool1d_backward<T: Scalar>(
    x_shape: &[usize],
    argmax: &[usize],
    d_y: &Tensor<T>,
) -> Tensor<T> {
    let mut d_x = vec![T::zero(); x_shape.iter().product()];
    for (&idx, &dv) in argmax.iter().zip(d_y.data()) {
        d_x[idx] += dv;
    }
    Tensor::new(x_shape.to_vec(), d_x).expect("d_x matches input shape")
}

// ---------------------------------------------------------------------------
// Padding on the last two axes of [batch, ch, H, W]
// ---------------------------------------------------------------------------

/// Amounts on the last two axes: (before H, after H, before W, after W).
pub(crate) type Pad2d = [usize; 4];

pub(crate) fn pad2d_forward<T: Scalar>(x: &Tensor<T>, pad: Pad2d) -> Result<Tensor<T>> {
    let [batch, ch, h, w] = *x.shape() else {
        return Err(Error::Shape(format!(
            "pad2d input must be [batch, ch, h, w], got {:?}",
            x.shape()
        )));
    };
    let (nh, nw) = (h + pad[0] + pad[1], w + pad[2] + pad[3]);
    let mut out = vec![T::zero(); batch * ch * nh * nw];
    for bc in 0..batch * ch {
        for i in 0..h {
            let src = &x.data()[(bc * h + i) * w..(bc * h + i + 1) * w];
            let dst_row = (bc * nh + i + pad[0]) * nw + pad[2];
            out[dst_row..dst_row + w].copy_from_slice(src);
        }
    }
    Tensor::new(vec![batch, ch, nh, nw], out)
}

pub(crate) fn pad2d_backward<T: Scalar>(x_shape: &[usize], pad: Pad2d, d_y: &Tensor<T>) -> Tensor<T> {
    let (batch, ch, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (nh, nw) = (h + pad[0] + pad[1], w + pad[2] + pad[3]);
    let mut d_x = vec![T::zero(); batch * ch * h * w];
    for bc in 0..batch * ch {
        for i in 0..h {
            let src_row = (bc * nh + i + pad[0]) * nw + pad[2];
            let dst = &mut d_x[(bc * h + i) * w..(bc * h + i + 1) * w];
            dst.copy_from_slice(&d_y.data()[src_row..src_row + w]);
        }
    }
    Tensor::new(x_shape.to_vec(), d_x).expect("d_x matches input shape")
}

// ---------------------------------------------------------------------------
// Losses and reductions
// ---------------------------------------------------------------------------

pub(crate) fn mse_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "mse operands must share a shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut acc = 0.0f64;
    for (&av, &bv) in a.data().iter().zip(b.data()) {
        let d = av.as_f64() - bv.as_f64();
        acc += d * d;
    }
    Ok(T::from_f64(acc / a.numel() as f64))
}

pub(crate) fn mse_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, d: T) -> (Tensor<T>, Tensor<T>) {
    let scale = T::from_f64(2.0 / a.numel() as f64) * d;
    let d_a: Vec<T> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&av, &bv)| scale * (av - bv))
        .collect();
    let d_b: Vec<T> = d_a.iter().map(|&v| -v).collect();
    (
        Tensor::new(a.shape().to_vec(), d_a).expect("shape preserved"),
        Tensor::new(b.shape().to_vec(), d_b).expect("shape preserved"),
    )
}

/// Per-row norms and dot products saved for backward.
#[derive(Debug, Clone)]
pub(crate) struct CosCtx {
    pub dot: Vec<f64>,
    pub norm_a: Vec<f64>,
    pub norm_b: Vec<f64>,
}

pub(crate) fn cosine_forward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, CosCtx)> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "cosine similarity expects matching [batch, features] operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (batch, f) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![T::zero(); batch];
    let mut ctx = CosCtx {
        dot: vec![0.0; batch],
        norm_a: vec![0.0; batch],
        norm_b: vec![0.0; batch],
    };
    for r in 0..batch {
        let ra = &a.data()[r * f..(r + 1) * f];
        let rb = &b.data()[r * f..(r + 1) * f];
        let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
        for (&x, &y) in ra.iter().zip(rb) {
            let (x, y) = (x.as_f64(), y.as_f64());
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        let (na, nb) = (na.sqrt(), nb.sqrt());
        ctx.dot[r] = dot;
        ctx.norm_a[r] = na;
        ctx.norm_b[r] = nb;
        out[r] = T::from_f64(dot / (na.max(eps) * nb.max(eps)));
    }
    Ok((Tensor::new(vec![batch], out)?, ctx))
}

pub(crate) fn cosine_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    eps: f64,
    ctx: &CosCtx,
    d_y: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (batch, f) = (a.shape()[0], a.shape()[1]);
    let mut d_a = vec![T::zero(); batch * f];
    let mut d_b = vec![T::zero(); batch * f];
    for r in 0..batch {
        let d = d_y.data()[r].as_f64();
        let (na, nb) = (ctx.norm_a[r], ctx.norm_b[r]);
        let (ca, cb) = (na.max(eps), nb.max(eps));
        let denom = ca * cb;
        let s = ctx.dot[r] / denom;
        for i in 0..f {
            let av = a.data()[r * f + i].as_f64();
            let bv = b.data()[r * f + i].as_f64();
            // d/da = b/(‖a‖‖b‖) − s·a/‖a‖²; the norm term vanishes where the
            // eps clamp is active (the norm no longer depends on the input).
            let mut ga = bv / denom;
            if na > eps {
                ga -= s * av / (ca * ca);
            }
            let mut gb = av / denom;
            if nb > eps {
                gb -= s * bv / (cb * cb);
            }
            d_a[r * f + i] = T::from_f64(d * ga);
            d_b[r * f + i] = T::from_f64(d * gb);
        }
    }
    (
        Tensor::new(a.shape().to_vec(), d_a).expect("shape preserved"),
        Tensor::new(b.shape().to_vec(), d_b).expect("shape preserved"),
    )
}

/// Weighted cross-entropy over logits [batch, C]: mean over the batch of
/// −w[y]·log softmax(logits)[y], stabilized by per-row max subtraction.
/// Returns the loss and the softmax matrix for backward.
pub(crate) fn wce_forward<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
    weights: &[T],
) -> Result<(T, Tensor<T>)> {
    let [batch, classes] = *logits.shape() else {
        return Err(Error::Shape(format!(
            "cross-entropy logits must be [batch, classes], got {:?}",
            logits.shape()
        )));
    };
    if targets.len() != batch {
        return Err(Error::Shape(format!(
            "cross-entropy got {} targets for batch {batch}",
            targets.len()
        )));
    }
    if weights.len() != classes {
        return Err(Error::Shape(format!(
            "cross-entropy got {} class weights for {classes} classes",
            weights.len()
        )));
    }
    let mut probs = vec![T::zero(); batch * classes];
    let mut loss = 0.0f64;
    for r in 0..batch {
        let y = targets[r];
        if y >= classes {
            return Err(Error::Data(format!(
                "target class {y} out of range for {classes} classes"
            )));
        }
        let row = &logits.data()[r * classes..(r + 1) * classes];
        let m = row.iter().fold(f64::NEG_INFINITY, |acc, v| acc.max(v.as_f64()));
        let mut sum = 0.0f64;
        for (j, v) in row.iter().enumerate() {
            let e = (v.as_f64() - m).exp();
            probs[r * classes + j] = T::from_f64(e);
            sum += e;
        }
        for p in &mut probs[r * classes..(r + 1) * classes] {
            *p = T::from_f64(p.as_f64() / sum);
        }
        let logp_y = row[y].as_f64() - m - sum.ln();
        loss -= weights[y].as_f64() * logp_y;
    }
    Ok((
        T::from_f64(loss / batch as f64),
        Tensor::new(vec![batch, classes], probs)?,
    ))
}

pub(crate) fn wce_backward<T: Scalar>(
    probs: &Tensor<T>,
    targets: &[usize],
    weights: &[T],
    d: T,
) -> Tensor<T> {
    let (batch, classes) = (probs.shape()[0], probs.shape()[1]);
    let scale = d.as_f64() / batch as f64;
    let mut d_logits = vec![T::zero(); batch * classes];
    for r in 0..batch {
        let y = targets[r];
        let w = weights[y].as_f64() * scale;
        for j in 0..classes {
            let p = probs.data()[r * classes + j].as_f64();
            let indicator = if j == y { 1.0 } else { 0.0 };
            d_logits[r * classes + j] = T::from_f64(w * (p - indicator));
        }
    }
    Tensor::new(vec![batch, classes], d_logits).expect("shape preserved")
}

pub(crate) fn mean_all_forward<T: Scalar>(x: &Tensor<T>) -> T {
    let mut acc = 0.0f64;
    for v in x.data() {
        acc += v.as_f64();
    }
    T::from_f64(acc / x.numel() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64_slice(vec![1, 1, data.len()], data).unwrap()
    }

    fn conv1d_as_2d(x: &[f64], w: &[f64], stride: usize, dilation: usize, pad: usize) -> Vec<f64> {
        let xt = Tensor::from_f64_slice(vec![1, 1, 1, x.len()], x).unwrap();
        let wt = Tensor::from_f64_slice(vec![1, 1, 1, w.len()], w).unwrap();
        let bias = Tensor::zeros(vec![1]);
        let g = Conv2dGeom::resolve(xt.shape(), wt.shape(), (1, stride), (1, dilation), (0, pad)).unwrap();
        conv2d_forward(&xt, &wt, &bias, &g).unwrap().0.into_data()
    }

    #[test]
    fn conv_matches_hand_computed_values() {
        assert_eq!(conv1d_as_2d(&[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, -1.0], 1, 1, 0), [-2.0, -2.0]);
        assert_eq!(conv1d_as_2d(&[5.0, 7.0], &[1.0], 1, 1, 0), [5.0, 7.0]);
        assert_eq!(conv1d_as_2d(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], 1, 2, 0), [4.0, 6.0]);
        // Zero padding on the time axis only.
        assert_eq!(conv1d_as_2d(&[1.0, 2.0, 3.0], &[1.0, 0.0, -1.0], 1, 1, 1), [-2.0, -2.0, 2.0]);
    }

    #[test]
    fn conv2d_sums_a_full_window() {
        let x = Tensor::<f64>::from_f64_slice(vec![1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_f64_slice(vec![1, 1, 2, 2], &[1.0, 1.0, 1.0, 1.0]).unwrap();
        let b = Tensor::zeros(vec![1]);
        let g = Conv2dGeom::resolve(x.shape(), w.shape(), (1, 1), (1, 1), (0, 0)).unwrap();
        let (y, _) = conv2d_forward(&x, &w, &b, &g).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.data(), [10.0]);
    }

    #[test]
    fn conv2d_one_by_one_is_scalar_product() {
        let x = Tensor::<f64>::from_f64_slice(vec![1, 1, 1, 1], &[3.0]).unwrap();
        let w = Tensor::from_f64_slice(vec![1, 1, 1, 1], &[-2.0]).unwrap();
        let b = Tensor::zeros(vec![1]);
        let g = Conv2dGeom::resolve(x.shape(), w.shape(), (1, 1), (1, 1), (0, 0)).unwrap();
        assert_eq!(conv2d_forward(&x, &w, &b, &g).unwrap().0.data(), [-6.0]);
    }

    #[test]
    fn conv_rejects_channel_mismatch_naming_both_shapes() {
        let err = Conv2dGeom::resolve(&[1, 3, 1, 8], &[4, 2, 1, 3], (1, 1), (1, 1), (0, 0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3, 1, 8]") && msg.contains("[4, 2, 1, 3]"), "{msg}");
    }

    #[test]
    fn conv_identity_kernel_preserves_channels() {
        // k=1, stride 1, weight 1, bias 0 must be the identity per channel.
        let x = Tensor::<f64>::from_f64_slice(vec![1, 2, 1, 3], &[1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        let mut w = Tensor::zeros(vec![2, 2, 1, 1]);
        w.data_mut()[0] = 1.0; // out 0 <- in 0
        w.data_mut()[3] = 1.0; // out 1 <- in 1
        let b = Tensor::zeros(vec![2]);
        let g = Conv2dGeom::resolve(x.shape(), w.shape(), (1, 1), (1, 1), (0, 0)).unwrap();
        assert_eq!(conv2d_forward(&x, &w, &b, &g).unwrap().0.data(), x.data());
    }

    #[test]
    fn linear_matches_hand_computed_values() {
        let x = Tensor::<f64>::from_f64_slice(vec![1, 2], &[1.0, 2.0]).unwrap();
        let w = Tensor::from_f64_slice(vec![1, 2], &[3.0, 4.0]).unwrap();
        let b = Tensor::from_f64_slice(vec![1], &[1.0]).unwrap();
        assert_eq!(linear_forward(&x, &w, &b).unwrap().data(), [12.0]);

        let x = Tensor::<f64>::from_f64_slice(vec![1, 2], &[1.0, 0.0]).unwrap();
        let w = Tensor::from_f64_slice(vec![2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(vec![2]);
        assert_eq!(linear_forward(&x, &w, &b).unwrap().data(), [1.0, 0.0]);

        let x = Tensor::<f64>::zeros(vec![1, 2]);
        let w = Tensor::from_f64_slice(vec![2, 2], &[9.0, 9.0, 9.0, 9.0]).unwrap();
        let b = Tensor::from_f64_slice(vec![2], &[5.0, 6.0]).unwrap();
        assert_eq!(linear_forward(&x, &w, &b).unwrap().data(), [5.0, 6.0]);
    }

    #[test]
    fn streaming_linear_matches_reference_sums() {
        // Shapes past the streaming gate with a skinny batch: forward and
        // both weight/input gradients must agree with plainly ordered sums.
        let (batch, f_in, f_out) = (5, 700, 400);
        assert!(use_streaming_linear(batch, f_in, f_out));
        let mut rng = StreamRng::new(11, "streamlin");
        let randv = |rng: &mut StreamRng, n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.uniform_f64() - 0.5).collect()
        };
        let x = Tensor::<f64>::new(vec![batch, f_in], randv(&mut rng, batch * f_in)).unwrap();
        let w = Tensor::new(vec![f_out, f_in], randv(&mut rng, f_out * f_in)).unwrap();
        let b = Tensor::new(vec![f_out], randv(&mut rng, f_out)).unwrap();
        let d_y = Tensor::new(vec![batch, f_out], randv(&mut rng, batch * f_out)).unwrap();

        let y = linear_forward(&x, &w, &b).unwrap();
        for j in 0..batch {
            for r in [0, f_out / 2, f_out - 1] {
                let want: f64 = (0..f_in)
                    .map(|i| x.data()[j * f_in + i] * w.data()[r * f_in + i])
                    .sum::<f64>()
                    + b.data()[r];
                let got = y.data()[j * f_out + r];
                assert!((got - want).abs() < 1e-9, "y[{j},{r}]: {got} vs {want}");
            }
        }

        let grads = linear_backward(&x, &w, &d_y, true);
        for r in [0, f_out - 1] {
            for i in [0, 13, f_in - 1] {
                let want: f64 = (0..batch)
                    .map(|j| d_y.data()[j * f_out + r] * x.data()[j * f_in + i])
                    .sum();
                let got = grads.d_w.data()[r * f_in + i];
                assert!((got - want).abs() < 1e-9, "d_w[{r},{i}]: {got} vs {want}");
            }
        }
        let d_x = grads.d_x.unwrap();
        for j in 0..batch {
            for i in [0, f_in - 1] {
                let want: f64 = (0..f_out)
                    .map(|r| d_y.data()[j * f_out + r] * w.data()[r * f_in + i])
                    .sum();
                let got = d_x.data()[j * f_in + i];
                assert!((got - want).abs() < 1e-9, "d_x[{j},{i}]: {got} vs {want}");
            }
        }
    }

    #[test]
    fn streaming_gate_excludes_wide_batches_and_small_weights() {
        assert!(!use_streaming_linear(17, 700, 400));
        assert!(!use_streaming_linear(4, 100, 11));
        assert!(use_streaming_linear(1, 14400, 900));
        assert!(use_streaming_linear(16, 900, 14400));
    }

    #[test]
    fn leaky_relu_values_and_zero() {
        let x = t1(&[3.0, -2.0, 0.0]);
        let y = leaky_relu_forward(&x, 0.01);
        assert_eq!(y.data(), [3.0, -0.02, 0.0]);
        // Subgradient at 0 takes the slope side.
        let d = leaky_relu_backward(&x, 0.01, &t1(&[1.0, 1.0, 1.0]));
        assert_eq!(d.data(), [1.0, 0.01, 0.01]);
    }

    #[test]
    fn batchnorm_normalizes_and_runs_identity_in_eval() {
        // [-1, 1] is already zero-mean unit-variance.
        let x = Tensor::<f64>::from_f64_slice(vec![2, 1, 1], &[-1.0, 1.0]).unwrap();
        let gamma = Tensor::full(vec![1], 1.0);
        let beta = Tensor::zeros(vec![1]);
        let mut rm = Tensor::zeros(vec![1]);
        let mut rv = Tensor::full(vec![1], 1.0);
        let (y, _) = batchnorm1d_forward(&x, &gamma, &beta, &mut rm, &mut rv, 0.1, 1e-12, true).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-6 && (y.data()[1] - 1.0).abs() < 1e-6);

        // Constant channel: eps guards the zero variance, beta shows through.
        let x = Tensor::full(vec![2, 1, 2], 4.0);
        let beta_half = Tensor::full(vec![1], 0.5);
        let (y, _) = batchnorm1d_forward(&x, &gamma, &beta_half, &mut rm, &mut rv, 0.1, 1e-5, true).unwrap();
        for v in y.data() {
            assert!((v - 0.5).abs() < 1e-9);
        }

        // Eval with neutral running stats is the identity.
        let x = Tensor::from_f64_slice(vec![1, 1, 3], &[1.0, 2.0, 3.0]).unwrap();
        let mut rm = Tensor::zeros(vec![1]);
        let mut rv = Tensor::full(vec![1], 1.0);
        let (y, _) = batchnorm1d_forward(&x, &gamma, &beta, &mut rm, &mut rv, 0.1, 0.0, false).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn batchnorm_rejects_single_element_channels_in_train() {
        let x = Tensor::from_f64_slice(vec![1, 2, 1], &[1.0, 2.0]).unwrap();
        let gamma = Tensor::full(vec![2], 1.0);
        let beta = Tensor::zeros(vec![2]);
        let mut rm = Tensor::zeros(vec![2]);
        let mut rv = Tensor::full(vec![2], 1.0);
        assert!(batchnorm1d_forward(&x, &gamma, &beta, &mut rm, &mut rv, 0.1, 1e-5, true).is_err());
    }

    #[test]
    fn maxpool_values_ties_and_errors() {
        let x = t1(&[1.0, 3.0, 2.0, 4.0]);
        let (y, _) = maxpool1d_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), [3.0, 4.0]);

        let x = t1(&[7.0]);
        let (y, _) = maxpool1d_forward(&x, 1, 1).unwrap();
        assert_eq!(y.data(), [7.0]);

        // Tie routes the gradient to the first maximal element.
        let x = t1(&[2.0, 2.0]);
        let (y, argmax) = maxpool1d_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), [2.0]);
        assert_eq!(argmax, [0]);
        let d_x = maxpool1d_backward(x.shape(), &argmax, &t1(&[1.0]));
        assert_eq!(d_x.data(), [1.0, 0.0]);

        assert!(maxpool1d_forward(&t1(&[1.0]), 2, 1).is_err());
    }

    #[test]
    fn mse_values() {
        let a = t1(&[1.0, 2.0]);
        assert_eq!(mse_forward(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_forward(&t1(&[0.0, 0.0]), &t1(&[1.0, 1.0])).unwrap(), 1.0);
        assert_eq!(mse_forward(&t1(&[0.0, 2.0]), &t1(&[0.0, 0.0])).unwrap(), 2.0);
        assert!(mse_forward(&a, &t1(&[1.0])).is_err());
    }

    #[test]
    fn cosine_values() {
        let a = Tensor::<f64>::from_f64_slice(vec![1, 2], &[3.0, 4.0]).unwrap();
        let (y, _) = cosine_forward(&a, &a, 1e-8).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-12);

        let a = Tensor::<f64>::from_f64_slice(vec![1, 2], &[1.0, 0.0]).unwrap();
        let b = Tensor::from_f64_slice(vec![1, 2], &[0.0, 1.0]).unwrap();
        let (y, _) = cosine_forward(&a, &b, 1e-8).unwrap();
        assert_eq!(y.data()[0], 0.0);

        let a = Tensor::<f64>::from_f64_slice(vec![1, 2], &[1.0, 1.0]).unwrap();
        let b = Tensor::from_f64_slice(vec![1, 2], &[1.0, 0.0]).unwrap();
        let (y, _) = cosine_forward(&a, &b, 1e-8).unwrap();
        assert!((y.data()[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);

        // eps guards the zero vector instead of dividing by zero.
        let z = Tensor::zeros(vec![1, 2]);
        let (y, _) = cosine_forward(&z, &b, 1e-8).unwrap();
        assert_eq!(y.data()[0], 0.0);
    }

    #[test]
    fn cross_entropy_values_and_stability() {
        // Uniform logits over 4 classes, unit weights: −log(1/4).
        let logits = Tensor::<f64>::zeros(vec![1, 4]);
        let (loss, probs) = wce_forward(&logits, &[2], &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        let row_sum: f64 = probs.data().iter().sum();
        assert!((row_sum - 1.0).abs() < 1e-6);

        // Huge margin on the true class: loss ≈ 0 and finite.
        let logits = Tensor::<f64>::from_f64_slice(vec![1, 2], &[1000.0, 0.0]).unwrap();
        let (loss, _) = wce_forward(&logits, &[0], &[1.0, 1.0]).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-9);

        // Class weight scales the per-sample term: 2·ln 2 on uniform 2-class.
        let logits = Tensor::zeros(vec![1, 2]);
        let (loss, _) = wce_forward(&logits, &[1], &[1.0, 2.0]).unwrap();
        assert!((loss - 2.0 * 2.0f64.ln()).abs() < 1e-12);

        assert!(wce_forward(&logits, &[2], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn dropout_identity_and_expectation() {
        let x = t1(&[1.0, 2.0, 3.0]);
        let mut rng = StreamRng::new(3, "dropout.test");
        let (y, mask) = dropout_forward(&x, 0.0, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(mask.iter().all(|&m| m == 1.0));

        // Inverted scaling preserves the expectation within 2% at p = 0.5.
        let x = t1(&[2.0]);
        let mut rng = StreamRng::new(7, "dropout.test");
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let (y, _) = dropout_forward(&x, 0.5, &mut rng).unwrap();
            acc += y.data()[0];
        }
        let mean = acc / n as f64;
        assert!((mean - 2.0).abs() / 2.0 < 0.02, "mean {mean}");
    }

    #[test]
    fn pad2d_places_and_recovers_the_interior() {
        let x = Tensor::<f64>::from_f64_slice(vec![1, 1, 1, 2], &[1.0, 2.0]).unwrap();
        let y = pad2d_forward(&x, [0, 0, 2, 1]).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 5]);
        assert_eq!(y.data(), [0.0, 0.0, 1.0, 2.0, 0.0]);
        let back = pad2d_backward(x.shape(), [0, 0, 2, 1], &y);
        assert_eq!(back.data(), x.data());
    }
}
