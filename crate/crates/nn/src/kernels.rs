//! Per-sample layer kernels. Inner loops run over contiguous rows so they
//! vectorize; reductions use eight independent accumulators for the same reason.

use crate::real::Real;

#[inline]
pub(crate) fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += xa[j] * xb[j];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub out_c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.pad + 1 - self.k
    }
    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pad + 1 - self.k
    }
    /// Output rows `y` whose input row `y + ky - pad` is in range.
    #[inline]
    fn rows(&self, ky: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(ky);
        let hi = (self.h + self.pad).saturating_sub(ky).min(self.out_h());
        (lo, hi.max(lo))
    }
    #[inline]
    fn cols(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.out_w());
        (lo, hi.max(lo))
    }
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.in_c * self.k * self.k
    }

    /// A 1x1 unpadded convolution reads its input directly as the patch matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }
}

/// Patch matrix: row `(i, ky, kx)`, column `(y, x)` holds the input pixel under
/// that kernel tap, zero outside the image.
fn im2col<T: Real>(g: &ConvGeom, input: &[T]) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (h, w, k, pad) = (g.h, g.w, g.k, g.pad);
    let mut cols = vec![T::zero(); g.patch_len() * oh * ow];
    for i in 0..g.in_c {
        let src = &input[i * h * w..(i + 1) * h * w];
        for ky in 0..k {
            let (y0, y1) = g.rows(ky);
            for kx in 0..k {
                let (x0, x1) = g.cols(kx);
                let row = &mut cols[((i * k + ky) * k + kx) * oh * ow..][..oh * ow];
                for y in y0..y1 {
                    let iy = y + ky - pad;
                    let ix0 = x0 + kx - pad;
                    row[y * ow + x0..y * ow + x1].copy_from_slice(&src[iy * w + ix0..iy * w + ix0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the input.
fn col2im<T: Real>(g: &ConvGeom, cols: &[T], gin: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (h, w, k, pad) = (g.h, g.w, g.k, g.pad);
    for i in 0..g.in_c {
        let dst = &mut gin[i * h * w..(i + 1) * h * w];
        for ky in 0..k {
            let (y0, y1) = g.rows(ky);
            for kx in 0..k {
                let (x0, x1) = g.cols(kx);
                let row = &cols[((i * k + ky) * k + kx) * oh * ow..][..oh * ow];
                for y in y0..y1 {
                    let iy = y + ky - pad;
                    let ix0 = x0 + kx - pad;
                    axpy(
                        T::one(),
                        &row[y * ow + x0..y * ow + x1],
                        &mut dst[iy * w + ix0..iy * w + ix0 + (x1 - x0)],
                    );
                }
            }
        }
    }
}

fn conv_forward_direct<T: Real>(g: &ConvGeom, input: &[T], weight: &[T], out: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (h, w, k, pad) = (g.h, g.w, g.k, g.pad);
    for o in 0..g.out_c {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        for i in 0..g.in_c {
            let src = &input[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = g.rows(ky);
                for kx in 0..k {
                    let wv = weight[((o * g.in_c + i) * k + ky) * k + kx];
                    let (x0, x1) = g.cols(kx);
                    for y in y0..y1 {
                        let iy = y + ky - pad;
                        let ix0 = x0 + kx - pad;
                        axpy(
                            wv,
                            &src[iy * w + ix0..iy * w + ix0 + (x1 - x0)],
                            &mut plane[y * ow + x0..y * ow + x1],
                        );
                    }
                }
            }
        }
    }
}

fn conv_wgrad_direct<T: Real>(g: &ConvGeom, input: &[T], gout: &[T], gw: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (h, w, k, pad) = (g.h, g.w, g.k, g.pad);
    for o in 0..g.out_c {
        let gplane = &gout[o * oh * ow..(o + 1) * oh * ow];
        for i in 0..g.in_c {
            let src = &input[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = g.rows(ky);
                for kx in 0..k {
                    let (x0, x1) = g.cols(kx);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let iy = y + ky - pad;
                        let ix0 = x0 + kx - pad;
                        acc += dot(
                            &gplane[y * ow + x0..y * ow + x1],
                            &src[iy * w + ix0..iy * w + ix0 + (x1 - x0)],
                        );
                    }
                    gw[((o * g.in_c + i) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
}

fn conv_igrad_direct<T: Real>(g: &ConvGeom, weight: &[T], gout: &[T], gin: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (h, w, k, pad) = (g.h, g.w, g.k, g.pad);
    for o in 0..g.out_c {
        let gplane = &gout[o * oh * ow..(o + 1) * oh * ow];
        for i in 0..g.in_c {
            let dst = &mut gin[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = g.rows(ky);
                for kx in 0..k {
                    let wv = weight[((o * g.in_c + i) * k + ky) * k + kx];
                    let (x0, x1) = g.cols(kx);
                    for y in y0..y1 {
                        let iy = y + ky - pad;
                        let ix0 = x0 + kx - pad;
                        axpy(
                            wv,
                            &gplane[y * ow + x0..y * ow + x1],
                            &mut dst[iy * w + ix0..iy * w + ix0 + (x1 - x0)],
                        );
                    }
                }
            }
        }
    }
}

/// Which pass is being computed; the direct/GEMM crossover differs per pass.
#[derive(Clone, Copy)]
enum Pass {
    Forward,
    WeightGrad,
    InputGrad,
}

/// Layers with few channels run faster as direct row sweeps than through a
/// patch matrix. Crossovers measured on 128px inputs.
fn prefers_direct(g: &ConvGeom, pass: Pass) -> bool {
    let channels = g.in_c * g.out_c;
    channels
        < match pass {
            Pass::Forward => 64,
            Pass::WeightGrad => 256,
            Pass::InputGrad => 128,
        }
}

/// Convolution as a matrix product of the `[out_c, in_c*k*k]` weights with the
/// patch matrix.
pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, input: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    let p = g.out_h() * g.out_w();
    for o in 0..g.out_c {
        out[o * p..(o + 1) * p].iter_mut().for_each(|v| *v = bias[o]);
    }
    if prefers_direct(g, Pass::Forward) {
        return conv_forward_direct(g, input, weight, out);
    }
    let owned;
    let cols: &[T] = if g.is_pointwise() {
        input
    } else {
        owned = im2col(g, input);
        &owned
    };
    let kk = g.patch_len();
    T::gemm(g.out_c, kk, p, weight, kk, 1, cols, p, 1, T::one(), out, p);
}

/// Accumulates weight/bias gradients (when `wgrad` is given) and the input
/// gradient (when `igrad` is given).
pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    gout: &[T],
    wgrad: Option<(&mut [T], &mut [T])>,
    igrad: Option<&mut [T]>,
) {
    let p = g.out_h() * g.out_w();
    let kk = g.patch_len();
    if let Some((gw, gb)) = wgrad {
        for o in 0..g.out_c {
            gb[o] += gout[o * p..(o + 1) * p].iter().copied().sum::<T>();
        }
        if prefers_direct(g, Pass::WeightGrad) {
            conv_wgrad_direct(g, input, gout, gw);
        } else {
            let owned;
            let cols: &[T] = if g.is_pointwise() {
                input
            } else {
                owned = im2col(g, input);
                &owned
            };
            T::gemm(g.out_c, p, kk, gout, p, 1, cols, 1, p, T::one(), gw, kk);
        }
    }
    if let Some(gin) = igrad {
        if prefers_direct(g, Pass::InputGrad) {
            conv_igrad_direct(g, weight, gout, gin);
        } else if g.is_pointwise() {
            T::gemm(kk, g.out_c, p, weight, 1, kk, gout, p, 1, T::one(), gin, p);
        } else {
            let mut gcols = vec![T::zero(); kk * p];
            T::gemm(kk, g.out_c, p, weight, 1, kk, gout, p, 1, T::zero(), &mut gcols, p);
            col2im(g, &gcols, gin);
        }
    }
}

pub(crate) fn dense_forward<T: Real>(input: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    let n = input.len();
    for (o, y) in out.iter_mut().enumerate() {
        *y = bias[o] + dot(&weight[o * n..(o + 1) * n], input);
    }
}

pub(crate) fn dense_backward<T: Real>(
    input: &[T],
    weight: &[T],
    gout: &[T],
    wgrad: Option<(&mut [T], &mut [T])>,
    igrad: Option<&mut [T]>,
) {
    let n = input.len();
    if let Some((gw, gb)) = wgrad {
        for (o, &go) in gout.iter().enumerate() {
            gb[o] += go;
            axpy(go, input, &mut gw[o * n..(o + 1) * n]);
        }
    }
    if let Some(gin) = igrad {
        for (o, &go) in gout.iter().enumerate() {
            axpy(go, &weight[o * n..(o + 1) * n], gin);
        }
    }
}

/// Returns the flat input index of each output's maximum (first on ties).
pub(crate) fn max_pool_forward<T: Real>(c: usize, h: usize, w: usize, input: &[T], out: &mut [T]) -> Vec<u32> {
    let (oh, ow) = (h / 2, w / 2);
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let cands = [
                    base + 2 * y * w + 2 * x,
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ];
                let mut best = cands[0];
                for &ci in &cands[1..] {
                    if input[ci] > input[best] {
                        best = ci;
                    }
                }
                let oi = (ch * oh + y) * ow + x;
                out[oi] = input[best];
                arg[oi] = best as u32;
            }
        }
    }
    arg
}

pub(crate) fn upsample_forward<T: Real>(c: usize, h: usize, w: usize, input: &[T], out: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    for ch in 0..c {
        for y in 0..oh {
            let src = &input[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            let dst = &mut out[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = src[x / 2];
            }
        }
    }
}

pub(crate) fn upsample_backward<T: Real>(c: usize, h: usize, w: usize, gout: &[T], gin: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    for ch in 0..c {
        for y in 0..oh {
            let src = &gout[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
            let dst = &mut gin[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            for (x, &g) in src.iter().enumerate() {
                dst[x / 2] += g;
            }
        }
    }
}
