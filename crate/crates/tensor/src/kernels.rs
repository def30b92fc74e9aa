//! Raw numeric kernels behind the graph operations.

use crate::Scalar;

/// Stride, zero padding and dilation of a square 2-d convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, pad: usize, dilation: usize) -> Self {
        Self { stride, pad, dilation }
    }

    /// Unit stride with "same" padding for an odd kernel.
    pub const fn same(kernel: usize, dilation: usize) -> Self {
        Self { stride: 1, pad: dilation * (kernel - 1) / 2, dilation }
    }

    /// Output extent along one axis, or `None` when the kernel does not fit.
    pub fn out_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.pad;
        if padded < span || self.stride == 0 {
            None
        } else {
            Some((padded - span) / self.stride + 1)
        }
    }

    fn is_pointwise(&self, kh: usize, kw: usize) -> bool {
        kh == 1 && kw == 1 && self.stride == 1 && self.pad == 0
    }
}

pub(crate) struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
}

#[inline]
fn tap(o: usize, k: usize, g: &ConvGeom, len: usize) -> Option<usize> {
    let pos = (o * g.stride + k * g.dilation) as isize - g.pad as isize;
    if pos < 0 || pos as usize >= len {
        None
    } else {
        Some(pos as usize)
    }
}

fn im2col<T: Scalar>(img: &[T], d: &ConvDims, g: &ConvGeom, cols: &mut [T]) {
    let p = d.ho * d.wo;
    for c in 0..d.c {
        let plane = &img[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..d.ho {
                    let seg = &mut dst[oi * d.wo..(oi + 1) * d.wo];
                    match tap(oi, ki, g, d.h) {
                        None => seg.fill(T::zero()),
                        Some(ii) => {
                            let src = &plane[ii * d.w..(ii + 1) * d.w];
                            for (oj, v) in seg.iter_mut().enumerate() {
                                *v = match tap(oj, kj, g, d.w) {
                                    Some(jj) => src[jj],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], d: &ConvDims, g: &ConvGeom, img: &mut [T]) {
    let p = d.ho * d.wo;
    for c in 0..d.c {
        let plane = &mut img[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..d.ho {
                    let Some(ii) = tap(oi, ki, g, d.h) else { continue };
                    let dst = &mut plane[ii * d.w..(ii + 1) * d.w];
                    for oj in 0..d.wo {
                        if let Some(jj) = tap(oj, kj, g, d.w) {
                            dst[jj] += src[oi * d.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
    d: &ConvDims,
    g: &ConvGeom,
) -> Vec<T> {
    let ck = d.c * d.kh * d.kw;
    let p = d.ho * d.wo;
    let mut out = vec![T::zero(); d.n * d.o * p];
    let pointwise = g.is_pointwise(d.kh, d.kw);
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); ck * p] };
    for n in 0..d.n {
        let img = &x[n * d.c * d.h * d.w..(n + 1) * d.c * d.h * d.w];
        let dst = &mut out[n * d.o * p..(n + 1) * d.o * p];
        if let Some(b) = b {
            for (o, chunk) in dst.chunks_mut(p).enumerate() {
                chunk.fill(b[o]);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        let rhs: &[T] = if pointwise {
            img
        } else {
            im2col(img, d, g, &mut cols);
            &cols
        };
        T::gemm(d.o, ck, p, T::one(), w, ck, 1, rhs, p, 1, beta, dst, p, 1);
    }
    out
}

/// Returns `(grad_x, grad_w, grad_b)`; `grad_x` is skipped when not needed.
#[allow(clippy::type_complexity)]
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    d: &ConvDims,
    g: &ConvGeom,
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let ck = d.c * d.kh * d.kw;
    let p = d.ho * d.wo;
    let chw = d.c * d.h * d.w;
    let pointwise = g.is_pointwise(d.kh, d.kw);
    let mut gx = if need_x { Some(vec![T::zero(); d.n * chw]) } else { None };
    let mut gw = vec![T::zero(); if need_w { d.o * ck } else { 0 }];
    let mut gb = vec![T::zero(); d.o];
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); ck * p] };
    let mut gcols = if pointwise { Vec::new() } else { vec![T::zero(); ck * p] };
    for n in 0..d.n {
        let go = &gout[n * d.o * p..(n + 1) * d.o * p];
        for (o, chunk) in go.chunks(p).enumerate() {
            gb[o] += chunk.iter().copied().sum::<T>();
        }
        let img = &x[n * chw..(n + 1) * chw];
        if need_w {
            let rhs: &[T] = if pointwise {
                img
            } else {
                im2col(img, d, g, &mut cols);
                &cols
            };
            // gw (o x ck) += go (o x p) * rhs^T (p x ck)
            T::gemm(d.o, p, ck, T::one(), go, p, 1, rhs, 1, p, T::one(), &mut gw, ck, 1);
        }
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx[n * chw..(n + 1) * chw];
            if pointwise {
                T::gemm(ck, d.o, p, T::one(), w, 1, ck, go, p, 1, T::zero(), dst, p, 1);
            } else {
                T::gemm(ck, d.o, p, T::one(), w, 1, ck, go, p, 1, T::zero(), &mut gcols, p, 1);
                col2im(&gcols, d, g, dst);
            }
        }
    }
    (gx, gw, gb)
}

/// Nearest-neighbour upsampling of the two trailing axes by `f`.
pub(crate) fn upsample_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (ho, wo) = (h * f, w * f);
    let mut out = vec![T::zero(); planes * ho * wo];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * ho * wo..(pl + 1) * ho * wo];
        for i in 0..ho {
            let row = &src[(i / f) * w..(i / f + 1) * w];
            for (j, v) in dst[i * wo..(i + 1) * wo].iter_mut().enumerate() {
                *v = row[j / f];
            }
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Scalar>(g: &[T], planes: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (ho, wo) = (h * f, w * f);
    let mut out = vec![T::zero(); planes * h * w];
    for pl in 0..planes {
        let src = &g[pl * ho * wo..(pl + 1) * ho * wo];
        let dst = &mut out[pl * h * w..(pl + 1) * h * w];
        for i in 0..ho {
            for j in 0..wo {
                dst[(i / f) * w + j / f] += src[i * wo + j];
            }
        }
    }
    out
}

/// Softmax along an axis of length `len`, with `inner` trailing elements per step.
pub(crate) fn softmax_forward<T: Scalar>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..inner {
            let mut m = T::neg_infinity();
            for k in 0..len {
                m = m.max(x[base + k * inner + i]);
            }
            let mut s = T::zero();
            for k in 0..len {
                let e = (x[base + k * inner + i] - m).exp();
                out[base + k * inner + i] = e;
                s += e;
            }
            for k in 0..len {
                out[base + k * inner + i] /= s;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward<T: Scalar>(y: &[T], g: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); y.len()];
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..inner {
            let mut dot = T::zero();
            for k in 0..len {
                let at = base + k * inner + i;
                dot += y[at] * g[at];
            }
            for k in 0..len {
                let at = base + k * inner + i;
                out[at] = y[at] * (g[at] - dot);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution.
    fn naive_conv(x: &[f64], w: &[f64], b: &[f64], d: &ConvDims, g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; d.n * d.o * d.ho * d.wo];
        for n in 0..d.n {
            for o in 0..d.o {
                for oi in 0..d.ho {
                    for oj in 0..d.wo {
                        let mut acc = b[o];
                        for c in 0..d.c {
                            for ki in 0..d.kh {
                                for kj in 0..d.kw {
                                    let ii = (oi * g.stride + ki * g.dilation) as isize - g.pad as isize;
                                    let jj = (oj * g.stride + kj * g.dilation) as isize - g.pad as isize;
                                    if ii < 0 || jj < 0 || ii >= d.h as isize || jj >= d.w as isize {
                                        continue;
                                    }
                                    acc += x[((n * d.c + c) * d.h + ii as usize) * d.w + jj as usize]
                                        * w[((o * d.c + c) * d.kh + ki) * d.kw + kj];
                                }
                            }
                        }
                        out[((n * d.o + o) * d.ho + oi) * d.wo + oj] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        for &(stride, pad, dil, k) in &[(1, 1, 1, 3), (2, 1, 1, 3), (1, 2, 2, 3), (1, 0, 1, 1), (2, 0, 1, 2)] {
            let g = ConvGeom::new(stride, pad, dil);
            let (n, c, h, w, o) = (2, 3, 7, 6, 4);
            let ho = g.out_len(h, k).unwrap();
            let wo = g.out_len(w, k).unwrap();
            let d = ConvDims { n, c, h, w, o, kh: k, kw: k, ho, wo };
            let x: Vec<f64> = (0..n * c * h * w).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.1).collect();
            let wt: Vec<f64> = (0..o * c * k * k).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.2).collect();
            let b: Vec<f64> = (0..o).map(|i| i as f64 * 0.3).collect();
            let got = conv2d_forward(&x, &wt, Some(&b), &d, &g);
            let want = naive_conv(&x, &wt, &b, &d, &g);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "stride {stride} pad {pad} dil {dil}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = vec![1.0, -2.0, 3.0, 1000.0, 0.5, -1000.0];
        let y = softmax_forward(&x, 1, 3, 2);
        for i in 0..2 {
            let s: f64 = (0..3).map(|k| y[k * 2 + i]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
