//! Direct 2-D convolution kernels (cross-correlation convention) plus their
//! adjoints. Shapes follow the CHW layout; kernels are `[C_out, C_in, k, k]`
//! for plain convolution and `[C_in, C_out, k, k]` for the transposed form.
//!
//! Padding is always `(k-1)/2` zeros. A stride-`s` convolution maps extent
//! `n` to `ceil(n/s)`; the transposed form maps `n` to `n*s`.
//!
//! All kernels accumulate row-wise in a fixed loop order, so summation is
//! deterministic.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub fn conv_out_extent(n: usize, stride: usize) -> usize {
    (n + stride - 1) / stride
}

/// Valid range of the coarse coordinate `o` in the relation
/// `i = o*stride + kk - pad`, with `i` confined to `[0, n_fine)` and `o` to
/// `[0, n_coarse)`. Returns `lo..hi`.
#[inline]
fn span(n_coarse: usize, n_fine: usize, stride: usize, kk: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > kk {
        (pad - kk).div_ceil(stride)
    } else {
        0
    };
    let hi_num = n_fine as isize - 1 + pad as isize - kk as isize;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num as usize / stride + 1).min(n_coarse);
    (lo.min(hi), hi)
}

fn check_conv_args<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    stride: usize,
    transposed: bool,
) -> Result<(usize, usize, usize, usize, usize)> {
    let ish = input.shape();
    let ksh = kernel.shape();
    if ish.len() != 3 || ksh.len() != 4 {
        return Err(Error::Shape {
            op: "conv2d",
            detail: format!("input {:?}, kernel {:?}", ish, ksh),
        });
    }
    let k = ksh[2];
    if ksh[3] != k || k % 2 == 0 {
        return Err(Error::Shape {
            op: "conv2d",
            detail: format!("kernel window must be square and odd, got {:?}", ksh),
        });
    }
    if stride != 1 && stride != 2 {
        return Err(Error::Shape {
            op: "conv2d",
            detail: format!("stride must be 1 or 2, got {}", stride),
        });
    }
    // plain: kernel [C_out, C_in, k, k]; transposed: kernel [C_in, C_out, k, k]
    let (c_in, c_out) = if transposed {
        (ksh[0], ksh[1])
    } else {
        (ksh[1], ksh[0])
    };
    if ish[0] != c_in {
        return Err(Error::Shape {
            op: "conv2d",
            detail: format!("input channels {} != kernel expects {}", ish[0], c_in),
        });
    }
    Ok((c_in, c_out, k, ish[1], ish[2]))
}

/// Geometry of the window unfolding shared by all six kernels: a coarse
/// grid (hc x wc) relates to a fine grid (hf x wf) through
/// `fine = coarse*stride + tap - pad`.
#[derive(Clone, Copy)]
struct Geom {
    hc: usize,
    wc: usize,
    hf: usize,
    wf: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn n(&self) -> usize {
        self.hc * self.wc
    }
}

/// Unfold one fine-grid plane into k*k rows of coarse-grid length
/// (im2col for a single channel). `dst` must be zeroed, length k*k*n.
fn gather_plane<F: Scalar>(src: &[F], dst: &mut [F], g: Geom) {
    let n = g.n();
    for ky in 0..g.k {
        let (ylo, yhi) = span(g.hc, g.hf, g.stride, ky, g.pad);
        for kx in 0..g.k {
            let row = &mut dst[(ky * g.k + kx) * n..(ky * g.k + kx + 1) * n];
            let (xlo, xhi) = span(g.wc, g.wf, g.stride, kx, g.pad);
            if xhi <= xlo {
                continue;
            }
            for ny in ylo..yhi {
                let fy = ny * g.stride + ky - g.pad;
                let s0 = fy * g.wf + xlo * g.stride + kx - g.pad;
                let drow = &mut row[ny * g.wc + xlo..ny * g.wc + xhi];
                if g.stride == 1 {
                    drow.copy_from_slice(&src[s0..s0 + (xhi - xlo)]);
                } else {
                    let send = s0 + (xhi - xlo - 1) * g.stride + 1;
                    for (d, &v) in drow.iter_mut().zip(src[s0..send].iter().step_by(g.stride)) {
                        *d = v;
                    }
                }
            }
        }
    }
}

/// Adjoint of `gather_plane`: scatter-add k*k coarse rows into a fine plane.
fn scatter_plane<F: Scalar>(rows: &[F], dst: &mut [F], g: Geom) {
    let n = g.n();
    for ky in 0..g.k {
        let (ylo, yhi) = span(g.hc, g.hf, g.stride, ky, g.pad);
        for kx in 0..g.k {
            let row = &rows[(ky * g.k + kx) * n..(ky * g.k + kx + 1) * n];
            let (xlo, xhi) = span(g.wc, g.wf, g.stride, kx, g.pad);
            if xhi <= xlo {
                continue;
            }
            for ny in ylo..yhi {
                let fy = ny * g.stride + ky - g.pad;
                let s0 = fy * g.wf + xlo * g.stride + kx - g.pad;
                let srow = &row[ny * g.wc + xlo..ny * g.wc + xhi];
                if g.stride == 1 {
                    for (d, &v) in dst[s0..s0 + (xhi - xlo)].iter_mut().zip(srow) {
                        *d = *d + v;
                    }
                } else {
                    let send = s0 + (xhi - xlo - 1) * g.stride + 1;
                    for (d, &v) in dst[s0..send].iter_mut().step_by(g.stride).zip(srow) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

/// c[m x n] += a[m x kd] * b[kd x n], all row-major (row-saxpy order).
fn matmul_acc<F: Scalar>(c: &mut [F], a: &[F], b: &[F], m: usize, kd: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * kd..(i + 1) * kd];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// d[kd x n] += a^T rows: d[kk] += a[i][kk] * g[i] for every row i.
fn matmul_transpose_acc<F: Scalar>(d: &mut [F], a: &[F], g: &[F], m: usize, kd: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let a_row = &a[i * kd..(i + 1) * kd];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let d_row = &mut d[kk * n..(kk + 1) * n];
            for (dv, &gv) in d_row.iter_mut().zip(g_row) {
                *dv = *dv + av * gv;
            }
        }
    }
}

/// Dot product with eight independent accumulation chains. The summation
/// order is fixed (chains then tail), so results stay deterministic.
fn dot8<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let mut ia = a.chunks_exact(8);
    let mut ib = b.chunks_exact(8);
    for (ca, cb) in (&mut ia).zip(&mut ib) {
        for j in 0..8 {
            acc[j] = acc[j] + ca[j] * cb[j];
        }
    }
    let mut tail = F::zero();
    for (&x, &y) in ia.remainder().iter().zip(ib.remainder()) {
        tail = tail + x * y;
    }
    let s01 = acc[0] + acc[1];
    let s23 = acc[2] + acc[3];
    let s45 = acc[4] + acc[5];
    let s67 = acc[6] + acc[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

/// out[i x kd] += g[i x n] . b[kd x n]^T (row dot products).
fn dot_rows_acc<F: Scalar>(out: &mut [F], g: &[F], b: &[F], m: usize, kd: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for kk in 0..kd {
            let b_row = &b[kk * n..(kk + 1) * n];
            out[i * kd + kk] = out[i * kd + kk] + dot8(g_row, b_row);
        }
    }
}

/// out[co][oy][ox] = sum_ci sum_ky,kx w[co][ci][ky][kx] * in[ci][oy*s-p+ky][ox*s-p+kx]
pub fn conv_forward<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    stride: usize,
) -> Result<Tensor<F>> {
    let (c_in, c_out, k, h, w) = check_conv_args(input, kernel, stride, false)?;
    let (ho, wo) = (conv_out_extent(h, stride), conv_out_extent(w, stride));
    let g = Geom {
        hc: ho,
        wc: wo,
        hf: h,
        wf: w,
        k,
        stride,
        pad: (k - 1) / 2,
    };
    let n = g.n();
    let x = input.data();
    let wt = kernel.data();
    let mut out = vec![F::zero(); c_out * n];
    let mut cols = vec![F::zero(); k * k * n];
    // per input channel: unfold, then rank-(k*k) update of every out row
    for ci in 0..c_in {
        for v in cols.iter_mut() {
            *v = F::zero();
        }
        gather_plane(&x[ci * h * w..(ci + 1) * h * w], &mut cols, g);
        for co in 0..c_out {
            let a_row = &wt[(co * c_in + ci) * k * k..(co * c_in + ci + 1) * k * k];
            matmul_acc(&mut out[co * n..(co + 1) * n], a_row, &cols, 1, k * k, n);
        }
    }
    Tensor::new(vec![c_out, ho, wo], out)
}

/// Gradient of `conv_forward` with respect to its input.
pub fn conv_backward_input<F: Scalar>(
    grad_out: &Tensor<F>,
    kernel: &Tensor<F>,
    stride: usize,
    in_shape: &[usize],
) -> Result<Tensor<F>> {
    let ksh = kernel.shape();
    let (c_out, c_in, k) = (ksh[0], ksh[1], ksh[2]);
    let (h, w) = (in_shape[1], in_shape[2]);
    let gsh = grad_out.shape();
    let (ho, wo) = (gsh[1], gsh[2]);
    let geom = Geom {
        hc: ho,
        wc: wo,
        hf: h,
        wf: w,
        k,
        stride,
        pad: (k - 1) / 2,
    };
    let n = geom.n();
    let gdata = grad_out.data();
    let wt = kernel.data();
    let mut out = vec![F::zero(); c_in * h * w];
    let mut rows = vec![F::zero(); k * k * n];
    for ci in 0..c_in {
        for v in rows.iter_mut() {
            *v = F::zero();
        }
        // rows = sum_co w[co][ci] (x) grad_out[co]
        for co in 0..c_out {
            let a_row = &wt[(co * c_in + ci) * k * k..(co * c_in + ci + 1) * k * k];
            matmul_transpose_acc(&mut rows, a_row, &gdata[co * n..(co + 1) * n], 1, k * k, n);
        }
        scatter_plane(&rows, &mut out[ci * h * w..(ci + 1) * h * w], geom);
    }
    Tensor::new(vec![c_in, h, w], out)
}

/// Gradient of `conv_forward` with respect to the kernel.
pub fn conv_backward_kernel<F: Scalar>(
    grad_out: &Tensor<F>,
    input: &Tensor<F>,
    stride: usize,
    k: usize,
) -> Result<Tensor<F>> {
    let ish = input.shape();
    let (c_in, h, w) = (ish[0], ish[1], ish[2]);
    let gsh = grad_out.shape();
    let (c_out, ho, wo) = (gsh[0], gsh[1], gsh[2]);
    let geom = Geom {
        hc: ho,
        wc: wo,
        hf: h,
        wf: w,
        k,
        stride,
        pad: (k - 1) / 2,
    };
    let n = geom.n();
    let x = input.data();
    let gdata = grad_out.data();
    let mut out = vec![F::zero(); c_out * c_in * k * k];
    let mut cols = vec![F::zero(); k * k * n];
    for ci in 0..c_in {
        for v in cols.iter_mut() {
            *v = F::zero();
        }
        gather_plane(&x[ci * h * w..(ci + 1) * h * w], &mut cols, geom);
        for co in 0..c_out {
            let o0 = (co * c_in + ci) * k * k;
            dot_rows_acc(
                &mut out[o0..o0 + k * k],
                &gdata[co * n..(co + 1) * n],
                &cols,
                1,
                k * k,
                n,
            );
        }
    }
    Tensor::new(vec![c_out, c_in, k, k], out)
}

/// Transposed convolution (adjoint of a strided convolution, extent n -> n*s).
pub fn tconv_forward<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    stride: usize,
) -> Result<Tensor<F>> {
    let (c_in, c_out, k, h, w) = check_conv_args(input, kernel, stride, true)?;
    let (ho, wo) = (h * stride, w * stride);
    let geom = Geom {
        hc: h,
        wc: w,
        hf: ho,
        wf: wo,
        k,
        stride,
        pad: (k - 1) / 2,
    };
    let n = geom.n();
    let x = input.data();
    let wt = kernel.data();
    let mut out = vec![F::zero(); c_out * ho * wo];
    let mut rows = vec![F::zero(); k * k * n];
    for co in 0..c_out {
        for v in rows.iter_mut() {
            *v = F::zero();
        }
        for ci in 0..c_in {
            let a_row = &wt[(ci * c_out + co) * k * k..(ci * c_out + co + 1) * k * k];
            matmul_transpose_acc(&mut rows, a_row, &x[ci * n..(ci + 1) * n], 1, k * k, n);
        }
        scatter_plane(&rows, &mut out[co * ho * wo..(co + 1) * ho * wo], geom);
    }
    Tensor::new(vec![c_out, ho, wo], out)
}

/// Gradient of `tconv_forward` with respect to its input: a strided
/// correlation of `grad_out` with the same kernel.
pub fn tconv_backward_input<F: Scalar>(
    grad_out: &Tensor<F>,
    kernel: &Tensor<F>,
    stride: usize,
    in_shape: &[usize],
) -> Result<Tensor<F>> {
    let ksh = kernel.shape();
    let (c_in, c_out, k) = (ksh[0], ksh[1], ksh[2]);
    let (h, w) = (in_shape[1], in_shape[2]);
    let gsh = grad_out.shape();
    let (ho, wo) = (gsh[1], gsh[2]);
    let geom = Geom {
        hc: h,
        wc: w,
        hf: ho,
        wf: wo,
        k,
        stride,
        pad: (k - 1) / 2,
    };
    let n = geom.n();
    let gdata = grad_out.data();
    let wt = kernel.data();
    let mut out = vec![F::zero(); c_in * h * w];
    let mut cols = vec![F::zero(); k * k * n];
    for co in 0..c_out {
        for v in cols.iter_mut() {
            *v = F::zero();
        }
        gather_plane(&gdata[co * ho * wo..(co + 1) * ho * wo], &mut cols, geom);
        for ci in 0..c_in {
            let a_row = &wt[(ci * c_out + co) * k * k..(ci * c_out + co + 1) * k * k];
            matmul_acc(&mut out[ci * n..(ci + 1) * n], a_row, &cols, 1, k * k, n);
        }
    }
    Tensor::new(vec![c_in, h, w], out)
}

/// Gradient of `tconv_forward` with respect to the kernel.
pub fn tconv_backward_kernel<F: Scalar>(
    grad_out: &Tensor<F>,
    input: &Tensor<F>,
    stride: usize,
    k: usize,
) -> Result<Tensor<F>> {
    let ish = input.shape();
    let (c_in, h, w) = (ish[0], ish[1], ish[2]);
    let gsh = grad_out.shape();
    let (c_out, ho, wo) = (gsh[0], gsh[1], gsh[2]);
    let geom = Geom {
        hc: h,
        wc: w,
        hf: ho,
        wf: wo,
        k,
        stride,
        pad: (k - 1) / 2,
    };
    let n = geom.n();
    let x = input.data();
    let gdata = grad_out.data();
    let mut out = vec![F::zero(); c_in * c_out * k * k];
    let mut cols = vec![F::zero(); k * k * n];
    for co in 0..c_out {
        for v in cols.iter_mut() {
            *v = F::zero();
        }
        gather_plane(&gdata[co * ho * wo..(co + 1) * ho * wo], &mut cols, geom);
        for ci in 0..c_in {
            let o0 = (ci * c_out + co) * k * k;
            dot_rows_acc(&mut out[o0..o0 + k * k], &x[ci * n..(ci + 1) * n], &cols, 1, k * k, n);
        }
    }
    Tensor::new(vec![c_in, c_out, k, k], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn rand_tensor(shape: &[usize], rng: &mut SplitMix64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.next_range(-1.0, 1.0))
    }

    /// Straight-from-the-definition convolution used as an oracle.
    fn conv_oracle(input: &Tensor<f64>, kernel: &Tensor<f64>, stride: usize) -> Tensor<f64> {
        let (ci_n, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (co_n, k) = (kernel.shape()[0], kernel.shape()[2]);
        let pad = (k - 1) as isize / 2;
        let (ho, wo) = (conv_out_extent(h, stride), conv_out_extent(w, stride));
        let mut out = Tensor::<f64>::zeros(&[co_n, ho, wo]);
        for co in 0..co_n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..ci_n {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad;
                                let ix = (ox * stride + kx) as isize - pad;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = input.data()[(ci * h + iy as usize) * w + ix as usize];
                                let wv = kernel.data()[((co * ci_n + ci) * k + ky) * k + kx];
                                acc += wv * xv;
                            }
                        }
                    }
                    out.data_mut()[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = Tensor::<f64>::from_fn(&[1, 4, 4], |i| i as f64);
        let k = Tensor::<f64>::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv_forward(&x, &k, 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn averaging_kernel_preserves_constants_in_interior() {
        let x = Tensor::<f64>::full(&[1, 6, 6], 3.5);
        let k = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0 / 9.0);
        let y = conv_forward(&x, &k, 1).unwrap();
        for oy in 1..5 {
            for ox in 1..5 {
                let v = y.data()[oy * 6 + ox];
                assert!((v - 3.5).abs() < 1e-12, "at ({oy},{ox}): {v}");
            }
        }
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = SplitMix64::new(99);
        for (ishape, kshape) in [
            (&[2usize, 4, 4][..], &[3usize, 2, 3, 3][..]),
            (&[3, 7, 5][..], &[2, 3, 5, 5][..]),
            (&[1, 9, 9][..], &[4, 1, 3, 3][..]),
        ] {
            let x = rand_tensor(ishape, &mut rng);
            let k = rand_tensor(kshape, &mut rng);
            for stride in [1usize, 2] {
                let y = conv_forward(&x, &k, stride).unwrap();
                let o = conv_oracle(&x, &k, stride);
                assert_eq!(y.shape(), o.shape());
                for (a, b) in y.data().iter().zip(o.data()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn out_extents() {
        let x = Tensor::<f64>::zeros(&[1, 5, 5]);
        let k = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        assert_eq!(conv_forward(&x, &k, 2).unwrap().shape(), &[1, 3, 3]);
        let kt = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        assert_eq!(tconv_forward(&x, &kt, 2).unwrap().shape(), &[1, 10, 10]);
    }

    #[test]
    fn tconv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, tconv(y)> with the same kernel memory: the
        // [co, ci, k, k] layout of conv reads as [ci, co, k, k] for tconv.
        let mut rng = SplitMix64::new(7);
        let x = rand_tensor(&[2, 6, 6], &mut rng);
        let kern = rand_tensor(&[3, 2, 5, 5], &mut rng);
        let cx = conv_forward(&x, &kern, 2).unwrap();
        let y = rand_tensor(cx.shape(), &mut rng);
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let ty = tconv_forward(&y, &kern, 2).unwrap();
        assert_eq!(ty.shape(), x.shape());
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn backward_input_matches_finite_differences() {
        let mut rng = SplitMix64::new(3);
        let x = rand_tensor(&[2, 4, 4], &mut rng);
        let k = rand_tensor(&[2, 2, 3, 3], &mut rng);
        for stride in [1usize, 2] {
            let y = conv_forward(&x, &k, stride).unwrap();
            let gout = Tensor::<f64>::full(y.shape(), 1.0);
            let gin = conv_backward_input(&gout, &k, stride, x.shape()).unwrap();
            let h = 1e-6;
            for i in (0..x.len()).step_by(5) {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                let fp: f64 = conv_forward(&xp, &k, stride).unwrap().data().iter().sum();
                let fm: f64 = conv_forward(&xm, &k, stride).unwrap().data().iter().sum();
                let fd = (fp - fm) / (2.0 * h);
                assert!((gin.data()[i] - fd).abs() < 1e-6, "i={i} stride={stride}");
            }
        }
    }

    #[test]
    fn backward_kernel_matches_finite_differences() {
        let mut rng = SplitMix64::new(4);
        let x = rand_tensor(&[2, 4, 4], &mut rng);
        let k = rand_tensor(&[2, 2, 3, 3], &mut rng);
        for stride in [1usize, 2] {
            let y = conv_forward(&x, &k, stride).unwrap();
            let gout = Tensor::<f64>::full(y.shape(), 1.0);
            let gk = conv_backward_kernel(&gout, &x, stride, 3).unwrap();
            let h = 1e-6;
            for i in (0..k.len()).step_by(7) {
                let mut kp = k.clone();
                kp.data_mut()[i] += h;
                let mut km = k.clone();
                km.data_mut()[i] -= h;
                let fp: f64 = conv_forward(&x, &kp, stride).unwrap().data().iter().sum();
                let fm: f64 = conv_forward(&x, &km, stride).unwrap().data().iter().sum();
                let fd = (fp - fm) / (2.0 * h);
                assert!((gk.data()[i] - fd).abs() < 1e-6, "i={i} stride={stride}");
            }
        }
    }

    #[test]
    fn tconv_backwards_match_finite_differences() {
        let mut rng = SplitMix64::new(5);
        let x = rand_tensor(&[2, 3, 3], &mut rng);
        let k = rand_tensor(&[2, 3, 5, 5], &mut rng); // [ci, co, k, k]
        let stride = 2;
        let y = tconv_forward(&x, &k, stride).unwrap();
        assert_eq!(y.shape(), &[3, 6, 6]);
        let gout = Tensor::<f64>::full(y.shape(), 1.0);
        let gin = tconv_backward_input(&gout, &k, stride, x.shape()).unwrap();
        let gk = tconv_backward_kernel(&gout, &x, stride, 5).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fp: f64 = tconv_forward(&xp, &k, stride).unwrap().data().iter().sum();
            let fm: f64 = tconv_forward(&xm, &k, stride).unwrap().data().iter().sum();
            assert!((gin.data()[i] - (fp - fm) / (2.0 * h)).abs() < 1e-6);
        }
        for i in (0..k.len()).step_by(11) {
            let mut kp = k.clone();
            kp.data_mut()[i] += h;
            let mut km = k.clone();
            km.data_mut()[i] -= h;
            let fp: f64 = tconv_forward(&x, &kp, stride).unwrap().data().iter().sum();
            let fm: f64 = tconv_forward(&x, &km, stride).unwrap().data().iter().sum();
            assert!((gk.data()[i] - (fp - fm) / (2.0 * h)).abs() < 1e-6);
        }
    }

    #[test]
    fn stride1_tconv_matches_adjoint_property_on_odd_extent() {
        let mut rng = SplitMix64::new(8);
        let x = rand_tensor(&[1, 5, 5], &mut rng);
        let kern = rand_tensor(&[2, 1, 3, 3], &mut rng);
        let cx = conv_forward(&x, &kern, 1).unwrap();
        let y = rand_tensor(cx.shape(), &mut rng);
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let ty = tconv_forward(&y, &kern, 1).unwrap();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
