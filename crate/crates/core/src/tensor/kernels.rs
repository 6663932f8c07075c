//! Forward and backward kernels for the dense layer types.
//!
//! Convolutions are cross-correlations lowered to GEMM through an im2col
//! buffer. Every kernel is a pure function of its arguments and iterates in a
//! fixed order, so reruns are bit-identical.

use rand::Rng;

use super::{Scalar, Tensor};
use crate::error::{Result, SnnError};

/// Plain matrix product of `a: m x k` and `b: k x p`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k, p) = match (a.shape(), b.shape()) {
        ([m, k], [k2, p]) if k == k2 => (*m, *k, *p),
        (sa, sb) => {
            return Err(SnnError::dim(format!(
                "matmul: cannot multiply {sa:?} by {sb:?}"
            )))
        }
    };
    let mut out = vec![T::zero(); m * p];
    T::gemm(m, k, p, a.data(), (k, 1), b.data(), (p, 1), T::zero(), &mut out, (p, 1));
    Tensor::new(&[m, p], out)
}

/// Output extent of a convolution along one axis. The window must tile the
/// padded input exactly.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(SnnError::param("conv2d: stride and kernel must be positive"));
    }
    let padded = input + 2 * pad;
    if kernel > padded {
        return Err(SnnError::dim(format!(
            "conv2d: kernel {kernel} larger than padded input {padded}"
        )));
    }
    if (padded - kernel) % stride != 0 {
        return Err(SnnError::dim(format!(
            "conv2d: ({input} + 2*{pad} - {kernel}) is not divisible by stride {stride}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(x_shape: &[usize], w_shape: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (n, c_in, h, w) = match *x_shape {
            [c, h, w] => (1, c, h, w),
            [n, c, h, w] => (n, c, h, w),
            _ => {
                return Err(SnnError::dim(format!(
                    "conv2d: input must be [C,H,W] or [N,C,H,W], got {x_shape:?}"
                )))
            }
        };
        let [c_out, c_w, kh, kw] = *w_shape else {
            return Err(SnnError::dim(format!(
                "conv2d: weight must be [C_out,C_in,kh,kw], got {w_shape:?}"
            )));
        };
        if c_w != c_in {
            return Err(SnnError::dim(format!(
                "conv2d: input {x_shape:?} has {c_in} channels but weight {w_shape:?} expects {c_w}"
            )));
        }
        let ho = conv_output_size(h, kh, stride, pad)?;
        let wo = conv_output_size(w, kw, stride, pad)?;
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn in_image(&self) -> usize {
        self.c_in * self.h * self.w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn out_shape(&self, batched: bool) -> Vec<usize> {
        if batched {
            vec![self.n, self.c_out, self.ho, self.wo]
        } else {
            vec![self.c_out, self.ho, self.wo]
        }
    }

    /// Unfolds one image into a `patch x out_plane` matrix.
    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.c_in {
            let src = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src_row = &src[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters a column matrix back onto an image.
    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.c_in {
            let dst = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst_row[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation (no kernel flip) of `x: [C_in,H,W]` or
/// `[N,C_in,H,W]` with `w: [C_out,C_in,kh,kw]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x.shape(), w.shape(), stride, pad)?;
    let (k, plane) = (g.patch(), g.out_plane());
    let mut out = vec![T::zero(); g.n * g.c_out * plane];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * plane] };
    for (image, out_n) in x
        .data()
        .chunks_exact(g.in_image())
        .zip(out.chunks_exact_mut(g.c_out * plane))
    {
        let cols_ref: &[T] = if g.is_pointwise() {
            image
        } else {
            g.im2col(image, &mut cols);
            &cols
        };
        T::gemm(g.c_out, k, plane, w.data(), (k, 1), cols_ref, (plane, 1), T::zero(), out_n, (plane, 1));
    }
    Tensor::new(&g.out_shape(x.ndim() == 4), out)
}

/// Gradient of a convolution with respect to its weight.
pub fn conv2d_backward_weight<T: Scalar>(
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
    w_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x.shape(), w_shape, stride, pad)?;
    let expected = g.out_shape(x.ndim() == 4);
    if grad_out.shape() != expected.as_slice() {
        return Err(SnnError::dim(format!(
            "conv2d backward: gradient {:?} does not match output {:?}",
            grad_out.shape(),
            expected
        )));
    }
    let (k, plane) = (g.patch(), g.out_plane());
    let mut dw = vec![T::zero(); g.c_out * k];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * plane] };
    for (image, g_n) in x
        .data()
        .chunks_exact(g.in_image())
        .zip(grad_out.data().chunks_exact(g.c_out * plane))
    {
        let cols_ref: &[T] = if g.is_pointwise() {
            image
        } else {
            g.im2col(image, &mut cols);
            &cols
        };
        // dW += G_n · colsᵀ
        T::gemm(g.c_out, plane, k, g_n, (plane, 1), cols_ref, (1, plane), T::one(), &mut dw, (k, 1));
    }
    Tensor::new(w_shape, dw)
}

/// Gradient of a convolution with respect to its input (a transposed convolution).
pub fn conv2d_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    w: &Tensor<T>,
    x_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x_shape, w.shape(), stride, pad)?;
    let expected = g.out_shape(x_shape.len() == 4);
    if grad_out.shape() != expected.as_slice() {
        return Err(SnnError::dim(format!(
            "conv2d backward: gradient {:?} does not match output {:?}",
            grad_out.shape(),
            expected
        )));
    }
    let (k, plane) = (g.patch(), g.out_plane());
    let mut dx = vec![T::zero(); g.n * g.in_image()];
    let mut dcols = vec![T::zero(); k * plane];
    for (dx_n, g_n) in dx
        .chunks_exact_mut(g.in_image())
        .zip(grad_out.data().chunks_exact(g.c_out * plane))
    {
        if g.is_pointwise() {
            T::gemm(k, g.c_out, plane, w.data(), (1, k), g_n, (plane, 1), T::zero(), dx_n, (plane, 1));
        } else {
            // dcols = Wᵀ · G_n
            T::gemm(k, g.c_out, plane, w.data(), (1, k), g_n, (plane, 1), T::zero(), &mut dcols, (plane, 1));
            g.col2im(&dcols, dx_n);
        }
    }
    Tensor::new(x_shape, dx)
}

fn pool_dims(shape: &[usize], k: usize) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(SnnError::dim(format!("avg_pool: need spatial dims, got {shape:?}")));
    }
    if k == 0 {
        return Err(SnnError::param("avg_pool: window must be positive"));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h % k != 0 || w % k != 0 {
        return Err(SnnError::dim(format!(
            "avg_pool: window {k} does not divide spatial dims {h}x{w}"
        )));
    }
    let planes = shape[..shape.len() - 2].iter().product();
    Ok((planes, h, w))
}

/// Non-overlapping `k x k` mean pooling over the two trailing axes.
pub fn avg_pool<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (planes, h, w) = pool_dims(x.shape(), k)?;
    let (ho, wo) = (h / k, w / k);
    let norm = T::one() / T::from_usize(k * k).unwrap();
    let mut out = vec![T::zero(); planes * ho * wo];
    for (src, dst) in x.data().chunks_exact(h * w).zip(out.chunks_exact_mut(ho * wo)) {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for dy in 0..k {
                    let row = &src[(oy * k + dy) * w + ox * k..(oy * k + dy) * w + ox * k + k];
                    for &v in row {
                        acc += v;
                    }
                }
                dst[oy * wo + ox] = acc * norm;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let nd = shape.len();
    shape[nd - 2] = ho;
    shape[nd - 1] = wo;
    Tensor::new(&shape, out)
}

/// Spreads each pooled gradient uniformly (divided by `k²`) over its window.
pub fn avg_pool_backward<T: Scalar>(grad_out: &Tensor<T>, k: usize, x_shape: &[usize]) -> Result<Tensor<T>> {
    let (planes, h, w) = pool_dims(x_shape, k)?;
    let (ho, wo) = (h / k, w / k);
    if grad_out.len() != planes * ho * wo {
        return Err(SnnError::dim(format!(
            "avg_pool backward: gradient {:?} does not match input {x_shape:?}",
            grad_out.shape()
        )));
    }
    let norm = T::one() / T::from_usize(k * k).unwrap();
    let mut dx = vec![T::zero(); planes * h * w];
    for (src, dst) in grad_out.data().chunks_exact(ho * wo).zip(dx.chunks_exact_mut(h * w)) {
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / k) * wo + x / k] * norm;
            }
        }
    }
    Tensor::new(x_shape, dx)
}

/// Mean over the two trailing (spatial) axes: `[.., C, H, W] -> [.., C]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() < 3 {
        return Err(SnnError::dim(format!(
            "global_avg_pool: need [..,C,H,W], got {shape:?}"
        )));
    }
    let area = shape[shape.len() - 2] * shape[shape.len() - 1];
    let norm = T::one() / T::from_usize(area).unwrap();
    let data = x
        .data()
        .chunks_exact(area)
        .map(|plane| plane.iter().copied().sum::<T>() * norm)
        .collect();
    Tensor::new(&shape[..shape.len() - 2], data)
}

/// Inverted-dropout mask: each element is `1/(1-rate)` with probability
/// `1-rate`, else 0. In evaluation mode the mask is all ones.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    rate: f64,
    train: bool,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(SnnError::param(format!("dropout rate {rate} outside [0,1)")));
    }
    if !train || rate == 0.0 {
        return Ok(Tensor::ones(shape));
    }
    let keep = 1.0 - rate;
    let on = T::from_f64_lossy(1.0 / keep);
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| if rng.gen::<f64>() < keep { on } else { T::zero() })
        .collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    /// Direct six-loop cross-correlation used as an oracle for the im2col path.
    fn conv_naive(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let [c, h, wd] = *x.shape() else { unreachable!() };
        let [co, _, kh, kw] = *w.shape() else { unreachable!() };
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; co * ho * wo];
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (oy * stride + i) as isize - pad as isize;
                                let ix = (ox * stride + j) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.data()[(ci * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((o * c + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        Tensor::new(&[co, ho, wo], out).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[1., 1.]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3., 7.]);

        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        let v = t(&[2, 1], &[5., 6.]);
        assert_eq!(matmul(&eye, &v).unwrap(), v);

        let z = Tensor::<f64>::zeros(&[2, 3]);
        let any = t(&[3, 2], &[1., -2., 3., 4., 5., 6.]);
        assert_eq!(matmul(&z, &any).unwrap(), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::<f64>::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn conv_identity_kernel_returns_input() {
        let x = t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let w = t(&[1, 1, 1, 1], &[1.]);
        assert_eq!(conv2d(&x, &w, 1, 0).unwrap(), x);
    }

    #[test]
    fn conv_ones_kernel_on_constant_image() {
        let c = 0.7;
        let x = Tensor::<f64>::full(&[1, 5, 5], c);
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let y = conv2d(&x, &w, 1, 1).unwrap();
        // interior pixel (2,2)
        assert!((y.data()[2 * 5 + 2] - 9.0 * c).abs() < 1e-12);
        // corner sees only 4 in-bounds taps
        assert!((y.data()[0] - 4.0 * c).abs() < 1e-12);
    }

    #[test]
    fn conv_zero_kernel_gives_zero() {
        let x = t(&[1, 2, 2], &[1., 2., 3., 4.]);
        let w = Tensor::<f64>::zeros(&[3, 1, 2, 2]);
        assert_eq!(conv2d(&x, &w, 1, 0).unwrap(), Tensor::zeros(&[3, 1, 1]));
    }

    #[test]
    fn conv_non_integral_output_is_dimension_error() {
        let x = Tensor::<f64>::zeros(&[1, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        assert!(matches!(conv2d(&x, &w, 2, 0), Err(SnnError::Dimension(_))));
        let big = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        assert!(matches!(conv2d(&x, &big, 1, 0), Err(SnnError::Dimension(_))));
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(c, h, co, k, stride, pad) in &[(2, 5, 3, 3, 1, 1), (3, 7, 2, 3, 2, 0), (1, 6, 4, 2, 2, 0), (2, 4, 2, 1, 1, 0)] {
            let x = Tensor::from_f64(&[c, h, h], &(0..c * h * h).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
            let w = Tensor::from_f64(&[co, c, k, k], &(0..co * c * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
            let fast = conv2d(&x, &w, stride, pad).unwrap();
            let slow = conv_naive(&x, &w, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x), g> == <x, conv_bwd_input(g)> == <w, conv_bwd_weight(x, g)>
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rand = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let x = t(&[2, 3, 6, 6], &rand(2 * 3 * 36));
        let w = t(&[4, 3, 3, 3], &rand(4 * 27));
        let y = conv2d(&x, &w, 1, 1).unwrap();
        let g = t(y.shape(), &rand(y.len()));
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let dx = conv2d_backward_input(&g, &w, x.shape(), 1, 1).unwrap();
        let dw = conv2d_backward_weight(&x, &g, w.shape(), 1, 1).unwrap();
        let via_x: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        let via_w: f64 = w.data().iter().zip(dw.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
    }

    #[test]
    fn avg_pool_examples() {
        let x = t(&[1, 2, 2], &[1., 3., 5., 7.]);
        assert_eq!(avg_pool(&x, 2).unwrap().data(), &[4.0]);

        let c = Tensor::<f64>::full(&[2, 4, 4], 0.3);
        let p = avg_pool(&c, 2).unwrap();
        assert_eq!(p.shape(), &[2, 2, 2]);
        assert!(p.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));

        let ones = Tensor::<f64>::ones(&[1, 4, 4]);
        assert_eq!(avg_pool(&ones, 2).unwrap(), Tensor::ones(&[1, 2, 2]));

        assert!(matches!(avg_pool(&Tensor::<f64>::zeros(&[1, 3, 4]), 2), Err(SnnError::Dimension(_))));
    }

    #[test]
    fn avg_pool_backward_spreads_uniformly() {
        let g = t(&[1, 1, 1], &[8.0]);
        let dx = avg_pool_backward(&g, 2, &[1, 2, 2]).unwrap();
        assert_eq!(dx.data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn pool_then_constant_upsample_preserves_window_means() {
        let x = t(&[1, 4, 4], &(0..16).map(|v| v as f64).collect::<Vec<_>>());
        let p = avg_pool(&x, 2).unwrap();
        // constant upsample is avg_pool_backward scaled by k²
        let up = avg_pool_backward(&p, 2, x.shape()).unwrap().scale(4.0);
        assert_eq!(avg_pool(&up, 2).unwrap(), p);
    }

    #[test]
    fn global_pool_averages_planes() {
        let x = t(&[2, 2, 2], &[1., 2., 3., 4., 0., 0., 0., 8.]);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5, 2.0]);
    }

    #[test]
    fn dropout_mask_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m: Tensor<f64> = dropout_mask(&[10], 0.0, true, &mut rng).unwrap();
        assert_eq!(m, Tensor::ones(&[10]));
        let m: Tensor<f64> = dropout_mask(&[10], 0.9, false, &mut rng).unwrap();
        assert_eq!(m, Tensor::ones(&[10]));
        assert!(dropout_mask::<f64, _>(&[2], 1.0, true, &mut rng).is_err());
        assert!(dropout_mask::<f64, _>(&[2], -0.1, true, &mut rng).is_err());

        let a: Tensor<f64> = dropout_mask(&[64], 0.5, true, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b: Tensor<f64> = dropout_mask(&[64], 0.5, true, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let bytes = |t: &Tensor<f64>| t.data().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>();
        assert_eq!(bytes(&a), bytes(&b));
        assert!(a.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
