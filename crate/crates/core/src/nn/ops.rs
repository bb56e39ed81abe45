//! Layer primitives with hand-written backward passes. Convolutions go
//! through im2col/col2im and one GEMM per sample.

use rand::Rng as _;

use super::tensor::{gemm, Scalar, Tensor};
use crate::rng::Rng;

/// Geometry of a square-kernel convolution over a `[channels, height,
/// width]` image producing an `out_h x out_w` grid.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_h: conv_output_size(height, kernel, stride, padding),
            out_w: conv_output_size(width, kernel, stride, padding),
        }
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// `floor((input + 2 padding - kernel) / stride) + 1`.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Unfold `img` into `[channels*k*k, out_h*out_w]`.
pub fn im2col<T: Scalar>(img: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let p = g.cols();
    let (h, w) = (g.height as isize, g.width as isize);
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= h {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= w { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: fold columns back, accumulating into `img`.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, img: &mut [T]) {
    let p = g.cols();
    let (h, w) = (g.height as isize, g.width as isize);
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, &v) in src[oy * g.out_w..(oy + 1) * g.out_w].iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(y: &mut Tensor<T>, bias: Option<&Tensor<T>>) {
    let Some(b) = bias else { return };
    let (n, c, h, w) = y.dims4();
    let plane = h * w;
    for i in 0..n {
        let s = y.sample_mut(i);
        for (ch, &bv) in b.data().iter().enumerate().take(c) {
            for v in &mut s[ch * plane..(ch + 1) * plane] {
                *v = *v + bv;
            }
        }
    }
}

fn bias_grad<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = dy.dims4();
    let plane = h * w;
    let mut db = vec![T::zero(); c];
    for i in 0..n {
        let s = dy.sample(i);
        for (ch, acc) in db.iter_mut().enumerate() {
            *acc = *acc + s[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>();
        }
    }
    Tensor::from_vec(&[c], db).expect("length c")
}

/// Convolution. `weight` is `[out, in, k, k]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize, padding: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (o, ci, k, _) = weight.dims4();
    assert_eq!(c, ci, "conv input channels");
    let g = ConvGeometry::new(c, h, w, k, stride, padding);
    let mut y = Tensor::zeros(&[n, o, g.out_h, g.out_w]);
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    for i in 0..n {
        im2col(x.sample(i), &g, &mut cols);
        gemm(o, g.rows(), g.cols(), weight.data(), false, &cols, false, y.sample_mut(i), false);
    }
    add_bias(&mut y, bias);
    y
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dweight: Tensor<T>,
    pub dbias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    dy: &Tensor<T>,
    need_dx: bool,
) -> ConvGrads<T> {
    let (n, c, h, w) = x.dims4();
    let (o, _, k, _) = weight.dims4();
    let g = ConvGeometry::new(c, h, w, k, stride, padding);
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    let mut dweight = Tensor::zeros(weight.shape());
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    for i in 0..n {
        im2col(x.sample(i), &g, &mut cols);
        gemm(o, g.cols(), g.rows(), dy.sample(i), false, &cols, true, dweight.data_mut(), true);
        if let Some(dx) = dx.as_mut() {
            gemm(g.rows(), o, g.cols(), weight.data(), true, dy.sample(i), false, &mut cols, false);
            col2im(&cols, &g, dx.sample_mut(i));
        }
    }
    ConvGrads {
        dx,
        dweight,
        dbias: bias_grad(dy),
    }
}

/// Output side of a transposed convolution.
pub fn conv_transpose_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input - 1) * stride + kernel - 2 * padding
}

/// Transposed convolution (adjoint of [`conv2d`]). `weight` is
/// `[in, out, k, k]`.
pub fn conv_transpose2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (ci, o, k, _) = weight.dims4();
    assert_eq!(c, ci, "transposed conv input channels");
    let (oh, ow) = (
        conv_transpose_output_size(h, k, stride, padding),
        conv_transpose_output_size(w, k, stride, padding),
    );
    let g = ConvGeometry::new(o, oh, ow, k, stride, padding);
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    let mut y = Tensor::zeros(&[n, o, oh, ow]);
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    for i in 0..n {
        gemm(g.rows(), c, g.cols(), weight.data(), true, x.sample(i), false, &mut cols, false);
        col2im(&cols, &g, y.sample_mut(i));
    }
    add_bias(&mut y, bias);
    y
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    dy: &Tensor<T>,
    need_dx: bool,
) -> ConvGrads<T> {
    let (n, c, h, w) = x.dims4();
    let (_, o, k, _) = weight.dims4();
    let (_, _, oh, ow) = dy.dims4();
    let g = ConvGeometry::new(o, oh, ow, k, stride, padding);
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    let mut dweight = Tensor::zeros(weight.shape());
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    for i in 0..n {
        im2col(dy.sample(i), &g, &mut cols);
        gemm(c, g.cols(), g.rows(), x.sample(i), false, &cols, true, dweight.data_mut(), true);
        if let Some(dx) = dx.as_mut() {
            gemm(c, g.rows(), g.cols(), weight.data(), false, &cols, false, dx.sample_mut(i), false);
        }
    }
    ConvGrads {
        dx,
        dweight,
        dbias: bias_grad(dy),
    }
}

pub const NORM_EPS: f64 = 1e-5;

/// Normalised activations and inverse standard deviations per `(n, c)`.
pub struct NormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

/// Per-sample, per-channel normalisation with learned scale and shift.
/// Identical in training and inference, so the network output never
/// depends on batch composition.
pub fn instance_norm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> (Tensor<T>, NormCache<T>) {
    let (n, c, h, w) = x.dims4();
    let m = h * w;
    let mut y = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(n * c);
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * m;
            let src = &x.data()[off..off + m];
            let mean = src.iter().map(|v| v.as_f64()).sum::<f64>() / m as f64;
            let var = src.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / m as f64;
            let istd = 1.0 / (var + NORM_EPS).sqrt();
            let (gm, bt) = (gamma.data()[ch], beta.data()[ch]);
            let (mean, istd) = (T::of(mean), T::of(istd));
            for (j, &v) in src.iter().enumerate() {
                let xh = (v - mean) * istd;
                xhat.data_mut()[off + j] = xh;
                y.data_mut()[off + j] = xh * gm + bt;
            }
            inv_std.push(istd);
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub struct NormGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

pub fn instance_norm_backward<T: Scalar>(cache: &NormCache<T>, gamma: &Tensor<T>, dy: &Tensor<T>) -> NormGrads<T> {
    let (n, c, h, w) = dy.dims4();
    let m = h * w;
    let mf = T::of(m as f64);
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * m;
            let g = &dy.data()[off..off + m];
            let xh = &cache.xhat.data()[off..off + m];
            let sum_g: T = g.iter().copied().sum();
            let sum_gx: T = g.iter().zip(xh).map(|(&a, &b)| a * b).sum();
            dgamma[ch] = dgamma[ch] + sum_gx;
            dbeta[ch] = dbeta[ch] + sum_g;
            // dxhat = g * gamma; dx = istd/m (m dxhat - sum dxhat - xhat sum(dxhat xhat))
            let scale = gamma.data()[ch] * cache.inv_std[i * c + ch] / mf;
            let out = &mut dx.data_mut()[off..off + m];
            for j in 0..m {
                out[j] = scale * (mf * g[j] - sum_g - xh[j] * sum_gx);
            }
        }
    }
    NormGrads {
        dx,
        dgamma: Tensor::from_vec(&[c], dgamma).expect("length c"),
        dbeta: Tensor::from_vec(&[c], dbeta).expect("length c"),
    }
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::of(slope);
    x.map(|v| if v > T::zero() { v } else { v * s })
}

/// Gradient through [`leaky_relu`] given its input `x`.
pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, slope: f64, dy: &Tensor<T>) -> Tensor<T> {
    let s = T::of(slope);
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { g * s })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Gradient through [`sigmoid`] given its output `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

/// Inverted-dropout multipliers: `0` with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<T: Scalar>(shape: &[usize], p: f64, rng: &mut Rng) -> Tensor<T> {
    let keep = T::of(1.0 / (1.0 - p));
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    Tensor::from_vec(shape, data).expect("sized from shape")
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

/// Affine map of `[0, 1]` inputs onto `[-1, 1]`.
pub fn center_unit<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let two = T::of(2.0);
    x.map(|v| v * two - T::one())
}

/// Channel concatenation of two `[N, C, H, W]` tensors.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, ca, h, w) = a.dims4();
    let (nb, cb, hb, wb) = b.dims4();
    assert_eq!((n, h, w), (nb, hb, wb), "concat spatial dims");
    let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
    for i in 0..n {
        data.extend_from_slice(a.sample(i));
        data.extend_from_slice(b.sample(i));
    }
    Tensor::from_vec(&[n, ca + cb, h, w], data).expect("sized from parts")
}

/// Inverse of [`concat_channels`]: split after `first` channels.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = x.dims4();
    let plane = h * w;
    let mut a = Vec::with_capacity(n * first * plane);
    let mut b = Vec::with_capacity(n * (c - first) * plane);
    for i in 0..n {
        let s = x.sample(i);
        a.extend_from_slice(&s[..first * plane]);
        b.extend_from_slice(&s[first * plane..]);
    }
    (
        Tensor::from_vec(&[n, first, h, w], a).expect("sized"),
        Tensor::from_vec(&[n, c - first, h, w], b).expect("sized"),
    )
}
