//! Forward and backward passes of the network layers.

use crate::error::{invalid, Result};
use crate::nn::scalar::gemm;
use crate::nn::{Scalar, Tensor4};

pub const LEAKY_SLOPE: f64 = 0.3;

/// Target size of one im2col band, in elements.
const BAND_BUDGET: usize = 1 << 21;

/// Square convolution with "same" zero padding and stride 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    /// `c_out × c_in × k × k`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv<T> {
    pub fn zeros(c_in: usize, c_out: usize, k: usize) -> Self {
        Self { c_in, c_out, k, weight: vec![T::ZERO; c_out * c_in * k * k], bias: vec![T::ZERO; c_out] }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        if x.channels() != self.c_in {
            return Err(invalid(format!("conv expects {} input channels, got {}", self.c_in, x.channels())));
        }
        if self.k % 2 == 0 {
            return Err(invalid("conv kernel size must be odd"));
        }
        Ok(())
    }

    fn band_rows(&self, w: usize) -> usize {
        let col_len = self.c_in * self.k * self.k * w;
        (BAND_BUDGET / col_len.max(1)).max(1)
    }
}

/// Rows `r0..r1` of the patch matrix: one row per `(c, ky, kx)`, one column per pixel.
fn im2col<T: Scalar>(x: &[T], c_in: usize, h: usize, w: usize, k: usize, r0: usize, r1: usize, cols: &mut [T]) {
    let p = k / 2;
    let bw = (r1 - r0) * w;
    for ci in 0..c_in {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * bw..(row + 1) * bw];
                for r in r0..r1 {
                    let d = &mut dst[(r - r0) * w..(r - r0 + 1) * w];
                    let sr = r as isize + ky as isize - p as isize;
                    if sr < 0 || sr >= h as isize {
                        d.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[sr as usize * w..(sr as usize + 1) * w];
                    let off = kx as isize - p as isize;
                    if off >= 0 {
                        let o = (off as usize).min(w);
                        d[..w - o].copy_from_slice(&src[o..]);
                        d[w - o..].fill(T::ZERO);
                    } else {
                        let o = ((-off) as usize).min(w);
                        d[..o].fill(T::ZERO);
                        d[o..].copy_from_slice(&src[..w - o]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch-matrix rows back into `dx`.
fn col2im<T: Scalar>(cols: &[T], c_in: usize, h: usize, w: usize, k: usize, r0: usize, r1: usize, dx: &mut [T]) {
    let p = k / 2;
    let bw = (r1 - r0) * w;
    for ci in 0..c_in {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_rows = &cols[row * bw..(row + 1) * bw];
                for r in r0..r1 {
                    let s = &src_rows[(r - r0) * w..(r - r0 + 1) * w];
                    let sr = r as isize + ky as isize - p as isize;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let d = &mut plane[sr as usize * w..(sr as usize + 1) * w];
                    let off = kx as isize - p as isize;
                    if off >= 0 {
                        let o = (off as usize).min(w);
                        for (dv, sv) in d[o..].iter_mut().zip(&s[..w - o]) {
                            *dv += *sv;
                        }
                    } else {
                        let o = ((-off) as usize).min(w);
                        for (dv, sv) in d[..w - o].iter_mut().zip(&s[o..]) {
                            *dv += *sv;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(x: &Tensor4<T>, conv: &Conv<T>) -> Result<Tensor4<T>> {
    conv.check(x)?;
    let [n, _, h, w] = x.shape();
    let hw = h * w;
    let kk = conv.c_in * conv.k * conv.k;
    let mut out = Tensor4::zeros([n, conv.c_out, h, w]);
    let band = conv.band_rows(w);
    let mut cols = if conv.k == 1 { Vec::new() } else { vec![T::ZERO; kk * band.min(h) * w] };
    for s in 0..n {
        let xs = x.sample(s);
        let ys = out.sample_mut(s);
        for (o, plane) in ys.chunks_mut(hw).enumerate() {
            plane.fill(conv.bias[o]);
        }
        if conv.k == 1 {
            gemm(conv.c_out, kk, hw, &conv.weight, (kk, 1), xs, (hw, 1), T::ONE, ys, (hw, 1));
            continue;
        }
        let mut r0 = 0;
        while r0 < h {
            let r1 = (r0 + band).min(h);
            let bw = (r1 - r0) * w;
            im2col(xs, conv.c_in, h, w, conv.k, r0, r1, &mut cols);
            gemm(conv.c_out, kk, bw, &conv.weight, (kk, 1), &cols[..kk * bw], (bw, 1), T::ONE, &mut ys[r0 * w..], (hw, 1));
            r0 = r1;
        }
    }
    Ok(out)
}

/// Gradients of a convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrad<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Returns `(dx, dW, db)`; `dx` is skipped when `want_dx` is false.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    conv: &Conv<T>,
    dy: &Tensor4<T>,
    want_dx: bool,
) -> Result<(Option<Tensor4<T>>, ConvGrad<T>)> {
    conv.check(x)?;
    let [n, _, h, w] = x.shape();
    if dy.shape() != [n, conv.c_out, h, w] {
        return Err(invalid("conv backward: upstream gradient shape mismatch"));
    }
    let hw = h * w;
    let kk = conv.c_in * conv.k * conv.k;
    let mut grad = ConvGrad { weight: vec![T::ZERO; conv.weight.len()], bias: vec![T::ZERO; conv.c_out] };
    let mut dx = want_dx.then(|| Tensor4::zeros(x.shape()));
    let band = conv.band_rows(w);
    let mut cols = if conv.k == 1 { Vec::new() } else { vec![T::ZERO; kk * band.min(h) * w] };
    let mut dcols = if conv.k == 1 || !want_dx { Vec::new() } else { vec![T::ZERO; kk * band.min(h) * w] };
    for s in 0..n {
        let xs = x.sample(s);
        let dys = dy.sample(s);
        for (o, plane) in dys.chunks(hw).enumerate() {
            grad.bias[o] += plane.iter().copied().sum::<T>();
        }
        if conv.k == 1 {
            gemm(conv.c_out, hw, kk, dys, (hw, 1), xs, (1, hw), T::ONE, &mut grad.weight, (kk, 1));
            if let Some(dx) = dx.as_mut() {
                gemm(kk, conv.c_out, hw, &conv.weight, (1, kk), dys, (hw, 1), T::ONE, dx.sample_mut(s), (hw, 1));
            }
            continue;
        }
        let mut r0 = 0;
        while r0 < h {
            let r1 = (r0 + band).min(h);
            let bw = (r1 - r0) * w;
            im2col(xs, conv.c_in, h, w, conv.k, r0, r1, &mut cols);
            let dyb = &dys[r0 * w..];
            gemm(conv.c_out, bw, kk, dyb, (hw, 1), &cols[..kk * bw], (1, bw), T::ONE, &mut grad.weight, (kk, 1));
            if let Some(dx) = dx.as_mut() {
                gemm(kk, conv.c_out, bw, &conv.weight, (1, kk), dyb, (hw, 1), T::ZERO, &mut dcols[..kk * bw], (bw, 1));
                col2im(&dcols, conv.c_in, h, w, conv.k, r0, r1, dx.sample_mut(s));
            }
            r0 = r1;
        }
    }
    Ok((dx, grad))
}

pub fn leaky_relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let a = T::from_f64(LEAKY_SLOPE);
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| {
        if *v < T::ZERO {
            *v *= a;
        }
    });
    y
}

/// Gradient through the activation, evaluated at pre-activation `x` (slope 1 at 0).
pub fn leaky_relu_backward<T: Scalar>(x: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let a = T::from_f64(LEAKY_SLOPE);
    let mut dx = dy.clone();
    for (d, v) in dx.data_mut().iter_mut().zip(x.data()) {
        if *v < T::ZERO {
            *d *= a;
        }
    }
    dx
}

/// 2×2 max pooling; also returns the winning cell (0..4, row-major) per output.
pub fn maxpool2<T: Scalar>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u8>)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(invalid(format!("max pooling needs even dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut arg = vec![0u8; n * c * oh * ow];
    for (p, (src, dst)) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(oh * ow)).enumerate() {
        let argp = &mut arg[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let cells = [
                    src[2 * i * w + 2 * j],
                    src[2 * i * w + 2 * j + 1],
                    src[(2 * i + 1) * w + 2 * j],
                    src[(2 * i + 1) * w + 2 * j + 1],
                ];
                let mut best = 0;
                for q in 1..4 {
                    if cells[q] > cells[best] {
                        best = q;
                    }
                }
                dst[i * ow + j] = cells[best];
                argp[i * ow + j] = best as u8;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2_backward<T: Scalar>(dy: &Tensor4<T>, arg: &[u8], input_shape: [usize; 4]) -> Tensor4<T> {
    let [_, _, h, w] = input_shape;
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = Tensor4::zeros(input_shape);
    for (p, (src, dst)) in dy.data().chunks(oh * ow).zip(dx.data_mut().chunks_mut(h * w)).enumerate() {
        let argp = &arg[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let q = argp[i * ow + j] as usize;
                dst[(2 * i + q / 2) * w + 2 * j + q % 2] = src[i * ow + j];
            }
        }
    }
    dx
}

pub fn upsample_nearest2<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor4::zeros([n, c, 2 * h, 2 * w]);
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(4 * h * w)) {
        for i in 0..2 * h {
            let s = &src[(i / 2) * w..(i / 2 + 1) * w];
            let d = &mut dst[i * 2 * w..(i + 1) * 2 * w];
            for (j, v) in s.iter().enumerate() {
                d[2 * j] = *v;
                d[2 * j + 1] = *v;
            }
        }
    }
    out
}

pub fn upsample_nearest2_backward<T: Scalar>(dy: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h2, w2] = dy.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor4::zeros([n, c, h, w]);
    for (src, dst) in dy.data().chunks(h2 * w2).zip(dx.data_mut().chunks_mut(h * w)) {
        for i in 0..h2 {
            for j in 0..w2 {
                dst[(i / 2) * w + j / 2] += src[i * w2 + j];
            }
        }
    }
    dx
}

pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (n, h, w) != (nb, hb, wb) {
        return Err(invalid(format!("cannot concatenate {:?} and {:?}", a.shape(), b.shape())));
    }
    let mut out = Tensor4::zeros([n, ca + cb, h, w]);
    for s in 0..n {
        let dst = out.sample_mut(s);
        dst[..ca * h * w].copy_from_slice(a.sample(s));
        dst[ca * h * w..].copy_from_slice(b.sample(s));
    }
    Ok(out)
}

/// Splits channels `[0, ca)` and `[ca, C)`: the backward of [`concat_channels`].
pub fn split_channels<T: Scalar>(x: &Tensor4<T>, ca: usize) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let [n, c, h, w] = x.shape();
    if ca == 0 || ca >= c {
        return Err(invalid(format!("cannot split {c} channels at {ca}")));
    }
    let mut a = Tensor4::zeros([n, ca, h, w]);
    let mut b = Tensor4::zeros([n, c - ca, h, w]);
    for s in 0..n {
        let src = x.sample(s);
        a.sample_mut(s).copy_from_slice(&src[..ca * h * w]);
        b.sample_mut(s).copy_from_slice(&src[ca * h * w..]);
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_kernel_is_identity() {
        let x = Tensor4::from_fn([2, 3, 5, 6], |i| (i as f64 * 0.37).sin());
        let mut conv = Conv::<f64>::zeros(3, 3, 3);
        for c in 0..3 {
            conv.weight[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        let y = conv2d_forward(&x, &conv).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn leaky_values() {
        let x = Tensor4::from_vec([1, 1, 1, 3], vec![1.0, -1.0, 0.0]).unwrap();
        assert_eq!(leaky_relu(&x).data(), &[1.0, -0.3, 0.0]);
        let g = leaky_relu_backward(&x, &Tensor4::from_vec([1, 1, 1, 3], vec![1.0; 3]).unwrap());
        assert_eq!(g.data(), &[1.0, 0.3, 1.0]);
    }

    #[test]
    fn pool_examples() {
        let x = Tensor4::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let dx = maxpool2_backward(&Tensor4::from_vec([1, 1, 1, 1], vec![2.5]).unwrap(), &arg, x.shape());
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 2.5]);
        let tie = Tensor4::from_vec([1, 1, 2, 2], vec![7.0; 4]).unwrap();
        let (_, arg) = maxpool2(&tie).unwrap();
        assert_eq!(arg, vec![0]);
        assert!(maxpool2(&Tensor4::<f64>::zeros([1, 1, 3, 2])).is_err());
    }

    #[test]
    fn upsample_then_pool_is_identity() {
        let x = Tensor4::from_fn([1, 2, 3, 4], |i| i as f64);
        let up = upsample_nearest2(&x);
        assert_eq!(up.shape(), [1, 2, 6, 8]);
        assert_eq!(maxpool2(&up).unwrap().0, x);
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = Tensor4::from_fn([2, 4, 3, 3], |i| i as f64);
        let b = Tensor4::from_fn([2, 8, 3, 3], |i| -(i as f64));
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), [2, 12, 3, 3]);
        let (a2, b2) = split_channels(&c, 4).unwrap();
        assert_eq!((a2, b2), (a, b));
        assert!(concat_channels(&Tensor4::<f64>::zeros([1, 1, 2, 2]), &Tensor4::zeros([1, 1, 2, 4])).is_err());
    }
}
