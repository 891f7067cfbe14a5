//! Stride-1 "same" convolution and stride-s transposed convolution.
//!
//! Both lower to GEMM through `im2col`/`col2im`. Per batch item the work is
//! independent; weight gradients are reduced over items in batch order so
//! results do not depend on the worker count.

use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Weight bank `(out_channels, in_channels, k, k)` plus one bias per output
/// channel stored as `(1, out_channels, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFilter<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvFilter<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        check_filter_shapes(weight.shape(), bias.shape())?;
        Ok(ConvFilter { weight, bias })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, k: usize) -> Result<Self> {
        Self::new(
            Tensor::zeros(Shape::new(out_channels, in_channels, k, k)?),
            Tensor::zeros(Shape::new(1, out_channels, 1, 1)?),
        )
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape().h
    }
}

fn check_filter_shapes(w: Shape, b: Shape) -> Result<()> {
    if w.h != w.w {
        return Err(Error::shape(format!("non-square kernel {w}")));
    }
    if b != Shape::scalar().with_c(w.n) {
        return Err(Error::shape(format!("bias {b} does not match weight {w}")));
    }
    Ok(())
}

fn check_conv_input(x: Shape, w: Shape, b: Shape, op: &str) -> Result<()> {
    check_filter_shapes(w, b)?;
    if x.c != w.c {
        return Err(Error::shape(format!("{op}: input has {} channels, filter expects {}", x.c, w.c)));
    }
    Ok(())
}

/// Geometry of a sliding window over one `channels × height × width` image.
#[derive(Clone, Copy, Debug)]
struct Window {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    // Range of output columns `j` whose source column `j*stride + v - pad`
    // lies inside the image.
    fn valid_range(&self, offset: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if offset >= self.pad { 0 } else { (self.pad - offset).div_ceil(s) };
        let limit = extent + self.pad; // source = j*s + offset - pad < extent
        let hi = if limit > offset { ((limit - offset - 1) / s + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }

    /// `col[(c,u,v), (i,j)] = image[c, i*stride+u-pad, j*stride+v-pad]`, zero
    /// outside the image.
    fn im2col<T: Real>(&self, image: &[T]) -> Vec<T> {
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let mut col = vec![T::zero(); self.rows() * self.cols()];
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for u in 0..k {
                let (i_lo, i_hi) = self.valid_range(u, self.height, self.out_h);
                for v in 0..k {
                    let (j_lo, j_hi) = self.valid_range(v, self.width, self.out_w);
                    let dst = &mut col[row * self.cols()..(row + 1) * self.cols()];
                    for i in i_lo..i_hi {
                        let si = i * s + u - p;
                        let src_row = &plane[si * self.width..(si + 1) * self.width];
                        let out_row = &mut dst[i * self.out_w..(i + 1) * self.out_w];
                        if j_lo == j_hi {
                            continue;
                        }
                        if s == 1 {
                            let start = j_lo + v - p;
                            out_row[j_lo..j_hi].copy_from_slice(&src_row[start..start + (j_hi - j_lo)]);
                        } else {
                            for j in j_lo..j_hi {
                                out_row[j] = src_row[j * s + v - p];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
        col
    }

    /// Adjoint of [`Window::im2col`]: scatter-adds columns back into `image`.
    fn col2im<T: Real>(&self, col: &[T], image: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for u in 0..k {
                let (i_lo, i_hi) = self.valid_range(u, self.height, self.out_h);
                for v in 0..k {
                    let (j_lo, j_hi) = self.valid_range(v, self.width, self.out_w);
                    let src = &col[row * self.cols()..(row + 1) * self.cols()];
                    for i in i_lo..i_hi {
                        let si = i * s + u - p;
                        let dst_row = &mut plane[si * self.width..(si + 1) * self.width];
                        let in_row = &src[i * self.out_w..(i + 1) * self.out_w];
                        for j in j_lo..j_hi {
                            dst_row[j * s + v - p] += in_row[j];
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn same_window(x: Shape, k: usize) -> Window {
    Window { channels: x.c, height: x.h, width: x.w, kernel: k, stride: 1, pad: (k - 1) / 2, out_h: x.h, out_w: x.w }
}

fn per_item<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    (0..n).into_par_iter().map(f).collect()
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

// Sum of `grad` over batch and spatial axes, per channel.
fn bias_grad<T: Real>(grad: &Tensor<T>) -> Tensor<T> {
    let s = grad.shape();
    let mut db = vec![T::zero(); s.c];
    for n in 0..s.n {
        for (c, chunk) in grad.item(n).chunks(s.plane()).enumerate() {
            db[c] += chunk.iter().fold(T::zero(), |a, &v| a + v);
        }
    }
    Tensor::from_vec(Shape::scalar().with_c(s.c), db).expect("bias shape")
}

fn sum_in_order<T: Real>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut total = vec![T::zero(); len];
    for part in parts {
        total.iter_mut().zip(part).for_each(|(a, b)| *a += b);
    }
    total
}

/// Stride-1 convolution with zero padding `(k-1)/2`, preserving `h × w`.
///
/// `out[n,o,i,j] = bias[o] + Σ_{c,u,v} w[o,c,u,v] · x_pad[n,c,i+u,j+v]`
pub fn conv2d_same<T: Real>(x: &Tensor<T>, filter: &ConvFilter<T>) -> Result<Tensor<T>> {
    conv2d_same_raw(x, &filter.weight, &filter.bias)
}

fn conv2d_same_raw<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), weight.shape());
    check_conv_input(xs, ws, bias.shape(), "conv2d_same")?;
    if ws.h % 2 == 0 {
        return Err(Error::shape(format!("conv2d_same needs an odd kernel, got {}", ws.h)));
    }
    let win = same_window(xs, ws.h);
    let out_shape = xs.with_c(ws.n);
    let items = per_item(xs.n, |n| {
        let mut out = vec![T::zero(); out_shape.item()];
        let image = x.item(n);
        if win.kernel == 1 {
            T::gemm(ws.n, win.rows(), win.cols(), weight.data(), false, image, false, T::zero(), &mut out);
        } else {
            let col = win.im2col(image);
            T::gemm(ws.n, win.rows(), win.cols(), weight.data(), false, &col, false, T::zero(), &mut out);
        }
        add_bias(&mut out, bias.data(), xs.plane());
        out
    });
    Tensor::from_vec(out_shape, items.concat())
}

/// Gradients of [`conv2d_same`] with respect to input, weight and bias.
pub fn conv2d_same_backward<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (xs, ws) = (x.shape(), weight.shape());
    let win = same_window(xs, ws.h);
    let parts = per_item(xs.n, |n| {
        let g = grad_out.item(n);
        let image = x.item(n);
        let mut dw = vec![T::zero(); ws.len()];
        let mut dx = vec![T::zero(); xs.item()];
        if win.kernel == 1 {
            T::gemm(ws.n, win.cols(), win.rows(), g, false, image, true, T::zero(), &mut dw);
            T::gemm(win.rows(), ws.n, win.cols(), weight.data(), true, g, false, T::zero(), &mut dx);
        } else {
            let col = win.im2col(image);
            T::gemm(ws.n, win.cols(), win.rows(), g, false, &col, true, T::zero(), &mut dw);
            let mut dcol = vec![T::zero(); col.len()];
            T::gemm(win.rows(), ws.n, win.cols(), weight.data(), true, g, false, T::zero(), &mut dcol);
            win.col2im(&dcol, &mut dx);
        }
        (dx, dw)
    });
    let (dxs, dws): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let dx = Tensor::from_vec(xs, dxs.concat()).expect("dx shape");
    let dw = Tensor::from_vec(ws, sum_in_order(dws, ws.len())).expect("dw shape");
    (dx, dw, bias_grad(grad_out))
}

/// Output extent of a transposed convolution: `(in - 1) * stride + k`.
pub fn transposed_output_size(input: usize, kernel: usize, stride: usize) -> usize {
    (input - 1) * stride + kernel
}

// Reorders weight (O, C, k, k) into a row-major (O·k·k) × C matrix.
fn weight_rows_by_offset<T: Real>(weight: &Tensor<T>) -> Vec<T> {
    let s = weight.shape();
    let kk = s.h * s.w;
    let mut out = vec![T::zero(); s.len()];
    for o in 0..s.n {
        for c in 0..s.c {
            for uv in 0..kk {
                out[(o * kk + uv) * s.c + c] = weight.data()[(o * s.c + c) * kk + uv];
            }
        }
    }
    out
}

fn weight_from_offset_rows<T: Real>(rows: &[T], s: Shape) -> Tensor<T> {
    let kk = s.h * s.w;
    let mut out = vec![T::zero(); s.len()];
    for o in 0..s.n {
        for c in 0..s.c {
            for uv in 0..kk {
                out[(o * s.c + c) * kk + uv] = rows[(o * kk + uv) * s.c + c];
            }
        }
    }
    Tensor::from_vec(s, out).expect("weight shape")
}

fn transposed_window(x: Shape, out_channels: usize, k: usize, stride: usize) -> Window {
    Window {
        channels: out_channels,
        height: transposed_output_size(x.h, k, stride),
        width: transposed_output_size(x.w, k, stride),
        kernel: k,
        stride,
        pad: 0,
        out_h: x.h,
        out_w: x.w,
    }
}

/// Transposed convolution, the adjoint of a stride-`stride` valid
/// convolution:
///
/// `out[n,o,p,q] = bias[o] + Σ_{c,i,j} x[n,c,i,j] · w[o,c,p-stride·i,q-stride·j]`
///
/// With the decoder default (k = 2, stride = 2) the output is `(2h, 2w)`.
pub fn transposed_conv2d<T: Real>(x: &Tensor<T>, filter: &ConvFilter<T>, stride: usize) -> Result<Tensor<T>> {
    transposed_conv2d_raw(x, &filter.weight, &filter.bias, stride)
}

fn transposed_conv2d_raw<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), weight.shape());
    check_conv_input(xs, ws, bias.shape(), "transposed_conv2d")?;
    if stride == 0 {
        return Err(Error::contract("transposed_conv2d: stride 0"));
    }
    let win = transposed_window(xs, ws.n, ws.h, stride);
    let out_shape = Shape::new(xs.n, ws.n, win.height, win.width)?;
    let rows = weight_rows_by_offset(weight);
    let items = per_item(xs.n, |n| {
        let mut col = vec![T::zero(); win.rows() * win.cols()];
        T::gemm(win.rows(), xs.c, win.cols(), &rows, false, x.item(n), false, T::zero(), &mut col);
        let mut out = vec![T::zero(); out_shape.item()];
        win.col2im(&col, &mut out);
        add_bias(&mut out, bias.data(), out_shape.plane());
        out
    });
    Tensor::from_vec(out_shape, items.concat())
}

/// Valid stride-`stride` convolution mapping a transposed-convolution output
/// back to its input grid, without bias:
///
/// `out[n,c,i,j] = Σ_{o,u,v} w[o,c,u,v] · y[n,o,stride·i+u,stride·j+v]`
///
/// `input_h × input_w` is the grid of the transposed convolution's input.
pub fn strided_conv2d<T: Real>(
    y: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    input_h: usize,
    input_w: usize,
) -> Result<Tensor<T>> {
    let (ys, ws) = (y.shape(), weight.shape());
    if ys.c != ws.n {
        return Err(Error::shape(format!("strided_conv2d: {} channels vs weight {ws}", ys.c)));
    }
    let xs = Shape::new(ys.n, ws.c, input_h, input_w)?;
    let win = transposed_window(xs, ws.n, ws.h, stride);
    if (win.height, win.width) != (ys.h, ys.w) {
        return Err(Error::shape(format!("strided_conv2d: {ys} is not the transposed output of {input_h}x{input_w}")));
    }
    Ok(strided_conv2d_unchecked(y, weight, xs, win))
}

fn strided_conv2d_unchecked<T: Real>(y: &Tensor<T>, weight: &Tensor<T>, xs: Shape, win: Window) -> Tensor<T> {
    let rows = weight_rows_by_offset(weight);
    let items = per_item(xs.n, |n| {
        let col = win.im2col(y.item(n));
        let mut dx = vec![T::zero(); xs.item()];
        T::gemm(xs.c, win.rows(), win.cols(), &rows, true, &col, false, T::zero(), &mut dx);
        dx
    });
    Tensor::from_vec(xs, items.concat()).expect("strided_conv2d shape")
}

/// Gradients of [`transposed_conv2d`] with respect to input, weight and bias.
pub fn transposed_conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (xs, ws) = (x.shape(), weight.shape());
    let win = transposed_window(xs, ws.n, ws.h, stride);
    let dx = strided_conv2d_unchecked(grad_out, weight, xs, win);
    let parts = per_item(xs.n, |n| {
        let col = win.im2col(grad_out.item(n));
        let mut drows = vec![T::zero(); ws.len()];
        T::gemm(win.rows(), win.cols(), xs.c, &col, false, x.item(n), true, T::zero(), &mut drows);
        drows
    });
    let dw = weight_from_offset_rows(&sum_in_order(parts, ws.len()), ws);
    (dx, dw, bias_grad(grad_out))
}

impl<T: Real> Tape<T> {
    /// Differentiable [`conv2d_same`] with weight `(o, c, k, k)` and bias
    /// `(1, o, 1, 1)`.
    pub fn conv2d_same(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = conv2d_same_raw(self.value(x), self.value(weight), self.value(bias))?;
        Ok(self.custom("conv2d_same", out, &[x, weight, bias], |g, inputs| {
            let (dx, dw, db) = conv2d_same_backward(g, inputs[0], inputs[1]);
            vec![Some(dx), Some(dw), Some(db)]
        }))
    }

    pub fn transposed_conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let out = transposed_conv2d_raw(self.value(x), self.value(weight), self.value(bias), stride)?;
        Ok(self.custom("transposed_conv2d", out, &[x, weight, bias], move |g, inputs| {
            let (dx, dw, db) = transposed_conv2d_backward(g, inputs[0], inputs[1], stride);
            vec![Some(dx), Some(dw), Some(db)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape::new(n, c, h, w).unwrap()
    }

    #[test]
    fn ones_on_ones_hand_sums() {
        let x = Tensor::<f64>::ones(shape(1, 1, 3, 3));
        let f = ConvFilter::new(Tensor::ones(shape(1, 1, 3, 3)), Tensor::zeros(shape(1, 1, 1, 1))).unwrap();
        let y = conv2d_same(&x, &f).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = Tensor::<f64>::from_fn(shape(2, 1, 4, 5), |n, _, h, w| (n * 20 + h * 5 + w) as f64);
        let mut w = Tensor::zeros(shape(1, 1, 3, 3));
        *w.at_mut(0, 0, 1, 1) = 1.0;
        let f = ConvFilter::new(w, Tensor::zeros(shape(1, 1, 1, 1))).unwrap();
        assert_eq!(conv2d_same(&x, &f).unwrap(), x);
    }

    #[test]
    fn channel_mismatch_and_even_kernel_rejected() {
        let x = Tensor::<f64>::ones(shape(1, 2, 4, 4));
        let f = ConvFilter::<f64>::zeros(1, 3, 3).unwrap();
        assert!(matches!(conv2d_same(&x, &f), Err(Error::Shape(_))));
        let f = ConvFilter::<f64>::zeros(1, 2, 2).unwrap();
        assert!(matches!(conv2d_same(&x, &f), Err(Error::Shape(_))));
        assert!(transposed_conv2d(&x, &ConvFilter::zeros(1, 3, 2).unwrap(), 2).is_err());
    }

    #[test]
    fn transposed_single_pixel_fills_block() {
        let x = Tensor::<f64>::full(shape(1, 1, 1, 1), 2.5);
        let f = ConvFilter::new(Tensor::ones(shape(1, 1, 2, 2)), Tensor::zeros(shape(1, 1, 1, 1))).unwrap();
        let y = transposed_conv2d(&x, &f, 2).unwrap();
        assert_eq!(y.shape(), shape(1, 1, 2, 2));
        assert_eq!(y.data(), &[2.5; 4]);
    }

    #[test]
    fn transposed_doubles_spatial_extent() {
        let x = Tensor::<f32>::ones(shape(2, 3, 4, 5));
        let f = ConvFilter::zeros(6, 3, 2).unwrap();
        assert_eq!(transposed_conv2d(&x, &f, 2).unwrap().shape(), shape(2, 6, 8, 10));
    }

    #[test]
    fn transposed_is_linear_in_input_apart_from_bias() {
        let x = Tensor::<f64>::from_fn(shape(1, 2, 3, 3), |_, c, h, w| (c + h * 3 + w) as f64 * 0.1 - 0.4);
        let w = Tensor::from_fn(shape(3, 2, 2, 2), |o, c, u, v| ((o * 7 + c * 3 + u * 2 + v) % 5) as f64 - 2.0);
        let bias = Tensor::from_vec(shape(1, 3, 1, 1), vec![0.5, -1.0, 2.0]).unwrap();
        let with_bias = ConvFilter::new(w.clone(), bias).unwrap();
        let no_bias = ConvFilter::new(w, Tensor::zeros(shape(1, 3, 1, 1))).unwrap();
        let alpha = 3.0;
        let lhs = transposed_conv2d(&x.scale(alpha), &no_bias, 2).unwrap();
        let rhs = transposed_conv2d(&x, &no_bias, 2).unwrap().scale(alpha);
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        let diff =
            transposed_conv2d(&x, &with_bias, 2).unwrap().sub(&transposed_conv2d(&x, &no_bias, 2).unwrap()).unwrap();
        assert!((diff.at(0, 1, 5, 5) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_valid_range_handles_padding_and_stride() {
        let win = Window { channels: 1, height: 5, width: 5, kernel: 3, stride: 1, pad: 1, out_h: 5, out_w: 5 };
        assert_eq!(win.valid_range(0, 5, 5), (1, 5));
        assert_eq!(win.valid_range(1, 5, 5), (0, 5));
        assert_eq!(win.valid_range(2, 5, 5), (0, 4));
        let win = Window { stride: 2, pad: 0, kernel: 2, height: 6, width: 6, out_h: 3, out_w: 3, channels: 1 };
        assert_eq!(win.valid_range(1, 6, 3), (0, 3));
    }
}
