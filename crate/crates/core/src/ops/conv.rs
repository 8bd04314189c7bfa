use rand::Rng;

use super::{init, Layer, Mode};
use crate::error::{invalid, shape_err, Result};
use crate::linalg::{gemm_nn, transpose};
use crate::scalar::Scalar;
use crate::tensor::{Param, Tensor};

/// Stride-1 2-D convolution over `[N, C, H, W]` inputs with `[F, C, k, k]` kernels.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub padding: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Same-padded convolution with He-initialized kernels and zero bias.
    pub fn new<R: Rng + ?Sized>(in_channels: usize, filters: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        check_kernel(kernel)?;
        let fan_in = in_channels * kernel * kernel;
        let weight = init::he_normal(&[filters, in_channels, kernel, kernel], fan_in, rng);
        Self::from_params(weight, Tensor::zeros(&[filters]), (kernel - 1) / 2)
    }

    pub fn from_params(weight: Tensor<T>, bias: Tensor<T>, padding: usize) -> Result<Self> {
        if weight.rank() != 4 || weight.dim(2) != weight.dim(3) {
            return Err(shape_err!("conv kernels must be [F, C, k, k], got {:?}", weight.shape()));
        }
        check_kernel(weight.dim(2))?;
        if bias.shape() != [weight.dim(0)] {
            return Err(shape_err!("conv bias {:?} for {} filters", bias.shape(), weight.dim(0)));
        }
        Ok(Self { weight: Param::new(weight), bias: Param::new(bias), padding, input: None })
    }

    pub fn filters(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < k || wp < k {
            return Err(shape_err!("kernel {k} larger than padded input {hp}x{wp}"));
        }
        Ok((hp - k + 1, wp - k + 1))
    }

    fn geometry(&self, input: &Tensor<T>) -> Result<Geometry> {
        if input.rank() != 4 {
            return Err(shape_err!("conv2d expects [N, C, H, W], got {:?}", input.shape()));
        }
        if input.dim(1) != self.in_channels() {
            return Err(shape_err!("conv2d input has {} channels but kernels expect {}", input.dim(1), self.in_channels()));
        }
        let (h, w) = (input.dim(2), input.dim(3));
        let (oh, ow) = self.out_hw(h, w)?;
        Ok(Geometry { c: input.dim(1), h, w, k: self.kernel(), pad: self.padding, oh, ow })
    }
}

impl<T: Scalar> Conv2d<T> {
    fn backward_impl(&mut self, grad_out: &Tensor<T>, input_grad: bool) -> Result<Option<Tensor<T>>> {
        let input = self.input.as_ref().ok_or_else(|| shape_err!("conv2d backward before forward"))?;
        let g = self.geometry(input)?;
        let n = input.dim(0);
        let f = self.filters();
        if grad_out.shape() != [n, f, g.oh, g.ow] {
            return Err(shape_err!("conv2d grad_out {:?}", grad_out.shape()));
        }
        let mut grad_in = input_grad.then(|| Tensor::zeros(input.shape()));
        let mut cols_t = vec![T::zero(); g.rows() * g.cols()];
        let mut dcols = vec![T::zero(); g.rows() * g.cols()];
        let w_t = transpose(f, g.rows(), self.weight.value.data());
        for i in 0..n {
            let dout = grad_out.row(i);
            g.im2col_t(input.row(i), &mut cols_t);
            gemm_nn(f, g.cols(), g.rows(), dout, &cols_t, self.weight.grad.data_mut(), true);
            for (fi, plane) in dout.chunks(g.cols()).enumerate() {
                let s: T = plane.iter().copied().sum();
                self.bias.grad.data_mut()[fi] += s;
            }
            if let Some(grad_in) = grad_in.as_mut() {
                gemm_nn(g.rows(), f, g.cols(), &w_t, dout, &mut dcols, false);
                g.col2im(&dcols, grad_in.row_mut(i));
            }
        }
        Ok(grad_in)
    }
}

fn check_kernel(k: usize) -> Result<()> {
    if k.is_multiple_of(2) {
        return Err(invalid!("kernel size must be odd, got {k}"));
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one `[C, H, W]` image into a `[C·k·k, OH·OW]` patch matrix.
    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let ncols = self.cols();
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for y in 0..self.oh {
                        let iy = (y + ki) as isize - self.pad as isize;
                        let line = &mut dst[y * self.ow..(y + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            line.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &image[(c * self.h + iy as usize) * self.w..][..self.w];
                        for (x, v) in line.iter_mut().enumerate() {
                            let ix = (x + kj) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Same patches as [`Geometry::im2col`], laid out `[OH·OW, C·k·k]`.
    fn im2col_t<T: Scalar>(&self, image: &[T], cols_t: &mut [T]) {
        let nrows = self.rows();
        cols_t.iter_mut().for_each(|v| *v = T::zero());
        for y in 0..self.oh {
            for x in 0..self.ow {
                let dst = &mut cols_t[(y * self.ow + x) * nrows..][..nrows];
                for c in 0..self.c {
                    for ki in 0..self.k {
                        let iy = (y + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &image[(c * self.h + iy as usize) * self.w..][..self.w];
                        let base = (c * self.k + ki) * self.k;
                        for kj in 0..self.k {
                            let ix = (x + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[base + kj] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatters patch gradients back onto the image.
    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let ncols = self.cols();
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for y in 0..self.oh {
                        let iy = (y + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut image[(c * self.h + iy as usize) * self.w..][..self.w];
                        for x in 0..self.ow {
                            let ix = (x + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[y * self.ow + x];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let g = self.geometry(input)?;
        let n = input.dim(0);
        let f = self.filters();
        let mut out = Tensor::zeros(&[n, f, g.oh, g.ow]);
        let mut cols = vec![T::zero(); g.rows() * g.cols()];
        let bias = self.bias.value.data();
        for i in 0..n {
            g.im2col(input.row(i), &mut cols);
            let o = out.row_mut(i);
            for (fi, plane) in o.chunks_mut(g.cols()).enumerate() {
                plane.iter_mut().for_each(|v| *v = bias[fi]);
            }
            gemm_nn(f, g.rows(), g.cols(), self.weight.value.data(), &cols, o, true);
        }
        self.input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.backward_impl(grad_out, true).map(|g| g.expect("input gradient requested"))
    }

    fn backward_params(&mut self, grad_out: &Tensor<T>) -> Result<()> {
        self.backward_impl(grad_out, false).map(|_| ())
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn name(&self) -> String {
        let k = self.kernel();
        format!("conv2d({}->{}, {k}x{k})", self.in_channels(), self.filters())
    }
}
