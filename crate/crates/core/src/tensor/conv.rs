//! im2col convolution kernels shared by the tape's forward and backward passes.

use super::Scalar;
use crate::error::{Error, Result};
use crate::exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

pub fn conv2d_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("conv2d stride must be at least 1"));
    }
    if kernel == 0 || kernel > size + 2 * padding {
        return Err(Error::shape(format!(
            "kernel {kernel} does not fit input {size} with padding {padding}"
        )));
    }
    Ok((size + 2 * padding - kernel) / stride + 1)
}

impl Conv2dSpec {
    pub fn from_shapes(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects rank-4 input and kernel, got {input:?} and {kernel:?}"
            )));
        }
        if kernel[1] != input[1] || kernel[2] != kernel[3] {
            return Err(Error::shape(format!(
                "conv2d kernel {kernel:?} incompatible with input {input:?}"
            )));
        }
        let spec = Self {
            batch: input[0],
            in_channels: input[1],
            height: input[2],
            width: input[3],
            out_channels: kernel[0],
            kernel: kernel[2],
            stride,
            padding,
        };
        spec.out_hw()?;
        Ok(spec)
    }

    pub fn out_hw(&self) -> Result<(usize, usize)> {
        Ok((
            conv2d_output_size(self.height, self.kernel, self.stride, self.padding)?,
            conv2d_output_size(self.width, self.kernel, self.stride, self.padding)?,
        ))
    }

    fn dims(&self) -> (usize, usize, usize) {
        let (oh, ow) = self.out_hw().expect("validated at construction");
        (oh, ow, self.in_channels * self.kernel * self.kernel)
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let (oh, ow, _) = self.dims();
        vec![self.batch, self.out_channels, oh, ow]
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let (oh, ow, _) = self.dims();
        let k = self.kernel;
        let p = oh * ow;
        for c in 0..self.in_channels {
            let plane = &x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut cols[((c * k + ki) * k + kj) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        let out_row = &mut row[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= self.height as isize {
                            out_row.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..][..self.width];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            *v = if ix < 0 || ix >= self.width as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let (oh, ow, _) = self.dims();
        let k = self.kernel;
        let p = oh * ow;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &cols[((c * k + ki) * k + kj) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.width..][..self.width];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.width as isize {
                                dst[ix as usize] += row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Scalar>(&self, x: &[T], w: &[T]) -> Vec<T> {
        let (oh, ow, ckk) = self.dims();
        let p = oh * ow;
        let in_per = self.in_channels * self.height * self.width;
        let out_per = self.out_channels * p;
        let mut out = vec![T::zero(); self.batch * out_per];
        exec::for_each_chunk(&mut out, out_per, |n, y| {
            let xs = &x[n * in_per..(n + 1) * in_per];
            if self.is_pointwise() {
                T::gemm(self.out_channels, ckk, p, w, false, xs, false, y, false);
            } else {
                let mut cols = vec![T::zero(); ckk * p];
                self.im2col(xs, &mut cols);
                T::gemm(self.out_channels, ckk, p, w, false, &cols, false, y, false);
            }
        });
        out
    }

    /// Gradient with respect to the input.
    pub fn backward_input<T: Scalar>(&self, w: &[T], dy: &[T]) -> Vec<T> {
        let (oh, ow, ckk) = self.dims();
        let p = oh * ow;
        let in_per = self.in_channels * self.height * self.width;
        let out_per = self.out_channels * p;
        let mut dx = vec![T::zero(); self.batch * in_per];
        exec::for_each_chunk(&mut dx, in_per, |n, dxs| {
            let dys = &dy[n * out_per..(n + 1) * out_per];
            if self.is_pointwise() {
                T::gemm(ckk, self.out_channels, p, w, true, dys, false, dxs, false);
            } else {
                let mut dcols = vec![T::zero(); ckk * p];
                T::gemm(ckk, self.out_channels, p, w, true, dys, false, &mut dcols, false);
                self.col2im(&dcols, dxs);
            }
        });
        dx
    }

    /// Gradient with respect to the kernel. Per-sample partials are summed in
    /// sample order so the result does not depend on the execution mode.
    pub fn backward_kernel<T: Scalar>(&self, x: &[T], dy: &[T]) -> Vec<T> {
        let (oh, ow, ckk) = self.dims();
        let p = oh * ow;
        let in_per = self.in_channels * self.height * self.width;
        let out_per = self.out_channels * p;
        let w_len = self.out_channels * ckk;
        let mut partials = vec![T::zero(); self.batch * w_len];
        exec::for_each_chunk(&mut partials, w_len, |n, dw| {
            let xs = &x[n * in_per..(n + 1) * in_per];
            let dys = &dy[n * out_per..(n + 1) * out_per];
            if self.is_pointwise() {
                T::gemm(self.out_channels, p, ckk, dys, false, xs, true, dw, false);
            } else {
                let mut cols = vec![T::zero(); ckk * p];
                self.im2col(xs, &mut cols);
                T::gemm(self.out_channels, p, ckk, dys, false, &cols, true, dw, false);
            }
        });
        let mut dw = vec![T::zero(); w_len];
        for part in partials.chunks(w_len) {
            for (a, b) in dw.iter_mut().zip(part) {
                *a += *b;
            }
        }
        dw
    }
}
