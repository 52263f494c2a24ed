//! Strided 2-D convolution kernels (NCHW activations, OIHW weights) built on
//! im2col/col2im and gemm. The transposed convolution is the exact adjoint of
//! the forward convolution with the same geometry.

use crate::element::Element;
use crate::error::{contract, Result};
use crate::gemm::{gemm, MatRef};

/// Geometry of a convolution mapping an `image` of `in_hw` to a `map` of
/// `out_hw`. A transposed convolution with the same geometry maps the other way.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub image_channels: usize,
    pub map_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: usize,
    pub image_hw: (usize, usize),
    pub map_hw: (usize, usize),
}

impl ConvGeometry {
    /// Geometry of a forward convolution over `image_hw`.
    pub fn forward(
        image_channels: usize,
        map_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
        image_hw: (usize, usize),
    ) -> Result<Self> {
        if stride == 0 {
            return Err(contract("conv2d", "stride must be positive"));
        }
        let (h, w) = image_hw;
        if kernel.0 > h + 2 * pad || kernel.1 > w + 2 * pad {
            return Err(contract(
                "conv2d",
                format!("kernel {kernel:?} exceeds padded input {image_hw:?} (pad {pad})"),
            ));
        }
        let map_hw = (
            (h + 2 * pad - kernel.0) / stride + 1,
            (w + 2 * pad - kernel.1) / stride + 1,
        );
        Ok(Self {
            image_channels,
            map_channels,
            kernel,
            stride,
            pad,
            image_hw,
            map_hw,
        })
    }

    /// "Same" padding for a stride-`s` convolution: total padding `max(k - s, 0)`,
    /// split evenly. Odd totals are rejected since padding is symmetric here.
    pub fn same_padding(kernel: usize, stride: usize) -> Result<usize> {
        let total = kernel.saturating_sub(stride);
        if total % 2 != 0 {
            return Err(contract(
                "conv2d",
                format!("kernel {kernel} with stride {stride} needs asymmetric padding"),
            ));
        }
        Ok(total / 2)
    }

    pub fn patch_len(&self) -> usize {
        self.image_channels * self.kernel.0 * self.kernel.1
    }

    pub fn map_len(&self) -> usize {
        self.map_hw.0 * self.map_hw.1
    }

    pub fn image_len(&self) -> usize {
        self.image_channels * self.image_hw.0 * self.image_hw.1
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.map_channels,
            self.image_channels,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    /// Unrolls one image `[C, H, W]` into `[C*kh*kw, Ho*Wo]` columns.
    pub(crate) fn im2col<T: Element>(&self, image: &[T], cols: &mut [T]) {
        let (h, w) = self.image_hw;
        let (ho, wo) = self.map_hw;
        let (kh, kw) = self.kernel;
        let pad = self.pad as isize;
        let s = self.stride as isize;
        let mut row = 0;
        for c in 0..self.image_channels {
            let plane = &image[c * h * w..(c + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    for oi in 0..ho {
                        let y = oi as isize * s + ki as isize - pad;
                        for oj in 0..wo {
                            let x = oj as isize * s + kj as isize - pad;
                            dst[oi * wo + oj] = if y >= 0 && y < h as isize && x >= 0 && x < w as isize {
                                plane[y as usize * w + x as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back, accumulating.
    pub(crate) fn col2im<T: Element>(&self, cols: &[T], image: &mut [T]) {
        let (h, w) = self.image_hw;
        let (ho, wo) = self.map_hw;
        let (kh, kw) = self.kernel;
        let pad = self.pad as isize;
        let s = self.stride as isize;
        let mut row = 0;
        for c in 0..self.image_channels {
            let plane = &mut image[c * h * w..(c + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                    for oi in 0..ho {
                        let y = oi as isize * s + ki as isize - pad;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for oj in 0..wo {
                            let x = oj as isize * s + kj as isize - pad;
                            if x >= 0 && x < w as isize {
                                plane[y as usize * w + x as usize] += src[oi * wo + oj];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Convolution: `images [N, C, H, W]` -> `maps [N, O, Ho, Wo]`.
    pub(crate) fn conv<T: Element>(&self, images: &[T], weight: &[T], batch: usize) -> Vec<T> {
        let mut out = vec![T::zero(); batch * self.map_channels * self.map_len()];
        let mut cols = vec![T::zero(); self.patch_len() * self.map_len()];
        let wmat = MatRef::new(weight, self.map_channels, self.patch_len());
        for n in 0..batch {
            self.im2col(&images[n * self.image_len()..(n + 1) * self.image_len()], &mut cols);
            let dst = &mut out[n * self.map_channels * self.map_len()..(n + 1) * self.map_channels * self.map_len()];
            gemm(wmat, MatRef::new(&cols, self.patch_len(), self.map_len()), dst, T::one(), T::zero());
        }
        out
    }

    /// Transposed convolution: `maps [N, O, Ho, Wo]` -> `images [N, C, H, W]`.
    pub(crate) fn conv_transpose<T: Element>(&self, maps: &[T], weight: &[T], batch: usize) -> Vec<T> {
        let mut out = vec![T::zero(); batch * self.image_len()];
        let mut cols = vec![T::zero(); self.patch_len() * self.map_len()];
        let wmat = MatRef::new(weight, self.map_channels, self.patch_len());
        let map_block = self.map_channels * self.map_len();
        for n in 0..batch {
            let m = MatRef::new(&maps[n * map_block..(n + 1) * map_block], self.map_channels, self.map_len());
            gemm(wmat.t(), m, &mut cols, T::one(), T::zero());
            self.col2im(&cols, &mut out[n * self.image_len()..(n + 1) * self.image_len()]);
        }
        out
    }

    /// Gradient of `conv` w.r.t. images (which is `conv_transpose` of the
    /// upstream gradient) and accumulation into the weight gradient.
    pub(crate) fn conv_backward<T: Element>(
        &self,
        images: &[T],
        weight: &[T],
        dmaps: &[T],
        batch: usize,
        dimages: Option<&mut [T]>,
        dweight: Option<&mut [T]>,
    ) {
        let map_block = self.map_channels * self.map_len();
        if let Some(dw) = dweight {
            let mut cols = vec![T::zero(); self.patch_len() * self.map_len()];
            for n in 0..batch {
                self.im2col(&images[n * self.image_len()..(n + 1) * self.image_len()], &mut cols);
                let dm = MatRef::new(&dmaps[n * map_block..(n + 1) * map_block], self.map_channels, self.map_len());
                gemm(dm, MatRef::new(&cols, self.patch_len(), self.map_len()).t(), dw, T::one(), T::one());
            }
        }
        if let Some(dx) = dimages {
            let back = self.conv_transpose(dmaps, weight, batch);
            for (d, b) in dx.iter_mut().zip(back) {
                *d += b;
            }
        }
    }

    /// Gradient of `conv_transpose` w.r.t. maps (a forward `conv` of the
    /// upstream gradient) and accumulation into the weight gradient.
    pub(crate) fn conv_transpose_backward<T: Element>(
        &self,
        maps: &[T],
        weight: &[T],
        dimages: &[T],
        batch: usize,
        dmaps: Option<&mut [T]>,
        dweight: Option<&mut [T]>,
    ) {
        let map_block = self.map_channels * self.map_len();
        if let Some(dw) = dweight {
            let mut cols = vec![T::zero(); self.patch_len() * self.map_len()];
            for n in 0..batch {
                self.im2col(&dimages[n * self.image_len()..(n + 1) * self.image_len()], &mut cols);
                let m = MatRef::new(&maps[n * map_block..(n + 1) * map_block], self.map_channels, self.map_len());
                gemm(m, MatRef::new(&cols, self.patch_len(), self.map_len()).t(), dw, T::one(), T::one());
            }
        }
        if let Some(dm) = dmaps {
            let fwd = self.conv(dimages, weight, batch);
            for (d, f) in dm.iter_mut().zip(fwd) {
                *d += f;
            }
        }
    }
}
