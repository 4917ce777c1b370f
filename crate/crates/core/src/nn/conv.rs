use super::{Scalar, Tensor};

/// Stride-1 square convolution with symmetric zero padding.
///
/// Weights are laid out `[out_c][in_c][k][k]` and applied as a
/// cross-correlation, matching the usual deep-learning convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvGeometry {
            in_channels,
            out_channels,
            kernel,
            padding: kernel / 2,
        }
    }

    pub fn valid(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvGeometry {
            in_channels,
            out_channels,
            kernel,
            padding: 0,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let grow = 2 * self.padding + 1;
        assert!(
            h + grow > self.kernel && w + grow > self.kernel,
            "{h}x{w} input too small for a {}x{} kernel",
            self.kernel,
            self.kernel
        );
        (h + grow - self.kernel, w + grow - self.kernel)
    }
}

/// Saved forward state needed by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    geometry: ConvGeometry,
    columns: Vec<T>,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

fn im2col<T: Scalar>(x: &Tensor<T>, g: &ConvGeometry, out_h: usize, out_w: usize) -> Vec<T> {
    let k = g.kernel;
    let npix = out_h * out_w;
    let mut cols = vec![T::zero(); g.patch_len() * npix];
    for ci in 0..g.in_channels {
        let plane = x.plane(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * npix..(row + 1) * npix];
                for oy in 0..out_h {
                    let iy = oy as isize + ky as isize - g.padding as isize;
                    if iy < 0 || iy >= x.height as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * x.width..(iy as usize + 1) * x.width];
                    let dst_row = &mut dst[oy * out_w..(oy + 1) * out_w];
                    // valid ox range: 0 <= ox + kx - pad < width
                    let lo = g.padding.saturating_sub(kx);
                    let hi = (x.width + g.padding).saturating_sub(kx).min(out_w);
                    if lo < hi {
                        let src_lo = lo + kx - g.padding;
                        dst_row[lo..hi].copy_from_slice(&src_row[src_lo..src_lo + (hi - lo)]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, c: &ConvCache<T>) -> Tensor<T> {
    let k = g.kernel;
    let npix = c.out_h * c.out_w;
    let mut out = Tensor::zeros(g.in_channels, c.in_h, c.in_w);
    for ci in 0..g.in_channels {
        let plane = out.plane_mut(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * npix..(row + 1) * npix];
                for oy in 0..c.out_h {
                    let iy = oy as isize + ky as isize - g.padding as isize;
                    if iy < 0 || iy >= c.in_h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * c.in_w..(iy as usize + 1) * c.in_w];
                    let src_row = &src[oy * c.out_w..(oy + 1) * c.out_w];
                    let lo = g.padding.saturating_sub(kx);
                    let hi = (c.in_w + g.padding).saturating_sub(kx).min(c.out_w);
                    for ox in lo..hi {
                        dst_row[ox + kx - g.padding] += src_row[ox];
                    }
                }
            }
        }
    }
    out
}

/// Forward convolution. Returns the output and the cache for the backward pass.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    bias: Option<&[T]>,
    g: ConvGeometry,
) -> (Tensor<T>, ConvCache<T>) {
    assert_eq!(x.channels, g.in_channels, "conv input channel mismatch");
    assert_eq!(weight.len(), g.weight_len());
    let (out_h, out_w) = g.output_size(x.height, x.width);
    let npix = out_h * out_w;
    let columns = im2col(x, &g, out_h, out_w);
    let mut out = Tensor::zeros(g.out_channels, out_h, out_w);
    if let Some(b) = bias {
        for (co, &bv) in b.iter().enumerate() {
            out.plane_mut(co).iter_mut().for_each(|v| *v = bv);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    T::gemm(
        g.out_channels,
        g.patch_len(),
        npix,
        weight,
        false,
        &columns,
        false,
        beta,
        &mut out.data,
    );
    let cache = ConvCache {
        geometry: g,
        columns,
        in_h: x.height,
        in_w: x.width,
        out_h,
        out_w,
    };
    (out, cache)
}

/// Backward convolution.
///
/// Accumulates into `weight_grad` / `bias_grad` when given and returns the
/// gradient with respect to the input when `want_input` is set.
pub fn conv2d_backward<T: Scalar>(
    cache: &ConvCache<T>,
    weight: &[T],
    grad_out: &Tensor<T>,
    weight_grad: Option<&mut [T]>,
    bias_grad: Option<&mut [T]>,
    want_input: bool,
) -> Option<Tensor<T>> {
    let g = &cache.geometry;
    assert_eq!(
        (grad_out.channels, grad_out.height, grad_out.width),
        (g.out_channels, cache.out_h, cache.out_w)
    );
    let npix = cache.out_h * cache.out_w;
    if let Some(gw) = weight_grad {
        T::gemm(
            g.out_channels,
            npix,
            g.patch_len(),
            &grad_out.data,
            false,
            &cache.columns,
            true,
            T::one(),
            gw,
        );
    }
    if let Some(gb) = bias_grad {
        for (co, b) in gb.iter_mut().enumerate() {
            *b += grad_out.plane(co).iter().copied().sum::<T>();
        }
    }
    if !want_input {
        return None;
    }
    let mut gcols = vec![T::zero(); g.patch_len() * npix];
    T::gemm(
        g.patch_len(),
        g.out_channels,
        npix,
        weight,
        true,
        &grad_out.data,
        false,
        T::zero(),
        &mut gcols,
    );
    Some(col2im(&gcols, g, cache))
}
