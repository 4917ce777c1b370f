//! Keys bicubic resampling with antialiasing on minification.
//!
//! The recipe is fixed so results are reproducible bit-for-bit:
//!
//! * kernel: Keys cubic convolution with `a = -0.5`;
//! * coordinate map: `x_src = (x_dst + 0.5) / scale - 0.5`;
//! * when `scale < 1` the kernel is stretched by `1 / scale` and the taps
//!   renormalized to sum to one;
//! * out-of-range source indices are clamped to the border;
//! * the horizontal pass runs before the vertical pass.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Scalar, Tensor};

pub const KEYS_A: f64 = -0.5;

/// The Keys cubic convolution kernel.
pub fn keys_cubic(x: f64) -> f64 {
    let a = KEYS_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Per-output-sample source taps along one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisTaps {
    pub in_len: usize,
    pub out_len: usize,
    /// `(source index, weight)` pairs for each output index.
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl AxisTaps {
    pub fn new(in_len: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Parameter(format!("scale must be positive, got {scale}")));
        }
        let out_len = (in_len as f64 * scale).round() as usize;
        if out_len == 0 || in_len == 0 {
            return Err(Error::Size(format!(
                "resampling {in_len} samples by {scale} leaves nothing"
            )));
        }
        let stretch = if scale < 1.0 { 1.0 / scale } else { 1.0 };
        let support = 2.0 * stretch;
        let last = in_len as isize - 1;
        let taps = (0..out_len)
            .map(|o| {
                let center = (o as f64 + 0.5) / scale - 0.5;
                let lo = (center - support).floor() as isize;
                let hi = (center + support).ceil() as isize;
                let mut raw: Vec<(usize, f64)> = (lo..=hi)
                    .filter(|&j| (center - j as f64).abs() < support)
                    .map(|j| {
                        (
                            j.clamp(0, last) as usize,
                            keys_cubic((center - j as f64) / stretch),
                        )
                    })
                    .collect();
                let total: f64 = raw.iter().map(|t| t.1).sum();
                raw.iter_mut().for_each(|t| t.1 /= total);
                raw
            })
            .collect();
        Ok(AxisTaps {
            in_len,
            out_len,
            taps,
        })
    }
}

/// A separable bicubic resampler for a fixed input size and scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Bicubic {
    rows: AxisTaps,
    cols: AxisTaps,
}

impl Bicubic {
    pub fn new(in_h: usize, in_w: usize, scale: f64) -> Result<Self> {
        Ok(Bicubic {
            rows: AxisTaps::new(in_h, scale)?,
            cols: AxisTaps::new(in_w, scale)?,
        })
    }

    pub fn output_size(&self) -> (usize, usize) {
        (self.rows.out_len, self.cols.out_len)
    }

    pub fn input_size(&self) -> (usize, usize) {
        (self.rows.in_len, self.cols.in_len)
    }

    /// Applies the resampler without clamping.
    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!((x.height, x.width), self.input_size(), "bicubic input size");
        let (ih, iw) = self.input_size();
        let (oh, ow) = self.output_size();
        let row_w = to_weights::<T>(&self.rows);
        let col_w = to_weights::<T>(&self.cols);
        let mut out = Tensor::zeros(x.channels, oh, ow);
        let mut tmp = vec![T::zero(); ih * ow];
        for c in 0..x.channels {
            let src = x.plane(c);
            for y in 0..ih {
                let srow = &src[y * iw..(y + 1) * iw];
                for (ox, taps) in col_w.iter().enumerate() {
                    let mut acc = T::zero();
                    for &(j, w) in taps {
                        acc += w * srow[j];
                    }
                    tmp[y * ow + ox] = acc;
                }
            }
            let dst = out.plane_mut(c);
            for (oy, taps) in row_w.iter().enumerate() {
                let drow = &mut dst[oy * ow..(oy + 1) * ow];
                for &(j, w) in taps {
                    let trow = &tmp[j * ow..(j + 1) * ow];
                    for (d, &t) in drow.iter_mut().zip(trow) {
                        *d += w * t;
                    }
                }
            }
        }
        out
    }

    /// Transpose of [`Bicubic::apply`], used for backpropagation.
    pub fn adjoint<T: Scalar>(&self, g: &Tensor<T>) -> Tensor<T> {
        assert_eq!((g.height, g.width), self.output_size(), "bicubic grad size");
        let (ih, iw) = self.input_size();
        let (_, ow) = self.output_size();
        let row_w = to_weights::<T>(&self.rows);
        let col_w = to_weights::<T>(&self.cols);
        let mut out = Tensor::zeros(g.channels, ih, iw);
        let mut tmp = vec![T::zero(); ih * ow];
        for c in 0..g.channels {
            tmp.iter_mut().for_each(|v| *v = T::zero());
            let src = g.plane(c);
            for (oy, taps) in row_w.iter().enumerate() {
                let grow = &src[oy * ow..(oy + 1) * ow];
                for &(j, w) in taps {
                    let trow = &mut tmp[j * ow..(j + 1) * ow];
                    for (t, &gv) in trow.iter_mut().zip(grow) {
                        *t += w * gv;
                    }
                }
            }
            let dst = out.plane_mut(c);
            for y in 0..ih {
                for (ox, taps) in col_w.iter().enumerate() {
                    let t = tmp[y * ow + ox];
                    for &(j, w) in taps {
                        dst[y * iw + j] += w * t;
                    }
                }
            }
        }
        out
    }
}

fn to_weights<T: Scalar>(axis: &AxisTaps) -> Vec<Vec<(usize, T)>> {
    axis.taps
        .iter()
        .map(|t| t.iter().map(|&(j, w)| (j, T::lit(w))).collect())
        .collect()
}

/// Resamples an image by `scale` and clamps the result to `[0, 1]`.
pub fn bicubic_resample(img: &Image, scale: f64) -> Result<Image> {
    let op = Bicubic::new(img.height(), img.width(), scale)?;
    Image::from_tensor(&op.apply(&img.to_tensor::<f32>()))
}
