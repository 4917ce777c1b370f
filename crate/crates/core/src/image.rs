//! Planar floating-point rasters and PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// A planar H×W×C raster with samples in `[0, 1]`.
///
/// Sample `(c, y, x)` lives at `data[c * H * W + y * W + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image, rejecting empty extents, unsupported channel counts
    /// and samples that are not finite or fall outside `[0, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_extent(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{} samples for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Parameter(format!("sample {bad} outside [0, 1]")));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image, clamping every sample into `[0, 1]` (NaN maps to 0).
    pub fn from_vec_clamped(
        height: usize,
        width: usize,
        channels: usize,
        mut data: Vec<f32>,
    ) -> Result<Self> {
        check_extent(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{} samples for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        data.iter_mut().for_each(|v| *v = clamp_unit(*v));
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Image::from_vec_clamped(height, width, channels, vec![value; height * width * channels])
    }

    /// Evaluates `f(c, y, x)` at every sample; results are clamped.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image::from_vec_clamped(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Copies out the `h×w` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Image> {
        if h == 0 || w == 0 || row + h > self.height || col + w > self.width {
            return Err(Error::Size(format!(
                "crop {h}x{w} at ({row}, {col}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * self.channels);
        for c in 0..self.channels {
            for y in row..row + h {
                let start = (c * self.height + y) * self.width + col;
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Ok(Image {
            height: h,
            width: w,
            channels: self.channels,
            data,
        })
    }

    /// Center crop so both extents become multiples of `multiple`.
    pub fn crop_to_multiple(&self, multiple: usize) -> Result<Image> {
        if multiple == 0 {
            return Err(Error::Parameter("crop multiple must be positive".into()));
        }
        let h = self.height - self.height % multiple;
        let w = self.width - self.width % multiple;
        if h == 0 || w == 0 {
            return Err(Error::Size(format!(
                "{}x{} image cannot be cropped to a multiple of {multiple}",
                self.height, self.width
            )));
        }
        self.crop((self.height - h) / 2, (self.width - w) / 2, h, w)
    }

    /// Applies element `code` (0..8) of the dihedral group of the square.
    ///
    /// Bit 2 transposes, then bit 0 flips left-right, then bit 1 flips
    /// top-bottom.
    pub fn dihedral(&self, code: u8) -> Image {
        assert!(code < 8, "dihedral code {code} out of range");
        let transpose = code & 4 != 0;
        let (oh, ow) = if transpose {
            (self.width, self.height)
        } else {
            (self.height, self.width)
        };
        let mut data = vec![0.0; self.data.len()];
        for c in 0..self.channels {
            for y in 0..oh {
                for x in 0..ow {
                    let ty = if code & 2 != 0 { oh - 1 - y } else { y };
                    let tx = if code & 1 != 0 { ow - 1 - x } else { x };
                    let (sy, sx) = if transpose { (tx, ty) } else { (ty, tx) };
                    data[(c * oh + y) * ow + x] = self.get(c, sy, sx);
                }
            }
        }
        Image {
            height: oh,
            width: ow,
            channels: self.channels,
            data,
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| T::of_f32(v)).collect(),
        )
    }

    /// Converts a tensor back into an image, clamping to `[0, 1]`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Image> {
        Image::from_vec_clamped(
            t.height,
            t.width,
            t.channels,
            t.data.iter().map(|v| v.as_f32()).collect(),
        )
    }

    /// Reads an 8-bit PNG (grey or RGB; alpha is dropped).
    pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::NotFound {
                what: "image",
                path: path.to_path_buf(),
            });
        }
        let img = image::open(path).map_err(|source| Error::Codec {
            path: path.to_path_buf(),
            source,
        })?;
        let (channels, raw, w, h) = match img.color().channel_count() {
            1 | 2 => {
                let g = img.to_luma8();
                let (w, h) = g.dimensions();
                (1, g.into_raw(), w, h)
            }
            _ => {
                let rgb = img.to_rgb8();
                let (w, h) = rgb.dimensions();
                (3, rgb.into_raw(), w, h)
            }
        };
        let (h, w) = (h as usize, w as usize);
        let mut data = vec![0.0f32; h * w * channels];
        for (i, px) in raw.chunks_exact(channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                data[c * h * w + i] = v as f32 / 255.0;
            }
        }
        Image::new(h, w, channels, data)
    }

    /// Writes an 8-bit PNG using `round(v * 255)`.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let n = self.height * self.width;
        let mut raw = vec![0u8; n * self.channels];
        for c in 0..self.channels {
            for i in 0..n {
                raw[i * self.channels + c] = to_u8(self.data[c * n + i]);
            }
        }
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &raw,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|source| match source {
            image::ImageError::IoError(e) => Error::io(path, e),
            source => Error::Codec {
                path: path.to_path_buf(),
                source,
            },
        })
    }

    /// Snaps every sample to the nearest 8-bit level, as a PNG round trip would.
    pub fn quantized(&self) -> Image {
        Image {
            data: self.data.iter().map(|&v| to_u8(v) as f32 / 255.0).collect(),
            ..self.clone()
        }
    }
}

/// Inverse of [`Image::dihedral`]: `img.dihedral(c).dihedral(dihedral_inverse(c)) == img`.
pub fn dihedral_inverse(code: u8) -> u8 {
    if code & 4 == 0 {
        code
    } else {
        // transpose conjugates a left-right flip into a top-bottom flip
        4 | ((code & 1) << 1) | ((code & 2) >> 1)
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
fn to_u8(v: f32) -> u8 {
    (clamp_unit(v) * 255.0).round() as u8
}

fn check_extent(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Size(format!("empty image {height}x{width}")));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::Channels {
            expected: 3,
            got: channels,
        });
    }
    Ok(())
}
