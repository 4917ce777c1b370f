//! Luminance conversion, PSNR and SSIM, following the usual SR evaluation
//! protocol (BT.601 studio-swing Y, border shave).
//!
//! | term | coefficient |
//! |------|-------------|
//! | R    | 0.257       |
//! | G    | 0.504       |
//! | B    | 0.098       |
//! | offset | 16/255    |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const LUMA_R: f64 = 0.257;
pub const LUMA_G: f64 = 0.504;
pub const LUMA_B: f64 = 0.098;
pub const LUMA_OFFSET: f64 = 16.0 / 255.0;

/// MSE below this is reported as [`PSNR_INFINITE`].
pub const MSE_FLOOR: f64 = 1e-12;
/// Sentinel for identical inputs; rendered as `inf`.
pub const PSNR_INFINITE: f64 = f64::INFINITY;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Which channels PSNR is measured on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PsnrMode {
    /// BT.601 luminance (the default).
    #[default]
    Luma,
    /// All color channels directly.
    Rgb,
}

pub fn to_luminance(img: &Image) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::Channels {
            expected: 3,
            got: img.channels(),
        });
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| {
            (LUMA_R * r as f64 + LUMA_G * g as f64 + LUMA_B * b as f64 + LUMA_OFFSET) as f32
        })
        .collect();
    Image::from_vec_clamped(img.height(), img.width(), 1, data)
}

fn luma_or_self(img: &Image) -> Result<Image> {
    if img.channels() == 3 {
        to_luminance(img)
    } else {
        Ok(img.clone())
    }
}

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

/// Y-channel PSNR in dB with a `shave`-pixel border removed.
pub fn psnr(a: &Image, b: &Image, shave: usize) -> Result<f64> {
    psnr_with(a, b, shave, PsnrMode::Luma)
}

pub fn psnr_with(a: &Image, b: &Image, shave: usize, mode: PsnrMode) -> Result<f64> {
    check_same(a, b)?;
    if 2 * shave >= a.height().min(a.width()) {
        return Err(Error::Size(format!(
            "shave {shave} leaves nothing of a {}x{} image",
            a.height(),
            a.width()
        )));
    }
    let (a, b) = match mode {
        PsnrMode::Luma => (luma_or_self(a)?, luma_or_self(b)?),
        PsnrMode::Rgb => (a.clone(), b.clone()),
    };
    let (h, w) = (a.height(), a.width());
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for c in 0..a.channels() {
        for y in shave..h - shave {
            for x in shave..w - shave {
                let d = a.get(c, y, x) as f64 - b.get(c, y, x) as f64;
                sum += d * d;
                count += 1;
            }
        }
    }
    let mse = sum / count as f64;
    if mse < MSE_FLOOR {
        Ok(PSNR_INFINITE)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// Normalized 1-D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Valid-mode separable filtering of an `h×w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| win[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| win[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM on luminance (11×11 Gaussian window, σ = 1.5, dynamic range 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    if a.height().min(a.width()) < SSIM_WINDOW {
        return Err(Error::Size(format!(
            "{}x{} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            a.height(),
            a.width()
        )));
    }
    let (a, b) = (luma_or_self(a)?, luma_or_self(b)?);
    let (h, w) = (a.height(), a.width());
    let x: Vec<f64> = a.plane(0).iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.plane(0).iter().map(|&v| v as f64).collect();
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let mu_x = filter_valid(&x, h, w, &win);
    let mu_y = filter_valid(&y, h, w, &win);
    let e_xx = filter_valid(&xx, h, w, &win);
    let e_yy = filter_valid(&yy, h, w, &win);
    let e_xy = filter_valid(&xy, h, w, &win);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Renders a PSNR value with six decimals, or `inf` for the sentinel.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(v: [f32; 3]) -> Image {
        Image::from_fn(4, 4, 3, |c, _, _| v[c]).unwrap()
    }

    #[test]
    fn luminance_examples() {
        let y = to_luminance(&rgb([0.0; 3])).unwrap();
        assert!(y.data().iter().all(|&v| (v as f64 - 16.0 / 255.0).abs() < 1e-7));
        let y = to_luminance(&rgb([1.0; 3])).unwrap();
        let expect: f64 = 0.257 + 0.504 + 0.098 + 16.0 / 255.0;
        assert!((expect - 0.921_745).abs() < 1e-6);
        assert!(y.data().iter().all(|&v| (v as f64 - expect).abs() < 1e-7));
        let y = to_luminance(&rgb([0.5; 3])).unwrap();
        let expect: f64 = 0.859 * 0.5 + 16.0 / 255.0;
        assert!((expect - 0.492_245).abs() < 1e-6);
        assert!(y.data().iter().all(|&v| (v as f64 - expect).abs() < 1e-7));
    }

    #[test]
    fn luminance_rejects_grey() {
        let g = Image::filled(2, 2, 1, 0.3).unwrap();
        assert!(matches!(to_luminance(&g), Err(Error::Channels { .. })));
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(8, 8, 1, 0.2).unwrap();
        assert_eq!(psnr(&a, &a, 0).unwrap(), PSNR_INFINITE);
        let b = Image::filled(8, 8, 1, 0.3).unwrap();
        assert!((psnr(&a, &b, 0).unwrap() - 20.0).abs() < 1e-5);
        let z = Image::filled(8, 8, 1, 0.0).unwrap();
        let o = Image::filled(8, 8, 1, 1.0).unwrap();
        assert_eq!(psnr(&z, &o, 0).unwrap(), 0.0);
        assert!(matches!(
            psnr(&z, &Image::filled(8, 7, 1, 0.0).unwrap(), 0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(psnr(&z, &o, 4), Err(Error::Size(_))));
        assert_eq!(format_db(PSNR_INFINITE), "inf");
    }

    #[test]
    fn ssim_of_constants() {
        let a = Image::filled(16, 16, 1, 0.25).unwrap();
        let b = Image::filled(16, 16, 1, 0.75).unwrap();
        let c1 = 1e-4;
        let expect = (2.0 * 0.25 * 0.75 + c1) / (0.25f64.powi(2) + 0.75f64.powi(2) + c1);
        assert!((expect - 0.600_064).abs() < 1e-6);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-9);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let small = Image::filled(10, 16, 1, 0.5).unwrap();
        assert!(matches!(ssim(&small, &small), Err(Error::Size(_))));
    }
}
