//! Deterministic random crops.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// A square crop of a source image, optionally transformed by a dihedral
/// element.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub image: Image,
    pub origin_row: usize,
    pub origin_col: usize,
    pub augment_code: u8,
}

/// Draws a `size×size` patch uniformly from `img`.
///
/// The row origin is drawn first, then the column, then (only when
/// `augment` is set) the dihedral code.
pub fn sample_patch<R: Rng + ?Sized>(
    img: &Image,
    size: usize,
    rng: &mut R,
    augment: bool,
) -> Result<Patch> {
    if size == 0 || size > img.height().min(img.width()) {
        return Err(Error::Size(format!(
            "patch {size} does not fit a {}x{} image",
            img.height(),
            img.width()
        )));
    }
    let origin_row = rng.random_range(0..=img.height() - size);
    let origin_col = rng.random_range(0..=img.width() - size);
    let augment_code = if augment { rng.random_range(0..8u8) } else { 0 };
    let crop = img.crop(origin_row, origin_col, size, size)?;
    let image = if augment_code == 0 {
        crop
    } else {
        crop.dihedral(augment_code)
    };
    Ok(Patch {
        image,
        origin_row,
        origin_col,
        augment_code,
    })
}

/// Dihedral elements that keep a phase-`floor((s-1)/2)` sampling grid in
/// place. For even `s` an axis flip moves LR samples onto the other HR
/// phase, so only the transpose survives.
pub fn grid_preserving_codes(scale: usize) -> &'static [u8] {
    if scale % 2 == 1 {
        &[0, 1, 2, 3, 4, 5, 6, 7]
    } else {
        &[0, 4]
    }
}

/// Draws spatially aligned patches from an LR/HR pair: an `lr_size` crop of
/// `lr` and the matching `scale·lr_size` crop of `hr`, sharing one dihedral
/// element drawn from [`grid_preserving_codes`].
pub fn sample_aligned_pair<R: Rng + ?Sized>(
    lr: &Image,
    hr: &Image,
    scale: usize,
    lr_size: usize,
    rng: &mut R,
    augment: bool,
) -> Result<(Patch, Patch)> {
    if hr.height() != lr.height() * scale || hr.width() != lr.width() * scale {
        return Err(Error::Dimension(format!(
            "HR {}x{} is not {scale}x LR {}x{}",
            hr.height(),
            hr.width(),
            lr.height(),
            lr.width()
        )));
    }
    let mut lr_patch = sample_patch(lr, lr_size, rng, false)?;
    if augment {
        let codes = grid_preserving_codes(scale);
        lr_patch.augment_code = codes[rng.random_range(0..codes.len())];
        lr_patch.image = lr_patch.image.dihedral(lr_patch.augment_code);
    }
    let hr_crop = hr.crop(
        lr_patch.origin_row * scale,
        lr_patch.origin_col * scale,
        lr_size * scale,
        lr_size * scale,
    )?;
    let hr_patch = Patch {
        image: if lr_patch.augment_code == 0 {
            hr_crop
        } else {
            hr_crop.dihedral(lr_patch.augment_code)
        },
        origin_row: lr_patch.origin_row * scale,
        origin_col: lr_patch.origin_col * scale,
        augment_code: lr_patch.augment_code,
    };
    Ok((lr_patch, hr_patch))
}
