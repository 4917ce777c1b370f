use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tta_sr::degradation::{
    convolve_subsample, degrade, make_kernel, subsample_phase, DegradationSpec, Kernel2d,
    KernelFamily,
};
use tta_sr::metrics::{psnr, ssim};
use tta_sr::patch::sample_patch;
use tta_sr::resample::{bicubic_resample, keys_cubic};
use tta_sr::Image;

fn noise_image(h: usize, w: usize, seed: u64) -> Image {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, 3, |_, _, _| r.random_range(0.0..1.0)).unwrap()
}

fn max_diff(a: &Image, b: &Image) -> f64 {
    assert!(a.same_shape(b));
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .fold(0.0, f64::max)
}

fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![
        Just(KernelFamily::Delta),
        Just(KernelFamily::GaussianIso),
        Just(KernelFamily::GaussianAniso),
        Just(KernelFamily::Box),
    ]
}

prop_compose! {
    fn any_spec()(
        kernel_family in family(),
        radius in 0usize..10,
        sigma_x in 0.0f64..5.0,
        sigma_y in 0.0f64..5.0,
        angle in -3.2f64..3.2,
        scale in 1usize..5,
    ) -> DegradationSpec {
        DegradationSpec {
            kernel_family,
            sigma_x,
            sigma_y,
            angle,
            kernel_size: 2 * radius + 1,
            scale,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kernels_are_nonnegative_and_normalized(spec in any_spec()) {
        let k = make_kernel(&spec).unwrap();
        prop_assert_eq!(k.size, spec.kernel_size);
        prop_assert!(k.data.iter().all(|&v| v >= 0.0));
        prop_assert!((k.sum() - 1.0).abs() < 1e-9, "sum {}", k.sum());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noiseless_degrade_is_deterministic(spec in any_spec(), seed in any::<u64>()) {
        let s = spec.scale;
        let hr = noise_image(6 * s, 4 * s, seed);
        let mut r1 = ChaCha8Rng::seed_from_u64(seed);
        let mut r2 = ChaCha8Rng::seed_from_u64(seed ^ 1);
        prop_assert_eq!(degrade(&hr, &spec, &mut r1).unwrap(), degrade(&hr, &spec, &mut r2).unwrap());
    }

    /// The transpose keeps the sampling grid for every scale; the axis flips
    /// only keep it when `s` is odd (for even `s` they shift it by one pixel).
    #[test]
    fn isotropic_degrade_commutes_with_flips(
        sigma in 0.3f64..3.0,
        radius in 1usize..6,
        scale in 1usize..5,
        seed in any::<u64>(),
    ) {
        let spec = DegradationSpec::gaussian(sigma, scale).with_kernel_size(2 * radius + 1);
        let hr = noise_image(5 * scale, 4 * scale, seed);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let low = degrade(&hr, &spec, &mut r).unwrap();
        let codes: &[u8] = if scale % 2 == 1 { &[1, 2, 3, 4, 5, 6, 7] } else { &[4] };
        for &code in codes {
            let a = degrade(&hr.dihedral(code), &spec, &mut r).unwrap();
            let b = low.dihedral(code);
            prop_assert!(max_diff(&a, &b) < 1e-6, "code {} scale {}", code, scale);
        }
    }

    #[test]
    fn bicubic_keeps_constants(v in prop_oneof![Just(0.0f32), Just(0.5), Just(1.0)], h in 3usize..12, w in 3usize..12) {
        let img = Image::filled(h, w, 3, v).unwrap();
        for scale in [2.0, 3.0, 0.5, 1.0 / 3.0, 0.25] {
            let out = bicubic_resample(&img, scale).unwrap();
            prop_assert!(out.data().iter().all(|&x| (x - v).abs() < 1e-6));
        }
    }

    #[test]
    fn psnr_and_ssim_are_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = noise_image(16, 16, s1);
        let b = noise_image(16, 16, s2);
        prop_assert_eq!(psnr(&a, &b, 2).unwrap(), psnr(&b, &a, 2).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn patches_stay_inside(h in 1usize..9, w in 1usize..9, seed in any::<u64>(), augment in any::<bool>()) {
        let img = Image::from_fn(h, w, 1, |_, y, x| (y * w + x) as f32 / 64.0).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for size in 1..=h.min(w) {
            let p = sample_patch(&img, size, &mut r, augment).unwrap();
            prop_assert!(p.origin_row + size <= h && p.origin_col + size <= w);
            prop_assert!(p.augment_code < 8);
            let back = p.image.dihedral(tta_sr::image::dihedral_inverse(p.augment_code));
            prop_assert_eq!(back, img.crop(p.origin_row, p.origin_col, size, size).unwrap());
        }
    }
}

#[test]
fn psnr_falls_as_noise_grows() {
    let img = Image::filled(32, 32, 3, 0.5).unwrap();
    let mut last = f64::INFINITY;
    for amp in [0.01f32, 0.02, 0.05] {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let noisy = Image::from_fn(32, 32, 3, |c, y, x| {
            img.get(c, y, x) + amp * r.random_range(-1.0f32..1.0)
        })
        .unwrap();
        let p = psnr(&img, &noisy, 2).unwrap();
        assert!(p < last, "{amp}: {p} !< {last}");
        last = p;
    }
}

#[test]
fn bicubic_up_then_down_reproduces_ramps() {
    let ramp = Image::from_fn(24, 20, 3, |c, y, x| {
        0.1 + 0.02 * y as f32 + 0.015 * x as f32 + 0.05 * c as f32
    })
    .unwrap();
    let flat = Image::filled(24, 20, 3, 0.3).unwrap();
    for img in [ramp, flat] {
        let back = bicubic_resample(&bicubic_resample(&img, 2.0).unwrap(), 0.5).unwrap();
        for c in 0..3 {
            for y in 4..20 {
                for x in 4..16 {
                    let d = (back.get(c, y, x) - img.get(c, y, x)).abs();
                    assert!(d < 1e-3, "({c},{y},{x}) off by {d}");
                }
            }
        }
    }
}

/// Per-axis Keys weights for a `1/s` minification, indexed by integer
/// offsets from the degrade sampling position.
fn keys_axis(s: usize) -> Vec<(isize, f64)> {
    let delta = (s as f64 - 1.0) / 2.0 - subsample_phase(s) as f64;
    let reach = 2 * s as isize + 1;
    let raw: Vec<(isize, f64)> = (-reach..=reach)
        .map(|t| (t, keys_cubic((delta - t as f64) / s as f64)))
        .filter(|&(_, w)| w != 0.0)
        .collect();
    let total: f64 = raw.iter().map(|t| t.1).sum();
    raw.into_iter().map(|(t, w)| (t, w / total)).collect()
}

/// Bicubic minification written as a degradation kernel. The sampling
/// centre of bicubic sits half a pixel after the degrade phase for even
/// scales, so the kernel is built off-centre there.
#[test]
fn bicubic_downscale_equals_degrade_with_keys_kernel() {
    for s in [2usize, 3, 4] {
        let axis = keys_axis(s);
        let r = axis.iter().map(|t| t.0.unsigned_abs()).max().unwrap();
        let size = 2 * r + 1;
        let mut data = vec![0.0; size * size];
        // degrade reads pixel c - (a - r) for kernel row a
        for &(ty, wy) in &axis {
            for &(tx, wx) in &axis {
                let a = (r as isize - ty) as usize;
                let b = (r as isize - tx) as usize;
                data[a * size + b] = wy * wx;
            }
        }
        let k = Kernel2d::new(size, data);
        let hr = noise_image(12 * s, 10 * s, s as u64);
        let via_degrade =
            Image::from_tensor(&convolve_subsample(&hr.to_tensor::<f64>(), &k, s, subsample_phase(s)))
                .unwrap();
        let via_bicubic = bicubic_resample(&hr, 1.0 / s as f64).unwrap();
        assert_eq!(via_degrade.height(), via_bicubic.height());
        // borders differ: reflect padding versus clamped taps
        let m = 3;
        for c in 0..3 {
            for y in m..via_bicubic.height() - m {
                for x in m..via_bicubic.width() - m {
                    let d = (via_degrade.get(c, y, x) - via_bicubic.get(c, y, x)).abs();
                    assert!(d < 1e-6, "s={s} ({c},{y},{x}) off by {d}");
                }
            }
        }
    }
}
