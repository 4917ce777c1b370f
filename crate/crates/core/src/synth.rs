//! Procedural "dead leaves" scenes used as desk-scale HR content.
//!
//! Occluding shapes with power-law sizes give the image statistics a rough
//! scale invariance, which is what single-image internal learning relies on.

use std::f64::consts::PI;

use rand::Rng;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed::derive_seed;

#[derive(Clone, Copy, Debug)]
enum Fill {
    Flat([f64; 3]),
    Gradient { base: [f64; 3], tip: [f64; 3], dir: (f64, f64), span: f64 },
    Stripes { a: [f64; 3], b: [f64; 3], freq: f64, dir: (f64, f64), phase: f64 },
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    Rect { cx: f64, cy: f64, hw: f64, hh: f64, cos: f64, sin: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { cx, cy, hw, hh, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                u.abs() <= hw && v.abs() <= hh
            }
        }
    }

    fn center(&self) -> (f64, f64) {
        match *self {
            Shape::Disk { cx, cy, .. } | Shape::Rect { cx, cy, .. } => (cx, cy),
        }
    }
}

impl Fill {
    fn color(&self, x: f64, y: f64, center: (f64, f64)) -> [f64; 3] {
        let (dx, dy) = (x - center.0, y - center.1);
        match *self {
            Fill::Flat(c) => c,
            Fill::Gradient { base, tip, dir, span } => {
                let t = ((dx * dir.0 + dy * dir.1) / span * 0.5 + 0.5).clamp(0.0, 1.0);
                mix(base, tip, t)
            }
            Fill::Stripes { a, b, freq, dir, phase } => {
                let t = 0.5 + 0.5 * ((dx * dir.0 + dy * dir.1) * freq + phase).sin();
                mix(a, b, t)
            }
        }
    }
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] * (1.0 - t) + b[i] * t)
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    // correlated channels keep colors natural-looking
    let base: f64 = rng.random_range(0.05..0.95);
    [0, 1, 2].map(|_| (base + rng.random_range(-0.25..0.25)).clamp(0.0, 1.0))
}

/// Renders a `height×width` RGB dead-leaves scene with 2×2 supersampling.
pub fn dead_leaves<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Result<Image> {
    let extent = height.max(width) as f64;
    let (r_min, r_max) = (extent / 64.0, extent / 4.0);
    let n_shapes = 60 + height * width / 96;
    let mut layers = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        // inverse-CDF sample of p(r) ∝ r^-3 on [r_min, r_max]
        let u: f64 = rng.random();
        let inv = 1.0 / (r_min * r_min) - u * (1.0 / (r_min * r_min) - 1.0 / (r_max * r_max));
        let r = 1.0 / inv.sqrt();
        let cx = rng.random_range(-r..width as f64 + r);
        let cy = rng.random_range(-r..height as f64 + r);
        let shape = if rng.random_bool(0.6) {
            Shape::Disk { cx, cy, r }
        } else {
            let theta: f64 = rng.random_range(0.0..PI);
            let aspect: f64 = rng.random_range(0.3..1.0);
            Shape::Rect {
                cx,
                cy,
                hw: r,
                hh: r * aspect,
                cos: theta.cos(),
                sin: theta.sin(),
            }
        };
        let phi: f64 = rng.random_range(0.0..2.0 * PI);
        let dir = (phi.cos(), phi.sin());
        let fill = match rng.random_range(0..10) {
            0..=4 => Fill::Flat(random_color(rng)),
            5..=7 => Fill::Gradient {
                base: random_color(rng),
                tip: random_color(rng),
                dir,
                span: r.max(1.0),
            },
            _ => Fill::Stripes {
                a: random_color(rng),
                b: random_color(rng),
                freq: rng.random_range(0.4..1.6),
                dir,
                phase: rng.random_range(0.0..2.0 * PI),
            },
        };
        layers.push((shape, fill));
    }
    let background = random_color(rng);
    let offsets = [0.25, 0.75];
    let mut data = vec![0.0f32; 3 * height * width];
    let plane = height * width;
    for y in 0..height {
        for x in 0..width {
            let mut acc = [0.0; 3];
            for oy in offsets {
                for ox in offsets {
                    let (px, py) = (x as f64 + ox, y as f64 + oy);
                    // last drawn shape is on top
                    let c = layers
                        .iter()
                        .rev()
                        .find(|(s, _)| s.contains(px, py))
                        .map(|(s, f)| f.color(px, py, s.center()))
                        .unwrap_or(background);
                    for i in 0..3 {
                        acc[i] += c[i] / 4.0;
                    }
                }
            }
            for (i, v) in acc.iter().enumerate() {
                data[i * plane + y * width + x] = *v as f32;
            }
        }
    }
    Image::from_vec_clamped(height, width, 3, data)
}

/// Writes `count` scenes as `synth_NN.png` into `dir`; scene `i` is seeded
/// with `hash(seed, "synth", i)`.
pub fn write_dead_leaves_set(
    dir: &Path,
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["synth", &i.to_string()]));
            let path = dir.join(format!("synth_{i:02}.png"));
            dead_leaves(height, width, &mut rng)?.write_png(&path)?;
            Ok(path)
        })
        .collect()
}
