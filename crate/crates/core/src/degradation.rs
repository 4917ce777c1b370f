//! Parametric degradation `y = (x ⊗ k)↓s + n` and desk-scale benchmark
//! construction.
//!
//! Convolution uses reflect padding. Subsampling keeps every `s`-th pixel
//! starting at `floor((s - 1) / 2)`. Noise is added after subsampling and
//! the result clamped to `[0, 1]`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{reflect_index, Scalar, Tensor};
use crate::seed::{derive_seed, sha256_hex};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Below this width a Gaussian collapses to a delta.
pub const SIGMA_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Delta,
    GaussianIso,
    GaussianAniso,
    Box,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kernel_family: KernelFamily,
    #[serde(default)]
    pub sigma_x: f64,
    #[serde(default)]
    pub sigma_y: f64,
    #[serde(default)]
    pub angle: f64,
    pub kernel_size: usize,
    pub scale: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DegradationSpec {
    pub fn delta(scale: usize) -> Self {
        DegradationSpec {
            kernel_family: KernelFamily::Delta,
            sigma_x: 0.0,
            sigma_y: 0.0,
            angle: 0.0,
            kernel_size: 1,
            scale,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    /// Isotropic Gaussian with a `2·ceil(3σ)+1` support.
    pub fn gaussian(sigma: f64, scale: usize) -> Self {
        let radius = (3.0 * sigma).ceil().max(0.0) as usize;
        DegradationSpec {
            kernel_family: KernelFamily::GaussianIso,
            sigma_x: sigma,
            sigma_y: sigma,
            angle: 0.0,
            kernel_size: 2 * radius + 1,
            scale,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn with_noise(mut self, noise_sigma: f64) -> Self {
        self.noise_sigma = noise_sigma;
        self
    }

    pub fn with_kernel_size(mut self, kernel_size: usize) -> Self {
        self.kernel_size = kernel_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::Parameter(format!(
                "kernel_size must be odd and positive, got {}",
                self.kernel_size
            )));
        }
        if self.scale == 0 {
            return Err(Error::Parameter("scale must be at least 1".into()));
        }
        for (name, v) in [
            ("sigma_x", self.sigma_x),
            ("sigma_y", self.sigma_y),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !self.angle.is_finite() {
            return Err(Error::Parameter("angle must be finite".into()));
        }
        Ok(())
    }

    /// Short human label such as `gauss1.3_s2_n0`.
    pub fn label(&self) -> String {
        let k = match self.kernel_family {
            KernelFamily::Delta => "delta".to_string(),
            KernelFamily::GaussianIso => format!("gauss{}", self.sigma_x),
            KernelFamily::GaussianAniso => {
                format!("aniso{}x{}r{}", self.sigma_x, self.sigma_y, self.angle)
            }
            KernelFamily::Box => format!("box{}", self.kernel_size),
        };
        format!("{k}_s{}_n{}", self.scale, self.noise_sigma)
    }
}

/// A square kernel with odd side, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel2d {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Kernel2d {
    pub fn new(size: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), size * size);
        Kernel2d { size, data }
    }

    pub fn delta(size: usize) -> Self {
        let mut data = vec![0.0; size * size];
        data[size * size / 2] = 1.0;
        Kernel2d { size, data }
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.size + c]
    }

    pub fn center(&self) -> f64 {
        self.at(self.radius(), self.radius())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Zero-pads to a larger odd size, keeping the center fixed.
    pub fn padded_to(&self, size: usize) -> Kernel2d {
        assert!(size >= self.size && (size - self.size) % 2 == 0);
        let off = (size - self.size) / 2;
        let mut out = Kernel2d::new(size, vec![0.0; size * size]);
        for r in 0..self.size {
            for c in 0..self.size {
                out.data[(r + off) * size + c + off] = self.at(r, c);
            }
        }
        out
    }

    /// Euclidean distance after aligning centers.
    pub fn l2_distance(&self, other: &Kernel2d) -> f64 {
        let size = self.size.max(other.size);
        let (a, b) = (self.padded_to(size), other.padded_to(size));
        a.data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Full 2-D convolution; the result has side `a + b - 1`.
    pub fn convolve(&self, other: &Kernel2d) -> Kernel2d {
        let n = self.size + other.size - 1;
        let mut out = vec![0.0; n * n];
        for r in 0..self.size {
            for c in 0..self.size {
                let v = self.at(r, c);
                for rr in 0..other.size {
                    for cc in 0..other.size {
                        out[(r + rr) * n + c + cc] += v * other.at(rr, cc);
                    }
                }
            }
        }
        Kernel2d::new(n, out)
    }

    pub fn flipped(&self) -> Kernel2d {
        let mut data = self.data.clone();
        data.reverse();
        Kernel2d::new(self.size, data)
    }

    /// Writes the kernel as a CSV grid, one row per line.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in 0..self.size {
            let row: Vec<String> = (0..self.size).map(|c| format!("{:.9e}", self.at(r, c))).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// Realizes the blur kernel of a spec, normalized to unit sum.
pub fn make_kernel(spec: &DegradationSpec) -> Result<Kernel2d> {
    spec.validate()?;
    let n = spec.kernel_size;
    let r = (n / 2) as f64;
    let raw: Vec<f64> = match spec.kernel_family {
        KernelFamily::Delta => return Ok(Kernel2d::delta(n)),
        KernelFamily::Box => vec![1.0; n * n],
        KernelFamily::GaussianIso => {
            if spec.sigma_x < SIGMA_EPS {
                return Ok(Kernel2d::delta(n));
            }
            let s2 = 2.0 * spec.sigma_x * spec.sigma_x;
            grid(n, r, |x, y| (-(x * x + y * y) / s2).exp())
        }
        KernelFamily::GaussianAniso => {
            if spec.sigma_x < SIGMA_EPS && spec.sigma_y < SIGMA_EPS {
                return Ok(Kernel2d::delta(n));
            }
            let sx = spec.sigma_x.max(SIGMA_EPS);
            let sy = spec.sigma_y.max(SIGMA_EPS);
            let (sin, cos) = spec.angle.sin_cos();
            grid(n, r, |x, y| {
                let u = cos * x + sin * y;
                let v = -sin * x + cos * y;
                (-(u * u / (2.0 * sx * sx) + v * v / (2.0 * sy * sy))).exp()
            })
        }
    };
    let z: f64 = raw.iter().sum();
    Ok(Kernel2d::new(n, raw.into_iter().map(|v| v / z).collect()))
}

fn grid(n: usize, r: f64, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            out.push(f(col as f64 - r, row as f64 - r));
        }
    }
    out
}

/// Convolves each channel with `k` under reflect padding and keeps every
/// `stride`-th sample starting at `phase`.
pub fn convolve_subsample<T: Scalar>(
    x: &Tensor<T>,
    k: &Kernel2d,
    stride: usize,
    phase: usize,
) -> Tensor<T> {
    let r = k.radius() as isize;
    let oh = (x.height - phase).div_ceil(stride);
    let ow = (x.width - phase).div_ceil(stride);
    let weights: Vec<T> = k.data.iter().map(|&v| T::lit(v)).collect();
    let mut out = Tensor::zeros(x.channels, oh, ow);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for oy in 0..oh {
            let cy = (oy * stride + phase) as isize;
            for ox in 0..ow {
                let cx = (ox * stride + phase) as isize;
                let mut acc = T::zero();
                for a in 0..k.size {
                    let sy = reflect_index(cy - (a as isize - r), x.height);
                    let row = &src[sy * x.width..(sy + 1) * x.width];
                    for b in 0..k.size {
                        let sx = reflect_index(cx - (b as isize - r), x.width);
                        acc += weights[a * k.size + b] * row[sx];
                    }
                }
                dst[oy * ow + ox] = acc;
            }
        }
    }
    out
}

/// Subsampling phase used throughout: `floor((s - 1) / 2)`.
pub fn subsample_phase(scale: usize) -> usize {
    (scale - 1) / 2
}

/// Applies the degradation model to `hr`.
pub fn degrade<R: Rng + ?Sized>(hr: &Image, spec: &DegradationSpec, rng: &mut R) -> Result<Image> {
    let kernel = make_kernel(spec)?;
    let s = spec.scale;
    if hr.height() % s != 0 || hr.width() % s != 0 {
        return Err(Error::Size(format!(
            "{}x{} image is not divisible by scale {s}",
            hr.height(),
            hr.width()
        )));
    }
    let mut y = convolve_subsample(&hr.to_tensor::<f64>(), &kernel, s, subsample_phase(s));
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::Parameter(format!("noise: {e}")))?;
        for v in y.data.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    Image::from_tensor(&y)
}

/// One HR/LR pair of a benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub hr_path: String,
    pub lr_path: String,
    pub spec: DegradationSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub format_version: u32,
    pub seed: u64,
    pub created_unix: u64,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl BenchmarkManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::NotFound {
                what: "manifest",
                path: path.to_path_buf(),
            });
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut m: BenchmarkManifest = serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Version {
                found: m.format_version,
                expected: MANIFEST_FORMAT_VERSION,
            });
        }
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// SHA-256 of the serialized manifest, used for provenance.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn load_pair(&self, entry: &ManifestEntry) -> Result<(Image, Image)> {
        let lr = Image::read_png(self.resolve(&entry.lr_path))?;
        let hr = Image::read_png(self.resolve(&entry.hr_path))?;
        Ok((lr, hr))
    }
}

/// Degrades every HR image under every spec and writes PNG pairs plus a
/// `manifest.json` into `out_dir`.
///
/// Each HR image is center-cropped to a multiple of the largest scale.
/// Entry `i` is degraded with an rng seeded by `hash(seed, i)`, so the
/// output does not depend on scheduling.
pub fn build_benchmark(
    hr_images: &[PathBuf],
    specs: &[DegradationSpec],
    out_dir: &Path,
    seed: u64,
    created_unix: u64,
) -> Result<BenchmarkManifest> {
    for s in specs {
        s.validate()?;
    }
    if hr_images.is_empty() || specs.is_empty() {
        return Err(Error::Config("benchmark needs at least one image and one spec".into()));
    }
    let max_scale = specs.iter().map(|s| s.scale).max().unwrap_or(1);
    fs::create_dir_all(out_dir.join("hr")).map_err(|e| Error::io(out_dir, e))?;

    let mut crops = Vec::with_capacity(hr_images.len());
    for path in hr_images {
        let img = Image::read_png(path)?.crop_to_multiple(max_scale)?.quantized();
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Parameter(format!("bad image name {}", path.display())))?
            .to_string();
        let rel = format!("hr/{stem}.png");
        img.write_png(out_dir.join(&rel))?;
        crops.push((stem, rel, img));
    }

    let mut jobs = Vec::new();
    for (si, spec) in specs.iter().enumerate() {
        let dir = format!("lr/{si:02}_{}", spec.label());
        fs::create_dir_all(out_dir.join(&dir)).map_err(|e| Error::io(out_dir.join(&dir), e))?;
        for (stem, hr_rel, _) in &crops {
            let index = jobs.len();
            let mut spec = spec.clone();
            spec.seed = derive_seed(seed, &["entry", &index.to_string()]);
            jobs.push(ManifestEntry {
                id: format!("{stem}@{si:02}"),
                hr_path: hr_rel.clone(),
                lr_path: format!("{dir}/{stem}.png"),
                spec,
            });
        }
    }

    let n_images = crops.len();
    jobs.par_iter()
        .enumerate()
        .try_for_each(|(i, entry)| -> Result<()> {
            let hr = &crops[i % n_images].2;
            let mut rng = ChaCha8Rng::seed_from_u64(entry.spec.seed);
            degrade(hr, &entry.spec, &mut rng)?.write_png(out_dir.join(&entry.lr_path))
        })?;

    let manifest = BenchmarkManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        seed,
        created_unix,
        entries: jobs,
        base_dir: out_dir.to_path_buf(),
    };
    let path = out_dir.join("manifest.json");
    fs::write(&path, manifest.to_json()?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_and_tiny_gaussian_are_deltas() {
        let k = make_kernel(&DegradationSpec::delta(2).with_kernel_size(5)).unwrap();
        assert_eq!(k, Kernel2d::delta(5));
        let mut g = DegradationSpec::gaussian(1e-7, 2);
        g.kernel_size = 7;
        assert_eq!(make_kernel(&g).unwrap(), Kernel2d::delta(7));
    }

    #[test]
    fn gaussian_center_matches_grid_oracle() {
        let spec = DegradationSpec::gaussian(2.0, 1).with_kernel_size(13);
        let k = make_kernel(&spec).unwrap();
        let z: f64 = (-6..=6)
            .flat_map(|y| (-6..=6).map(move |x| ((-(x * x + y * y) as f64) / 8.0).exp()))
            .sum();
        assert!((k.center() - 1.0 / z).abs() < 1e-15);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = DegradationSpec::gaussian(1.0, 2);
        s.sigma_x = -1.0;
        assert!(matches!(make_kernel(&s), Err(Error::Parameter(_))));
        let s = DegradationSpec::gaussian(1.0, 2).with_kernel_size(4);
        assert!(matches!(make_kernel(&s), Err(Error::Parameter(_))));
    }

    #[test]
    fn anisotropic_kernel_rotates() {
        let mut s = DegradationSpec::gaussian(1.0, 1).with_kernel_size(9);
        s.kernel_family = KernelFamily::GaussianAniso;
        s.sigma_x = 2.5;
        s.sigma_y = 0.5;
        let k0 = make_kernel(&s).unwrap();
        s.angle = std::f64::consts::FRAC_PI_2;
        let k90 = make_kernel(&s).unwrap();
        // a quarter turn swaps the axes
        for r in 0..9 {
            for c in 0..9 {
                assert!((k0.at(r, c) - k90.at(c, r)).abs() < 1e-12);
            }
        }
        assert!(k0.at(4, 6) > k0.at(6, 4));
    }

    #[test]
    fn identity_degradation() {
        let img = Image::from_fn(6, 6, 3, |c, y, x| ((c + y * x) % 5) as f32 / 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(degrade(&img, &DegradationSpec::delta(1), &mut rng).unwrap(), img);
    }

    #[test]
    fn indivisible_size_is_rejected() {
        let img = Image::filled(5, 6, 1, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            degrade(&img, &DegradationSpec::delta(2), &mut rng),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn kernel_convolution_oracle() {
        let a = Kernel2d::new(3, (0..9).map(|v| v as f64).collect());
        let b = Kernel2d::new(3, (0..9).map(|v| (v as f64).sin()).collect());
        let c = a.convolve(&b);
        assert_eq!(c.size, 5);
        for i in 0..5usize {
            for j in 0..5usize {
                let mut acc = 0.0;
                for r in 0..3usize {
                    for s in 0..3usize {
                        if i >= r && j >= s && i - r < 3 && j - s < 3 {
                            acc += a.at(r, s) * b.at(i - r, j - s);
                        }
                    }
                }
                assert!((c.at(i, j) - acc).abs() < 1e-12);
            }
        }
    }
}
