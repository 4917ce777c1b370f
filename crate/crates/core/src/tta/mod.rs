//! Two-stage single-image test-time adaptation.

mod config;
mod stage_a;
mod stage_b;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{
    merge_json, AdaptationConfig, DegraderMode, Profile, StageAConfig, StageALoss, StageBConfig,
    StageBLoss,
};
pub use stage_a::{kernel_regularizer, train_gdn, DdnRecord, StageAOutput, StageARecord, StageATrace};
pub use stage_b::{finetune_gup, Degrader, DegraderTrace, StageBRecord, StageBTrace};

use crate::degradation::Kernel2d;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{psnr, ssim};
use crate::models::{Checkpoint, Gdn, Gup, Network};
use crate::nn::Tensor;
use crate::seed::{derive_seed, sha256_hex};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
}

impl Metrics {
    /// Y-PSNR with a border shave of `scale` pixels, and SSIM.
    pub fn compute(sr: &Image, gt: &Image, scale: usize) -> Result<Self> {
        if !sr.same_shape(gt) {
            return Err(Error::Dimension(format!(
                "SR {}x{}x{} vs ground truth {}x{}x{}",
                sr.height(),
                sr.width(),
                sr.channels(),
                gt.height(),
                gt.width(),
                gt.channels()
            )));
        }
        Ok(Metrics {
            psnr: psnr(sr, gt, scale)?,
            ssim: ssim(sr, gt)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub config_hash: String,
    pub config_label: String,
    pub seed: u64,
    pub stage_a: Option<StageATrace>,
    pub stage_b: Option<StageBTrace>,
    pub gup_checksum_before: String,
    pub gup_checksum_after: String,
    pub gdn_checksum: Option<String>,
    pub initial_kernel: Option<Kernel2d>,
    pub collapsed_kernel: Option<Kernel2d>,
    pub baseline: Option<Metrics>,
    pub final_metrics: Option<Metrics>,
    pub wall_clock_secs: f64,
}

impl AdaptationReport {
    /// Hash of everything except wall-clock time.
    pub fn content_hash(&self) -> String {
        let mut r = self.clone();
        r.wall_clock_secs = 0.0;
        sha256_hex(&serde_json::to_vec(&r).expect("report serializes"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub struct Adapted {
    pub sr: Image,
    pub report: AdaptationReport,
    pub gup: Gup<f32>,
    pub gdn: Option<Gdn<f32>>,
}

/// Upsamples `lr` tile by tile.
///
/// Each tile covers a `tile - 2·overlap` core plus `overlap` context on
/// every side (clipped at the image border); only cores are kept. With
/// `overlap` at least the GUP's receptive radius the result equals
/// untiled inference. `tile = 0` runs the whole image at once.
pub fn super_resolve(gup: &Gup<f32>, lr: &Image, tile: usize, overlap: usize) -> Result<Image> {
    let x = lr.to_tensor::<f32>();
    if tile == 0 || (tile >= lr.height() && tile >= lr.width()) {
        return Image::from_tensor(&gup.forward(&x));
    }
    if tile <= 2 * overlap {
        return Err(Error::Parameter(format!(
            "tile {tile} must exceed twice the overlap {overlap}"
        )));
    }
    if overlap < gup.receptive_radius() {
        return Err(Error::Parameter(format!(
            "overlap {overlap} is below the receptive radius {}",
            gup.receptive_radius()
        )));
    }
    let s = gup.scale();
    let core = tile - 2 * overlap;
    let (h, w) = (lr.height(), lr.width());
    let mut out = Tensor::<f32>::zeros(x.channels, h * s, w * s);
    for y0 in (0..h).step_by(core) {
        let y1 = (y0 + core).min(h);
        let (wy0, wy1) = (y0.saturating_sub(overlap), (y1 + overlap).min(h));
        for x0 in (0..w).step_by(core) {
            let x1 = (x0 + core).min(w);
            let (wx0, wx1) = (x0.saturating_sub(overlap), (x1 + overlap).min(w));
            let win = lr.crop(wy0, wx0, wy1 - wy0, wx1 - wx0)?.to_tensor::<f32>();
            let up = gup.forward(&win);
            for c in 0..x.channels {
                let src = up.plane(c);
                let dst = out.plane_mut(c);
                for yy in y0 * s..y1 * s {
                    let sy = yy - wy0 * s;
                    let srow = &src[sy * up.width..(sy + 1) * up.width];
                    let d0 = yy * w * s;
                    dst[d0 + x0 * s..d0 + x1 * s]
                        .copy_from_slice(&srow[(x0 - wx0) * s..(x1 - wx0) * s]);
                }
            }
        }
    }
    Image::from_tensor(&out)
}

/// Runs the full pipeline on one test image.
///
/// Stage A draws from an rng seeded with `hash(seed, "stage_a")`, stage B
/// from `hash(seed, "stage_b")`.
pub fn adapt(
    test_lr: &Image,
    gup_ckpt: &Checkpoint,
    cfg: &AdaptationConfig,
    gt_hr: Option<&Image>,
) -> Result<Adapted> {
    let start = Instant::now();
    cfg.validate()?;
    let mut gup: Gup<f32> = gup_ckpt.to_network()?;
    if gup.scale() != cfg.scale {
        return Err(Error::Config(format!(
            "checkpoint scale {} differs from config scale {}",
            gup.scale(),
            cfg.scale
        )));
    }
    if let Some(gt) = gt_hr {
        if gt.height() != test_lr.height() * cfg.scale || gt.width() != test_lr.width() * cfg.scale
        {
            return Err(Error::Dimension(format!(
                "ground truth {}x{} is not {}x the test image {}x{}",
                gt.height(),
                gt.width(),
                cfg.scale,
                test_lr.height(),
                test_lr.width()
            )));
        }
    }
    let before = gup.checksum();
    let baseline = match gt_hr {
        Some(gt) => Some(Metrics::compute(
            &super_resolve(&gup, test_lr, cfg.tile, cfg.overlap)?,
            gt,
            cfg.scale,
        )?),
        None => None,
    };

    let mut stage_a = None;
    let mut stage_b = None;
    let mut gdn = None;
    let mut initial_kernel = None;
    if !cfg.dry_run {
        if cfg.degrader_mode == DegraderMode::Learned {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &["stage_a"]));
            let out = train_gdn(test_lr, &gup, cfg, &mut rng)?;
            stage_a = Some(out.trace);
            initial_kernel = out.initial_kernel;
            gdn = Some(out.gdn);
        }
        let degrader = match &gdn {
            Some(g) => Degrader::Learned(g),
            None => Degrader::Bicubic { scale: cfg.scale },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &["stage_b"]));
        stage_b = Some(finetune_gup(test_lr, &mut gup, degrader, cfg, &mut rng)?);
    }

    let sr = super_resolve(&gup, test_lr, cfg.tile, cfg.overlap)?;
    let final_metrics = gt_hr.map(|gt| Metrics::compute(&sr, gt, cfg.scale)).transpose()?;
    let collapsed_kernel = match &gdn {
        Some(g) if g.is_linear() => Some(g.collapsed_kernel()?),
        _ => None,
    };
    let report = AdaptationReport {
        config_hash: cfg.hash(),
        config_label: cfg.label(),
        seed: cfg.seed,
        stage_a,
        stage_b,
        gup_checksum_before: before,
        gup_checksum_after: gup.checksum(),
        gdn_checksum: gdn.as_ref().map(|g| g.checksum()),
        initial_kernel,
        collapsed_kernel,
        baseline,
        final_metrics,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok(Adapted {
        sr,
        report,
        gup,
        gdn,
    })
}
