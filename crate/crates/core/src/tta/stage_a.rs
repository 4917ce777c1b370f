//! Stage A: learn the test image's downsampler with the GUP frozen.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{AdaptationConfig, DegraderMode, StageALoss};
use crate::degradation::Kernel2d;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::models::{Ddn, Gdn, Gup, Network};
use crate::nn::{l1_loss, lr_schedule, mse_to_target, Adam, Tensor};
use crate::patch::sample_patch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageARecord {
    pub iter: u64,
    pub lr: f64,
    pub bwd_cycle: Option<f64>,
    pub fwd_cycle: Option<f64>,
    /// Generator side of the adversarial loss.
    pub gan: Option<f64>,
    pub kreg: Option<f64>,
    /// Weighted sum of the enabled terms.
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdnRecord {
    pub iter: u64,
    pub lr: f64,
    pub real: f64,
    pub fake: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageATrace {
    pub records: Vec<StageARecord>,
    pub ddn_records: Vec<DdnRecord>,
}

pub struct StageAOutput {
    pub gdn: Gdn<f32>,
    /// Present only when the adversarial loss was enabled.
    pub ddn: Option<Ddn<f32>>,
    pub trace: StageATrace,
    pub initial_kernel: Option<Kernel2d>,
}

/// Kernel regularizer on the collapsed kernel `K` of a layer stack:
/// `(ΣK − 1)² + Σ m·|K|`, where `m` grows quadratically with distance from
/// the center beyond half the radius.
///
/// Returns the value and the gradient with respect to each layer.
pub fn kernel_regularizer(layers: &[Kernel2d]) -> (f64, Vec<Kernel2d>) {
    let full = |skip: Option<usize>| {
        layers
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .fold(Kernel2d::delta(1), |acc, (_, k)| acc.convolve(k))
    };
    let k = full(None);
    let n = k.size;
    let r = k.radius() as f64;
    let half = (r / 2.0).max(0.5);
    let mask: Vec<f64> = (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64 - r, (i % n) as f64 - r);
            let d = (y * y + x * x).sqrt();
            ((d - half) / half).max(0.0).powi(2)
        })
        .collect();
    let excess = k.sum() - 1.0;
    let loss = excess * excess
        + k.data
            .iter()
            .zip(&mask)
            .map(|(v, m)| m * v.abs())
            .sum::<f64>();
    let g: Vec<f64> = k
        .data
        .iter()
        .zip(&mask)
        .map(|(v, m)| 2.0 * excess + m * v.signum() * (*v != 0.0) as u8 as f64)
        .collect();
    let grads = layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let other = full(Some(i));
            let mut out = Kernel2d::new(layer.size, vec![0.0; layer.size * layer.size]);
            for a in 0..layer.size {
                for b in 0..layer.size {
                    let mut acc = 0.0;
                    for qa in 0..other.size {
                        for qb in 0..other.size {
                            acc += g[(a + qa) * n + b + qb] * other.at(qa, qb);
                        }
                    }
                    out.data[a * layer.size + b] = acc;
                }
            }
            out
        })
        .collect();
    (loss, grads)
}

fn layer_kernels(gdn: &Gdn<f32>) -> Vec<Kernel2d> {
    gdn.params()
        .iter()
        .map(|p| Kernel2d::new(p.shape[2], p.data.iter().map(|&v| v as f64).collect()))
        .collect()
}

/// Trains a fresh GDN (and DDN when the adversarial loss is on) on one
/// test image.
///
/// Per iteration the rng yields, in order: the training patch, then (with
/// the adversarial loss) the "real" crop of size `patch / scale`. The GDN
/// and DDN are initialized from the same rng before the first iteration.
pub fn train_gdn<R: Rng + ?Sized>(
    test_lr: &Image,
    gup: &Gup<f32>,
    cfg: &AdaptationConfig,
    rng: &mut R,
) -> Result<StageAOutput> {
    cfg.validate()?;
    if cfg.degrader_mode != DegraderMode::Learned {
        return Err(Error::Config("stage A requires degrader_mode = learned".into()));
    }
    let a = &cfg.stage_a;
    if a.losses.is_empty() {
        return Err(Error::Config("no stage A loss enabled".into()));
    }
    if test_lr.height().min(test_lr.width()) < cfg.patch {
        return Err(Error::Size(format!(
            "test image {}x{} is smaller than patch {}",
            test_lr.height(),
            test_lr.width(),
            cfg.patch
        )));
    }
    if gup.scale() != cfg.scale {
        return Err(Error::Config(format!(
            "GUP scale {} differs from config scale {}",
            gup.scale(),
            cfg.scale
        )));
    }
    let use_bwd = cfg.has_a(StageALoss::BwdCycle);
    let use_fwd = cfg.has_a(StageALoss::FwdCycle);
    let use_gan = cfg.has_a(StageALoss::Gan);
    let use_kreg = a.gdn_linear && a.lambda_kreg > 0.0;

    let mut gdn = Gdn::<f32>::new(cfg.scale, &a.gdn_kernel_sizes, a.gdn_linear, rng)?;
    let mut ddn = if use_gan {
        Some(Ddn::<f32>::new(a.ddn_width, a.ddn_depth, rng)?)
    } else {
        None
    };
    let initial_kernel = a.gdn_linear.then(|| gdn.collapsed_kernel()).transpose()?;
    let mut opt = Adam::new(gdn.params());
    let mut opt_d = ddn.as_ref().map(|d| Adam::new(d.params()));
    let mut trace = StageATrace::default();
    let small = cfg.patch / cfg.scale;

    for it in 0..a.iters {
        let p = sample_patch(test_lr, cfg.patch, rng, false)?.image.to_tensor::<f32>();
        let real = if use_gan {
            Some(sample_patch(test_lr, small, rng, false)?.image.to_tensor::<f32>())
        } else {
            None
        };
        let lr = lr_schedule(a.lr * a.lr_multiplier, a.lr_decay, a.lr_step, it);
        let mut grads = gdn.params().zero_grads();
        let mut rec = StageARecord {
            iter: it,
            lr,
            bwd_cycle: None,
            fwd_cycle: None,
            gan: None,
            kreg: None,
            total: 0.0,
        };

        if use_bwd {
            let sr = gup.forward(&p);
            let (down, tr) = gdn.forward_train(&sr);
            let (loss, mut g) = l1_loss(&down, &p);
            g.scale(a.lambda_bwd as f32);
            gdn.backward(&tr, &g, Some(&mut grads), false);
            rec.bwd_cycle = Some(loss);
            rec.total += a.lambda_bwd * loss;
        }

        if use_fwd || use_gan {
            let (fake, tr) = gdn.forward_train(&p);
            let mut g_fake = Tensor::zeros(fake.channels, fake.height, fake.width);
            if use_fwd {
                let (up, tr_up) = gup.forward_train(&fake);
                let (loss, mut g) = l1_loss(&up, &p);
                g.scale(a.lambda_fwd as f32);
                let gi = gup.backward(&tr_up, &g, None, true).expect("input grad requested");
                g_fake.add_assign(&gi);
                rec.fwd_cycle = Some(loss);
                rec.total += a.lambda_fwd * loss;
            }
            if let (Some(d), Some(opt_d), Some(real)) = (ddn.as_mut(), opt_d.as_mut(), real.as_ref()) {
                // discriminator step on real vs detached fake
                let d_lr = lr_schedule(a.ddn_lr, a.lr_decay, a.lr_step, it);
                let mut gd = d.params().zero_grads();
                let (sr_, tr_r) = d.forward_train(real);
                let (l_real, g_real) = mse_to_target(&sr_, 1.0);
                d.backward(&tr_r, &g_real, Some(&mut gd), false);
                let (sf, tr_f) = d.forward_train(&fake);
                let (l_fake, g_f) = mse_to_target(&sf, 0.0);
                d.backward(&tr_f, &g_f, Some(&mut gd), false);
                opt_d.step(d.params_mut(), &gd, d_lr);
                trace.ddn_records.push(DdnRecord {
                    iter: it,
                    lr: d_lr,
                    real: l_real,
                    fake: l_fake,
                });
                // generator step against the updated discriminator
                let (sg, tr_g) = d.forward_train(&fake);
                let (l_gen, mut gg) = mse_to_target(&sg, 1.0);
                gg.scale(a.lambda_gan as f32);
                let gi = d.backward(&tr_g, &gg, None, true).expect("input grad requested");
                g_fake.add_assign(&gi);
                rec.gan = Some(l_gen);
                rec.total += a.lambda_gan * l_gen;
            }
            gdn.backward(&tr, &g_fake, Some(&mut grads), false);
        }

        if use_kreg {
            let (loss, kg) = kernel_regularizer(&layer_kernels(&gdn));
            for (i, k) in kg.iter().enumerate() {
                for (d, v) in grads.get_mut(i).iter_mut().zip(&k.data) {
                    *d += (a.lambda_kreg * v) as f32;
                }
            }
            rec.kreg = Some(loss);
            rec.total += a.lambda_kreg * loss;
        }

        opt.step(gdn.params_mut(), &grads, lr);
        trace.records.push(rec);
    }
    Ok(StageAOutput {
        gdn,
        ddn,
        trace,
        initial_kernel,
    })
}
