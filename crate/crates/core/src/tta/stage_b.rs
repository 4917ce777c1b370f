//! Stage B: fine-tune the GUP against a frozen degrader.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{AdaptationConfig, StageBLoss};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::models::{Gdn, GdnTrace, Gup, Network};
use crate::nn::{l1_loss, lr_schedule, Adam, Tensor};
use crate::patch::sample_patch;
use crate::resample::Bicubic;

/// The frozen operator mapping a GUP-scale image back down.
#[derive(Clone, Copy)]
pub enum Degrader<'a> {
    /// Bicubic resampling by `1/scale`.
    Bicubic { scale: usize },
    Learned(&'a Gdn<f32>),
}

pub enum DegraderTrace {
    Bicubic(Bicubic),
    Learned(GdnTrace<f32>),
}

impl Degrader<'_> {
    pub fn apply(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn forward_train(&self, x: &Tensor<f32>) -> Result<(Tensor<f32>, DegraderTrace)> {
        match *self {
            Degrader::Bicubic { scale } => {
                let op = Bicubic::new(x.height, x.width, 1.0 / scale as f64)?;
                Ok((op.apply(x), DegraderTrace::Bicubic(op)))
            }
            Degrader::Learned(g) => {
                let (y, tr) = g.forward_train(x);
                Ok((y, DegraderTrace::Learned(tr)))
            }
        }
    }

    /// Gradient with respect to the degrader's input.
    pub fn backward_input(&self, trace: &DegraderTrace, grad: &Tensor<f32>) -> Tensor<f32> {
        match (self, trace) {
            (Degrader::Bicubic { .. }, DegraderTrace::Bicubic(op)) => op.adjoint(grad),
            (Degrader::Learned(g), DegraderTrace::Learned(tr)) => {
                g.backward(tr, grad, None, true).expect("input grad requested")
            }
            _ => panic!("degrader trace does not match degrader"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageBRecord {
    pub iter: u64,
    pub lr: f64,
    pub down_up: Option<f64>,
    pub up_down: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageBTrace {
    pub records: Vec<StageBRecord>,
}

/// Fine-tunes `gup` in place on patches of `test_lr`.
///
/// The rng yields exactly one patch per iteration.
pub fn finetune_gup<R: Rng + ?Sized>(
    test_lr: &Image,
    gup: &mut Gup<f32>,
    degrader: Degrader<'_>,
    cfg: &AdaptationConfig,
    rng: &mut R,
) -> Result<StageBTrace> {
    let b = &cfg.stage_b;
    if b.losses.is_empty() {
        return Err(Error::Config("no stage B loss enabled".into()));
    }
    let use_du = cfg.has_b(StageBLoss::DownUp);
    let use_ud = cfg.has_b(StageBLoss::UpDown);
    let mut opt = Adam::new(gup.params());
    let mut trace = StageBTrace::default();
    for it in 0..b.iters {
        let p = sample_patch(test_lr, cfg.patch, rng, false)?.image.to_tensor::<f32>();
        let lr = lr_schedule(b.lr * b.lr_multiplier, b.lr_decay, b.lr_step, it);
        let mut grads = gup.params().zero_grads();
        let mut rec = StageBRecord {
            iter: it,
            lr,
            down_up: None,
            up_down: None,
            total: 0.0,
        };
        if use_du {
            let low = degrader.apply(&p)?;
            let (up, tr) = gup.forward_train(&low);
            let (loss, mut g) = l1_loss(&up, &p);
            g.scale(b.lambda_du as f32);
            gup.backward(&tr, &g, Some(&mut grads), false);
            rec.down_up = Some(loss);
            rec.total += b.lambda_du * loss;
        }
        if use_ud {
            let (up, tr) = gup.forward_train(&p);
            let (down, dtr) = degrader.forward_train(&up)?;
            let (loss, mut g) = l1_loss(&down, &p);
            g.scale(b.lambda_ud as f32);
            let gu = degrader.backward_input(&dtr, &g);
            gup.backward(&tr, &gu, Some(&mut grads), false);
            rec.up_down = Some(loss);
            rec.total += b.lambda_ud * loss;
        }
        opt.step(gup.params_mut(), &grads, lr);
        trace.records.push(rec);
    }
    Ok(trace)
}
