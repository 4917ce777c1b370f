use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, Gup, Network, TrainingMetadata};
use crate::degradation::BenchmarkManifest;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{l1_loss, lr_schedule, Adam, Grads};
use crate::patch::sample_aligned_pair;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub scale: usize,
    pub width: usize,
    pub depth: usize,
    pub iters: u64,
    pub lr: f64,
    pub lr_step: u64,
    pub lr_decay: f64,
    pub batch: usize,
    /// LR-side patch size.
    pub patch: usize,
    pub augment: bool,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            scale: 2,
            width: 16,
            depth: 3,
            iters: 2000,
            lr: 1e-3,
            lr_step: 800,
            lr_decay: 0.5,
            batch: 4,
            patch: 24,
            augment: true,
            seed: 0,
            log_every: 200,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.patch == 0 {
            return Err(Error::Config("batch and patch must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// Pretrains a GUP with L1 loss on every pair of a manifest whose scale
/// matches the config.
pub fn pretrain_gup(manifest: &BenchmarkManifest, cfg: &PretrainConfig) -> Result<Checkpoint> {
    let mut pairs = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.spec.scale == cfg.scale) {
        pairs.push(manifest.load_pair(e)?);
    }
    if pairs.is_empty() {
        return Err(Error::Config(format!(
            "manifest has no pairs at scale {}",
            cfg.scale
        )));
    }
    pretrain_on_pairs(&pairs, cfg)
}

/// Pretrains on in-memory `(lr, hr)` pairs.
pub fn pretrain_on_pairs(pairs: &[(Image, Image)], cfg: &PretrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gup = Gup::<f32>::new(cfg.scale, cfg.width, cfg.depth, &mut rng)?;
    let mut adam = Adam::new(gup.params());
    let mut trace = Vec::with_capacity(cfg.iters as usize);
    for it in 0..cfg.iters {
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let (lr, hr) = &pairs[rng.random_range(0..pairs.len())];
            let (p_lr, p_hr) = sample_aligned_pair(lr, hr, cfg.scale, cfg.patch, &mut rng, cfg.augment)?;
            batch.push((p_lr.image.to_tensor::<f32>(), p_hr.image.to_tensor::<f32>()));
        }
        let results: Vec<(f64, Grads<f32>)> = batch
            .par_iter()
            .map(|(x, y)| {
                let (pred, tr) = gup.forward_train(x);
                let (loss, g) = l1_loss(&pred, y);
                let mut grads = gup.params().zero_grads();
                gup.backward(&tr, &g, Some(&mut grads), false);
                (loss, grads)
            })
            .collect();
        let mut total = gup.params().zero_grads();
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            for (acc, v) in total.0.iter_mut().flatten().zip(g.0.iter().flatten()) {
                *acc += *v;
            }
        }
        let inv = 1.0 / cfg.batch as f64;
        total.scale(inv as f32);
        loss *= inv;
        let lr = lr_schedule(cfg.lr, cfg.lr_decay, cfg.lr_step, it);
        adam.step(gup.params_mut(), &total, lr);
        trace.push(loss);
        if cfg.log_every > 0 && (it + 1) % cfg.log_every == 0 {
            log::info!("pretrain iter {} loss {:.5} lr {:.2e}", it + 1, loss, lr);
        }
    }
    let meta = TrainingMetadata {
        iterations: cfg.iters,
        seed: cfg.seed,
        final_loss: trace.last().copied(),
        loss_trace: trace,
        note: "pretrain".into(),
    };
    Ok(Checkpoint::from_network(&gup, meta))
}
