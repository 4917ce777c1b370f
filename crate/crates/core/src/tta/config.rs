use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::DEFAULT_GDN_KERNELS;
use crate::seed::sha256_hex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegraderMode {
    Bicubic,
    Learned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageALoss {
    BwdCycle,
    FwdCycle,
    Gan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageBLoss {
    DownUp,
    UpDown,
}

/// Named parameter presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Iteration counts and learning rates as published, for large GUPs.
    Paper,
    /// Scaled for the compact GUP on a laptop CPU.
    Desk,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!(
                "unknown profile `{other}` (expected paper or desk)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageAConfig {
    pub losses: Vec<StageALoss>,
    pub iters: u64,
    pub lr: f64,
    /// Multiplies `lr`; the "raise the learning rate ×10" knob.
    pub lr_multiplier: f64,
    pub lr_step: u64,
    pub lr_decay: f64,
    pub lambda_bwd: f64,
    pub lambda_fwd: f64,
    pub lambda_gan: f64,
    pub lambda_kreg: f64,
    pub ddn_lr: f64,
    pub ddn_width: usize,
    pub ddn_depth: usize,
    pub gdn_kernel_sizes: Vec<usize>,
    pub gdn_linear: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageBConfig {
    pub losses: Vec<StageBLoss>,
    pub iters: u64,
    pub lr: f64,
    pub lr_multiplier: f64,
    pub lr_step: u64,
    pub lr_decay: f64,
    pub lambda_du: f64,
    pub lambda_ud: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationConfig {
    pub degrader_mode: DegraderMode,
    pub stage_a: StageAConfig,
    pub stage_b: StageBConfig,
    pub patch: usize,
    pub scale: usize,
    pub seed: u64,
    /// Skip both stages; the output is the frozen GUP's.
    pub dry_run: bool,
    /// Inference tile size in LR pixels; 0 disables tiling.
    pub tile: usize,
    pub overlap: usize,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl AdaptationConfig {
    pub fn paper() -> Self {
        AdaptationConfig {
            degrader_mode: DegraderMode::Learned,
            stage_a: StageAConfig {
                losses: vec![StageALoss::BwdCycle, StageALoss::FwdCycle, StageALoss::Gan],
                iters: 3000,
                lr: 2e-3,
                lr_multiplier: 1.0,
                lr_step: 750,
                lr_decay: 0.25,
                lambda_bwd: 1.0,
                lambda_fwd: 1.0,
                lambda_gan: 0.1,
                lambda_kreg: 0.5,
                ddn_lr: 2e-4,
                ddn_width: 32,
                ddn_depth: 3,
                gdn_kernel_sizes: DEFAULT_GDN_KERNELS.to_vec(),
                gdn_linear: true,
            },
            stage_b: StageBConfig {
                losses: vec![StageBLoss::DownUp, StageBLoss::UpDown],
                iters: 1000,
                lr: 2e-7,
                lr_multiplier: 1.0,
                lr_step: 100,
                lr_decay: 0.5,
                lambda_du: 1.0,
                lambda_ud: 1.0,
            },
            patch: 48,
            scale: 2,
            seed: 0,
            dry_run: false,
            tile: 0,
            overlap: 16,
        }
    }

    pub fn desk() -> Self {
        let mut c = Self::paper();
        c.stage_a.iters = 600;
        c.stage_a.lr_step = 150;
        c.stage_a.ddn_width = 16;
        c.stage_b.iters = 300;
        c.stage_b.lr = 1e-5;
        c
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scale < 2 {
            return bad(format!("scale {} must be at least 2", self.scale));
        }
        if self.patch == 0 || self.patch % self.scale != 0 {
            return bad(format!(
                "patch {} must be a positive multiple of scale {}",
                self.patch, self.scale
            ));
        }
        let a = &self.stage_a;
        let b = &self.stage_b;
        let lambdas = [
            ("lambda_bwd", a.lambda_bwd),
            ("lambda_fwd", a.lambda_fwd),
            ("lambda_gan", a.lambda_gan),
            ("lambda_kreg", a.lambda_kreg),
            ("lambda_du", b.lambda_du),
            ("lambda_ud", b.lambda_ud),
        ];
        for (name, v) in lambdas {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        for (name, lr, mult, step, decay) in [
            ("stage_a", a.lr, a.lr_multiplier, a.lr_step, a.lr_decay),
            ("stage_b", b.lr, b.lr_multiplier, b.lr_step, b.lr_decay),
        ] {
            if !(lr.is_finite() && lr >= 0.0 && mult.is_finite() && mult > 0.0) {
                return bad(format!("{name} learning rate must be finite and non-negative"));
            }
            if step == 0 {
                return bad(format!("{name}.lr_step must be at least 1"));
            }
            if !(decay > 0.0 && decay <= 1.0) {
                return bad(format!("{name}.lr_decay {decay} must lie in (0, 1]"));
            }
        }
        if !(a.ddn_lr.is_finite() && a.ddn_lr >= 0.0) {
            return bad("stage_a.ddn_lr must be finite and non-negative".into());
        }
        if a.gdn_kernel_sizes.is_empty() || a.gdn_kernel_sizes.iter().any(|k| k % 2 == 0) {
            return bad("stage_a.gdn_kernel_sizes must be non-empty and odd".into());
        }
        if !self.dry_run {
            if b.losses.is_empty() {
                return bad("at least one stage_b loss must be enabled".into());
            }
            if self.degrader_mode == DegraderMode::Learned && a.losses.is_empty() {
                return bad("learned degrader needs at least one stage_a loss".into());
            }
        }
        if a.losses.contains(&StageALoss::Gan) && a.ddn_width < 8 {
            return bad(format!("ddn_width {} must be at least 8", a.ddn_width));
        }
        if self.tile > 0 && self.tile <= 2 * self.overlap {
            return bad(format!(
                "tile {} must exceed twice the overlap {}",
                self.tile, self.overlap
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn has_a(&self, l: StageALoss) -> bool {
        self.stage_a.losses.contains(&l)
    }

    pub fn has_b(&self, l: StageBLoss) -> bool {
        self.stage_b.losses.contains(&l)
    }

    /// Short toggle-set label, e.g. `A:bwd+gan|B:du+ud`.
    pub fn label(&self) -> String {
        if self.dry_run {
            return "frozen".into();
        }
        let a: Vec<&str> = if self.degrader_mode == DegraderMode::Bicubic {
            vec!["bicubic"]
        } else {
            let mut v: Vec<_> = self.stage_a.losses.clone();
            v.sort();
            v.dedup();
            v.iter()
                .map(|l| match l {
                    StageALoss::BwdCycle => "bwd",
                    StageALoss::FwdCycle => "fwd",
                    StageALoss::Gan => "gan",
                })
                .collect()
        };
        let mut b = self.stage_b.losses.clone();
        b.sort();
        b.dedup();
        let b: Vec<&str> = b
            .iter()
            .map(|l| match l {
                StageBLoss::DownUp => "du",
                StageBLoss::UpDown => "ud",
            })
            .collect();
        format!("A:{}|B:{}", a.join("+"), b.join("+"))
    }
}

/// Recursively merges `delta` into `base` (objects merge, everything else
/// replaces).
pub fn merge_json(base: &mut serde_json::Value, delta: &serde_json::Value) {
    match (base, delta) {
        (serde_json::Value::Object(b), serde_json::Value::Object(d)) => {
            for (k, v) in d {
                merge_json(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, d) => *b = d.clone(),
    }
}

impl AdaptationConfig {
    /// Applies a JSON delta and re-validates.
    pub fn with_delta(&self, delta: &serde_json::Value) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        merge_json(&mut v, delta);
        let c: AdaptationConfig =
            serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}
