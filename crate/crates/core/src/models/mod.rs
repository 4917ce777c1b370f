//! The three networks: GUP (super-resolver), GDN (learned downsampler) and
//! DDN (patch discriminator), plus pretraining and checkpoints.

mod checkpoint;
mod ddn;
mod gdn;
mod gup;
mod pretrain;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Scalar};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, TrainingMetadata, WeightInfo,
    CHECKPOINT_FORMAT_VERSION,
};
pub use ddn::{Ddn, DdnTrace};
pub use gdn::{collapse_gdn_kernel, Gdn, GdnTrace, DEFAULT_GDN_KERNELS};
pub use gup::{Gup, GupTrace, RESIDUAL_SCALE};
pub use pretrain::{pretrain_gup, pretrain_on_pairs, PretrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Gup,
    Gdn,
    Ddn,
}

impl std::fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NetworkKind::Gup => "gup",
            NetworkKind::Gdn => "gdn",
            NetworkKind::Ddn => "ddn",
        })
    }
}

/// Architecture description stored alongside the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    pub scale: usize,
    pub channels: usize,
    pub width: usize,
    pub depth: usize,
    #[serde(default)]
    pub gdn_kernel_sizes: Vec<usize>,
    #[serde(default)]
    pub gdn_linear: bool,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::Parameter("scale must be at least 1".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Parameter(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        match self.kind {
            NetworkKind::Gup => {
                if !(2..=4).contains(&self.scale) {
                    return Err(Error::Unsupported(format!(
                        "GUP scale {} (supported: 2, 3, 4)",
                        self.scale
                    )));
                }
                if self.width == 0 {
                    return Err(Error::Parameter("GUP width must be positive".into()));
                }
            }
            NetworkKind::Gdn => {
                if self.gdn_kernel_sizes.is_empty() {
                    return Err(Error::Parameter("GDN needs at least one layer".into()));
                }
                if let Some(k) = self.gdn_kernel_sizes.iter().find(|k| **k % 2 == 0) {
                    return Err(Error::Parameter(format!("GDN kernel size {k} is even")));
                }
            }
            NetworkKind::Ddn => {
                if self.width < 8 {
                    return Err(Error::Parameter(format!(
                        "DDN width must be at least 8, got {}",
                        self.width
                    )));
                }
                if self.depth == 0 {
                    return Err(Error::Parameter("DDN depth must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// Common surface of the three networks, used for checkpointing.
pub trait Network<T: Scalar>: Sized {
    const KIND: NetworkKind;

    fn spec(&self) -> &NetworkSpec;
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;

    /// Names and shapes implied by `spec`, in storage order.
    fn expected_shapes(spec: &NetworkSpec) -> Result<Vec<(String, Vec<usize>)>>;

    /// Assembles a network from validated parameters.
    fn from_parts(spec: NetworkSpec, params: ParamStore<T>) -> Result<Self>;

    fn checksum(&self) -> String {
        self.params().checksum()
    }
}

/// He-normal initializer: `N(0, gain² / fan_in)`.
pub(crate) fn he_normal<T: Scalar, R: Rng + ?Sized>(
    len: usize,
    fan_in: usize,
    gain: f64,
    rng: &mut R,
) -> Vec<T> {
    let std = gain / (fan_in as f64).sqrt();
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z * std)
        })
        .collect()
}

/// Checks a parameter store against the shapes a spec implies.
pub(crate) fn check_shapes<T: Scalar>(
    expected: &[(String, Vec<usize>)],
    params: &ParamStore<T>,
) -> Result<()> {
    if params.len() != expected.len() {
        return Err(Error::Shape {
            name: "<parameter count>".into(),
            expected: vec![expected.len()],
            found: vec![params.len()],
        });
    }
    for ((name, shape), p) in expected.iter().zip(params.iter()) {
        if &p.name != name || &p.shape != shape {
            return Err(Error::Shape {
                name: name.clone(),
                expected: shape.clone(),
                found: p.shape.clone(),
            });
        }
    }
    Ok(())
}
