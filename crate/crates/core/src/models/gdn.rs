use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{check_shapes, Network, NetworkKind, NetworkSpec};
use crate::degradation::{subsample_phase, Kernel2d};
use crate::error::{Error, Result};
use crate::nn::{
    conv2d, conv2d_backward, leaky_relu, leaky_relu_backward, reflect_pad, reflect_pad_backward,
    subsample, subsample_backward, ConvCache, ConvGeometry, Grads, ParamStore, Scalar, Tensor,
};

pub const DEFAULT_GDN_KERNELS: [usize; 5] = [7, 5, 3, 1, 1];

/// Std of the perturbation added to the first layer at initialization.
const INIT_NOISE: f64 = 1e-3;

/// Learned downsampler: a stack of single-channel bias-free convolutions
/// shared across color channels, followed by stride-`s` subsampling.
///
/// Each layer is a true convolution, and the input is reflect-padded once
/// by the total radius, so the linear network equals blurring with the
/// full convolution of its layers and subsampling.
#[derive(Clone, Debug)]
pub struct Gdn<T> {
    spec: NetworkSpec,
    params: ParamStore<T>,
}

struct ChannelTrace<T> {
    layers: Vec<ConvCache<T>>,
    pre_act: Vec<Tensor<T>>,
}

pub struct GdnTrace<T> {
    in_h: usize,
    in_w: usize,
    full_h: usize,
    full_w: usize,
    channels: Vec<ChannelTrace<T>>,
}

fn flip<T: Scalar>(w: &[T]) -> Vec<T> {
    w.iter().rev().copied().collect()
}

impl<T: Scalar> Gdn<T> {
    pub fn new<R: Rng + ?Sized>(
        scale: usize,
        kernel_sizes: &[usize],
        linear: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            kind: NetworkKind::Gdn,
            scale,
            channels: 3,
            width: 1,
            depth: kernel_sizes.len(),
            gdn_kernel_sizes: kernel_sizes.to_vec(),
            gdn_linear: linear,
        };
        spec.validate()?;
        let noise = Normal::new(0.0, INIT_NOISE).expect("finite std");
        let mut params = ParamStore::new();
        for (i, (name, shape)) in Self::expected_shapes(&spec)?.into_iter().enumerate() {
            let k = shape[2];
            let mut data = vec![T::zero(); k * k];
            data[k * k / 2] = T::one();
            if i == 0 {
                for v in &mut data {
                    *v += T::lit(noise.sample(rng));
                }
            }
            params.push(name, shape, data);
        }
        Self::from_parts(spec, params)
    }

    pub fn scale(&self) -> usize {
        self.spec.scale
    }

    pub fn is_linear(&self) -> bool {
        self.spec.gdn_linear
    }

    /// Total padding: the sum of the layer radii.
    pub fn radius(&self) -> usize {
        self.spec.gdn_kernel_sizes.iter().map(|k| k / 2).sum()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_train(x).0
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, GdnTrace<T>) {
        let s = self.spec.scale;
        let pad = self.radius();
        let last = self.params.len() - 1;
        let mut outs = Vec::with_capacity(x.channels);
        let mut traces = Vec::with_capacity(x.channels);
        for c in 0..x.channels {
            let mut h = reflect_pad(&x.channel(c), pad);
            let mut layers = Vec::new();
            let mut pre_act = Vec::new();
            for (i, p) in self.params.iter().enumerate() {
                let k = p.shape[2];
                let (o, cache) = conv2d(&h, &flip(&p.data), None, ConvGeometry::valid(1, 1, k));
                layers.push(cache);
                h = if !self.spec.gdn_linear && i < last {
                    let a = leaky_relu(&o);
                    pre_act.push(o);
                    a
                } else {
                    o
                };
            }
            outs.push(h);
            traces.push(ChannelTrace { layers, pre_act });
        }
        let full = Tensor::stack(&outs);
        let (full_h, full_w) = (full.height, full.width);
        (
            subsample(&full, s, subsample_phase(s)),
            GdnTrace {
                in_h: x.height,
                in_w: x.width,
                full_h,
                full_w,
                channels: traces,
            },
        )
    }

    pub fn backward(
        &self,
        trace: &GdnTrace<T>,
        grad: &Tensor<T>,
        mut grads: Option<&mut Grads<T>>,
        want_input: bool,
    ) -> Option<Tensor<T>> {
        let s = self.spec.scale;
        let gfull = subsample_backward(grad, s, subsample_phase(s), trace.full_h, trace.full_w);
        let last = self.params.len() - 1;
        let mut gins = Vec::with_capacity(trace.channels.len());
        for (c, ct) in trace.channels.iter().enumerate() {
            let mut g = gfull.channel(c);
            for i in (0..self.params.len()).rev() {
                if !self.spec.gdn_linear && i < last {
                    g = leaky_relu_backward(&ct.pre_act[i], &g);
                }
                let w = flip(self.params.get(i));
                let mut gw = vec![T::zero(); w.len()];
                let need_input = want_input || i > 0;
                let gi = conv2d_backward(
                    &ct.layers[i],
                    &w,
                    &g,
                    grads.is_some().then_some(gw.as_mut_slice()),
                    None,
                    need_input,
                );
                if let Some(gr) = grads.as_deref_mut() {
                    for (d, v) in gr.get_mut(i).iter_mut().zip(gw.iter().rev()) {
                        *d += *v;
                    }
                }
                match gi {
                    Some(gi) => g = gi,
                    None => break,
                }
            }
            if want_input {
                gins.push(reflect_pad_backward(&g, self.radius(), trace.in_h, trace.in_w));
            }
        }
        want_input.then(|| Tensor::stack(&gins))
    }

    /// The equivalent single blur kernel of a linear network.
    pub fn collapsed_kernel(&self) -> Result<Kernel2d> {
        if !self.spec.gdn_linear {
            return Err(Error::Unsupported(
                "kernel extraction needs a linear GDN".into(),
            ));
        }
        let mut it = self.params.iter().map(|p| {
            let k = p.shape[2];
            Kernel2d::new(k, p.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
        });
        let first = it.next().expect("at least one layer");
        Ok(it.fold(first, |acc, k| acc.convolve(&k)))
    }

    pub fn cast<U: Scalar>(&self) -> Gdn<U> {
        Gdn::from_parts(self.spec.clone(), self.params.cast()).expect("same spec")
    }
}

/// Free-function form of [`Gdn::collapsed_kernel`].
pub fn collapse_gdn_kernel<T: Scalar>(gdn: &Gdn<T>) -> Result<Kernel2d> {
    gdn.collapsed_kernel()
}

impl<T: Scalar> Network<T> for Gdn<T> {
    const KIND: NetworkKind = NetworkKind::Gdn;

    fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn expected_shapes(spec: &NetworkSpec) -> Result<Vec<(String, Vec<usize>)>> {
        if spec.kind != NetworkKind::Gdn {
            return Err(Error::Kind {
                expected: NetworkKind::Gdn.to_string(),
                found: spec.kind.to_string(),
            });
        }
        Ok(spec
            .gdn_kernel_sizes
            .iter()
            .enumerate()
            .map(|(i, &k)| (format!("layers.{i}.weight"), vec![1, 1, k, k]))
            .collect())
    }

    fn from_parts(spec: NetworkSpec, params: ParamStore<T>) -> Result<Self> {
        spec.validate()?;
        check_shapes(&Self::expected_shapes(&spec)?, &params)?;
        Ok(Gdn { spec, params })
    }
}
