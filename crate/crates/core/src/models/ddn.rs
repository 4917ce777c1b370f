use rand::Rng;

use super::{check_shapes, he_normal, Network, NetworkKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::nn::{
    conv2d, conv2d_backward, leaky_relu, leaky_relu_backward, ConvCache, ConvGeometry, Grads,
    ParamStore, Scalar, Tensor, LEAKY_SLOPE,
};

/// Fully convolutional patch discriminator producing a per-pixel score map.
#[derive(Clone, Debug)]
pub struct Ddn<T> {
    spec: NetworkSpec,
    params: ParamStore<T>,
}

pub struct DdnTrace<T> {
    convs: Vec<ConvCache<T>>,
    pre_act: Vec<Tensor<T>>,
}

impl<T: Scalar> Ddn<T> {
    pub fn new<R: Rng + ?Sized>(width: usize, depth: usize, rng: &mut R) -> Result<Self> {
        let spec = NetworkSpec {
            kind: NetworkKind::Ddn,
            scale: 1,
            channels: 3,
            width,
            depth,
            gdn_kernel_sizes: Vec::new(),
            gdn_linear: false,
        };
        spec.validate()?;
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        let mut params = ParamStore::new();
        for (name, shape) in Self::expected_shapes(&spec)? {
            let len: usize = shape.iter().product();
            let data = if name.ends_with("bias") {
                vec![T::zero(); len]
            } else {
                he_normal(len, shape[1..].iter().product(), gain, rng)
            };
            params.push(name, shape, data);
        }
        Self::from_parts(spec, params)
    }

    fn geometry(&self, layer: usize) -> ConvGeometry {
        let s = &self.spec;
        let cin = if layer == 0 { s.channels } else { s.width };
        let cout = if layer == s.depth { 1 } else { s.width };
        ConvGeometry::same(cin, cout, 3)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_train(x).0
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, DdnTrace<T>) {
        let mut convs = Vec::with_capacity(self.spec.depth + 1);
        let mut pre_act = Vec::with_capacity(self.spec.depth);
        let mut h = x.clone();
        for layer in 0..=self.spec.depth {
            let (o, cache) = conv2d(
                &h,
                self.params.get(2 * layer),
                Some(self.params.get(2 * layer + 1)),
                self.geometry(layer),
            );
            convs.push(cache);
            h = if layer < self.spec.depth {
                let a = leaky_relu(&o);
                pre_act.push(o);
                a
            } else {
                o
            };
        }
        (h, DdnTrace { convs, pre_act })
    }

    pub fn backward(
        &self,
        trace: &DdnTrace<T>,
        grad: &Tensor<T>,
        mut grads: Option<&mut Grads<T>>,
        want_input: bool,
    ) -> Option<Tensor<T>> {
        let mut g = grad.clone();
        for layer in (0..=self.spec.depth).rev() {
            if layer < self.spec.depth {
                g = leaky_relu_backward(&trace.pre_act[layer], &g);
            }
            let (gw, gb) = match grads.as_deref_mut() {
                Some(gr) => {
                    let (a, b) = gr.pair_mut(2 * layer, 2 * layer + 1);
                    (Some(a), Some(b))
                }
                None => (None, None),
            };
            let need_input = want_input || layer > 0;
            match conv2d_backward(
                &trace.convs[layer],
                self.params.get(2 * layer),
                &g,
                gw,
                gb,
                need_input,
            ) {
                Some(gi) => g = gi,
                None => return None,
            }
        }
        Some(g)
    }
}

impl<T: Scalar> Network<T> for Ddn<T> {
    const KIND: NetworkKind = NetworkKind::Ddn;

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
        if spec.kind != NetworkKind::Ddn {
            return Err(Error::Kind {
                expected: NetworkKind::Ddn.to_string(),
                found: spec.kind.to_string(),
            });
        }
        let w = spec.width;
        let mut out = Vec::new();
        for i in 0..spec.depth {
            let cin = if i == 0 { spec.channels } else { w };
            out.push((format!("convs.{i}.weight"), vec![w, cin, 3, 3]));
            out.push((format!("convs.{i}.bias"), vec![w]));
        }
        out.push(("out.weight".to_string(), vec![1, w, 3, 3]));
        out.push(("out.bias".to_string(), vec![1]));
        Ok(out)
    }

    fn from_parts(spec: NetworkSpec, params: ParamStore<T>) -> Result<Self> {
        spec.validate()?;
        check_shapes(&Self::expected_shapes(&spec)?, &params)?;
        Ok(Ddn { spec, params })
    }
}
