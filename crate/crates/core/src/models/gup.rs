use rand::Rng;

use super::{check_shapes, he_normal, Network, NetworkKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::nn::{
    conv2d, conv2d_backward, pixel_shuffle, pixel_shuffle_backward, relu, relu_backward,
    ConvCache, ConvGeometry, Grads, ParamStore, Scalar, Tensor,
};
use crate::resample::Bicubic;

/// Scale applied to each residual block's branch.
pub const RESIDUAL_SCALE: f64 = 0.1;

#[derive(Clone, Debug)]
struct BlockIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Compact residual super-resolver.
///
/// `conv3×3 → depth × [conv–ReLU–conv, ×0.1 residual] → conv3×3(width → C·s²)
/// → depth-to-space`, plus a global bicubic-upsampling skip. The last conv
/// starts at zero, so a fresh network is exactly the bicubic operator.
#[derive(Clone, Debug)]
pub struct Gup<T> {
    spec: NetworkSpec,
    params: ParamStore<T>,
    head: (usize, usize),
    blocks: Vec<BlockIdx>,
    tail: (usize, usize),
}

struct BlockTrace<T> {
    conv1: ConvCache<T>,
    pre_relu: Tensor<T>,
    conv2: ConvCache<T>,
}

/// Saved activations of one [`Gup::forward_train`] call.
pub struct GupTrace<T> {
    head: ConvCache<T>,
    blocks: Vec<BlockTrace<T>>,
    tail: ConvCache<T>,
    skip: Bicubic,
}

impl<T: Scalar> Gup<T> {
    /// Builds a fresh RGB network.
    pub fn new<R: Rng + ?Sized>(scale: usize, width: usize, depth: usize, rng: &mut R) -> Result<Self> {
        Self::with_channels(3, scale, width, depth, rng)
    }

    pub fn with_channels<R: Rng + ?Sized>(
        channels: usize,
        scale: usize,
        width: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            kind: NetworkKind::Gup,
            scale,
            channels,
            width,
            depth,
            gdn_kernel_sizes: Vec::new(),
            gdn_linear: false,
        };
        spec.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in Self::expected_shapes(&spec)? {
            let len: usize = shape.iter().product();
            let data = if name.ends_with("bias") || name.starts_with("tail") {
                vec![T::zero(); len]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                he_normal(len, fan_in, 2f64.sqrt(), rng)
            };
            params.push(name, shape, data);
        }
        Self::from_parts(spec, params)
    }

    fn geom(&self) -> (ConvGeometry, ConvGeometry, ConvGeometry) {
        let s = &self.spec;
        (
            ConvGeometry::same(s.channels, s.width, 3),
            ConvGeometry::same(s.width, s.width, 3),
            ConvGeometry::same(s.width, s.channels * s.scale * s.scale, 3),
        )
    }

    pub fn scale(&self) -> usize {
        self.spec.scale
    }

    /// Radius (in input pixels) beyond which inputs cannot affect an output.
    pub fn receptive_radius(&self) -> usize {
        // head + two convs per block + tail, and the bicubic skip reaches 2
        (2 + 2 * self.spec.depth).max(2)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_train(x).0
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, GupTrace<T>) {
        assert_eq!(x.channels, self.spec.channels, "GUP input channels");
        let (g_head, g_body, g_tail) = self.geom();
        let s = self.spec.scale;
        let skip = Bicubic::new(x.height, x.width, s as f64).expect("positive scale");
        let (mut feat, head) = conv2d(
            x,
            self.params.get(self.head.0),
            Some(self.params.get(self.head.1)),
            g_head,
        );
        let res = T::lit(RESIDUAL_SCALE);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (pre_relu, conv1) =
                conv2d(&feat, self.params.get(b.w1), Some(self.params.get(b.b1)), g_body);
            let (branch, conv2) = conv2d(
                &relu(&pre_relu),
                self.params.get(b.w2),
                Some(self.params.get(b.b2)),
                g_body,
            );
            feat.add_scaled(&branch, res);
            blocks.push(BlockTrace {
                conv1,
                pre_relu,
                conv2,
            });
        }
        let (t, tail) = conv2d(
            &feat,
            self.params.get(self.tail.0),
            Some(self.params.get(self.tail.1)),
            g_tail,
        );
        let mut y = pixel_shuffle(&t, s);
        y.add_assign(&skip.apply(x));
        (
            y,
            GupTrace {
                head,
                blocks,
                tail,
                skip,
            },
        )
    }

    /// Backpropagates `grad` (w.r.t. the output).
    ///
    /// Weight gradients are accumulated into `grads` when given; the input
    /// gradient is returned when `want_input` is set.
    pub fn backward(
        &self,
        trace: &GupTrace<T>,
        grad: &Tensor<T>,
        mut grads: Option<&mut Grads<T>>,
        want_input: bool,
    ) -> Option<Tensor<T>> {
        let s = self.spec.scale;
        let gt = pixel_shuffle_backward(grad, s);
        let mut gfeat = {
            let (gw, gb) = split(&mut grads, self.tail);
            conv2d_backward(&trace.tail, self.params.get(self.tail.0), &gt, gw, gb, true)
                .expect("input grad requested")
        };
        let res = T::lit(RESIDUAL_SCALE);
        for (b, bt) in self.blocks.iter().zip(&trace.blocks).rev() {
            let mut gbranch = gfeat.clone();
            gbranch.scale(res);
            let grelu = {
                let (gw, gb) = split(&mut grads, (b.w2, b.b2));
                conv2d_backward(&bt.conv2, self.params.get(b.w2), &gbranch, gw, gb, true)
                    .expect("input grad requested")
            };
            let gpre = relu_backward(&bt.pre_relu, &grelu);
            let gin = {
                let (gw, gb) = split(&mut grads, (b.w1, b.b1));
                conv2d_backward(&bt.conv1, self.params.get(b.w1), &gpre, gw, gb, true)
                    .expect("input grad requested")
            };
            gfeat.add_assign(&gin);
        }
        let (gw, gb) = split(&mut grads, self.head);
        let gx = conv2d_backward(&trace.head, self.params.get(self.head.0), &gfeat, gw, gb, want_input);
        gx.map(|mut gx| {
            gx.add_assign(&trace.skip.adjoint(grad));
            gx
        })
    }
}

fn split<'a, T: Scalar>(
    grads: &'a mut Option<&mut Grads<T>>,
    (w, b): (usize, usize),
) -> (Option<&'a mut [T]>, Option<&'a mut [T]>) {
    match grads {
        Some(g) => {
            let (gw, gb) = g.pair_mut(w, b);
            (Some(gw), Some(gb))
        }
        None => (None, None),
    }
}

impl<T: Scalar> Network<T> for Gup<T> {
    const KIND: NetworkKind = NetworkKind::Gup;

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
        if spec.kind != NetworkKind::Gup {
            return Err(Error::Kind {
                expected: NetworkKind::Gup.to_string(),
                found: spec.kind.to_string(),
            });
        }
        let (c, w, s) = (spec.channels, spec.width, spec.scale);
        let mut out = vec![
            ("head.weight".to_string(), vec![w, c, 3, 3]),
            ("head.bias".to_string(), vec![w]),
        ];
        for i in 0..spec.depth {
            out.push((format!("blocks.{i}.conv1.weight"), vec![w, w, 3, 3]));
            out.push((format!("blocks.{i}.conv1.bias"), vec![w]));
            out.push((format!("blocks.{i}.conv2.weight"), vec![w, w, 3, 3]));
            out.push((format!("blocks.{i}.conv2.bias"), vec![w]));
        }
        out.push(("tail.weight".to_string(), vec![c * s * s, w, 3, 3]));
        out.push(("tail.bias".to_string(), vec![c * s * s]));
        Ok(out)
    }

    fn from_parts(spec: NetworkSpec, params: ParamStore<T>) -> Result<Self> {
        spec.validate()?;
        check_shapes(&Self::expected_shapes(&spec)?, &params)?;
        let blocks = (0..spec.depth)
            .map(|i| BlockIdx {
                w1: 2 + 4 * i,
                b1: 3 + 4 * i,
                w2: 4 + 4 * i,
                b2: 5 + 4 * i,
            })
            .collect();
        let tail = (2 + 4 * spec.depth, 3 + 4 * spec.depth);
        Ok(Gup {
            spec,
            params,
            head: (0, 1),
            blocks,
            tail,
        })
    }
}

impl<T: Scalar> Gup<T> {
    pub fn cast<U: Scalar>(&self) -> Gup<U> {
        Gup::from_parts(self.spec.clone(), self.params.cast()).expect("same spec")
    }
}
