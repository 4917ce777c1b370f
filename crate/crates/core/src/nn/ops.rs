use super::{Scalar, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
    y
}

/// Gradient of ReLU given the forward *input*.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let mut g = grad.clone();
    g.data
        .iter_mut()
        .zip(&input.data)
        .for_each(|(g, &x)| {
            if x <= T::zero() {
                *g = T::zero()
            }
        });
    g
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let slope = T::lit(LEAKY_SLOPE);
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = *v * slope
        }
    });
    y
}

pub fn leaky_relu_backward<T: Scalar>(input: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let slope = T::lit(LEAKY_SLOPE);
    let mut g = grad.clone();
    g.data
        .iter_mut()
        .zip(&input.data)
        .for_each(|(g, &x)| {
            if x < T::zero() {
                *g = *g * slope
            }
        });
    g
}

/// Depth-to-space: `[C·s², h, w] → [C, s·h, s·w]`; channel `c·s² + dy·s + dx`
/// lands at sub-pixel offset `(dy, dx)`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Tensor<T> {
    assert_eq!(x.channels % (s * s), 0, "pixel shuffle channel count");
    let c_out = x.channels / (s * s);
    let (h, w) = (x.height, x.width);
    let mut out = Tensor::zeros(c_out, h * s, w * s);
    let ow = w * s;
    for c in 0..c_out {
        for dy in 0..s {
            for dx in 0..s {
                let src = x.plane(c * s * s + dy * s + dx);
                let dst = out.plane_mut(c);
                for y in 0..h {
                    let row = (y * s + dy) * ow;
                    for xx in 0..w {
                        dst[row + xx * s + dx] = src[y * w + xx];
                    }
                }
            }
        }
    }
    out
}

pub fn pixel_shuffle_backward<T: Scalar>(grad: &Tensor<T>, s: usize) -> Tensor<T> {
    let (h, w) = (grad.height / s, grad.width / s);
    let mut out = Tensor::zeros(grad.channels * s * s, h, w);
    let gw = grad.width;
    for c in 0..grad.channels {
        for dy in 0..s {
            for dx in 0..s {
                let src = grad.plane(c);
                let mut dst = vec![T::zero(); h * w];
                for y in 0..h {
                    let row = (y * s + dy) * gw;
                    for xx in 0..w {
                        dst[y * w + xx] = src[row + xx * s + dx];
                    }
                }
                out.plane_mut(c * s * s + dy * s + dx).copy_from_slice(&dst);
            }
        }
    }
    out
}

/// Mirror index without edge repetition (`-1 → 1`, `n → n-2`), valid for
/// any offset.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

pub fn reflect_pad<T: Scalar>(x: &Tensor<T>, pad: usize) -> Tensor<T> {
    let (h, w) = (x.height + 2 * pad, x.width + 2 * pad);
    let mut out = Tensor::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            let sy = reflect_index(y as isize - pad as isize, x.height);
            for xx in 0..w {
                let sx = reflect_index(xx as isize - pad as isize, x.width);
                dst[y * w + xx] = src[sy * x.width + sx];
            }
        }
    }
    out
}

/// Adjoint of [`reflect_pad`]: folds padded gradients back onto their sources.
pub fn reflect_pad_backward<T: Scalar>(
    grad: &Tensor<T>,
    pad: usize,
    height: usize,
    width: usize,
) -> Tensor<T> {
    let mut out = Tensor::zeros(grad.channels, height, width);
    for c in 0..grad.channels {
        let src = grad.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..grad.height {
            let sy = reflect_index(y as isize - pad as isize, height);
            for xx in 0..grad.width {
                let sx = reflect_index(xx as isize - pad as isize, width);
                dst[sy * width + sx] += src[y * grad.width + xx];
            }
        }
    }
    out
}

/// Keeps every `stride`-th sample starting at `phase` along both axes.
pub fn subsample<T: Scalar>(x: &Tensor<T>, stride: usize, phase: usize) -> Tensor<T> {
    let h = (x.height - phase).div_ceil(stride);
    let w = (x.width - phase).div_ceil(stride);
    let mut out = Tensor::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] = src[(y * stride + phase) * x.width + xx * stride + phase];
            }
        }
    }
    out
}

pub fn subsample_backward<T: Scalar>(
    grad: &Tensor<T>,
    stride: usize,
    phase: usize,
    height: usize,
    width: usize,
) -> Tensor<T> {
    let mut out = Tensor::zeros(grad.channels, height, width);
    for c in 0..grad.channels {
        let src = grad.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..grad.height {
            for xx in 0..grad.width {
                dst[(y * stride + phase) * width + xx * stride + phase] = src[y * grad.width + xx];
            }
        }
    }
    out
}

/// Mean absolute error and its gradient with respect to `pred`.
///
/// The subgradient at zero difference is taken as zero.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> (f64, Tensor<T>) {
    assert!(pred.same_shape(target), "l1 loss shape mismatch");
    let n = pred.data.len() as f64;
    let inv = T::lit(1.0 / n);
    let mut grad = Tensor::zeros(pred.channels, pred.height, pred.width);
    let mut total = 0.0f64;
    for ((g, &p), &t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        total += d.abs().to_f64().unwrap();
        *g = if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        };
    }
    (total / n, grad)
}

/// Mean of `(x - target)²` over all elements, with gradient.
pub fn mse_to_target<T: Scalar>(x: &Tensor<T>, target: f64) -> (f64, Tensor<T>) {
    let n = x.data.len() as f64;
    let t = T::lit(target);
    let scale = T::lit(2.0 / n);
    let mut grad = x.clone();
    let mut total = 0.0;
    for g in grad.data.iter_mut() {
        let d = *g - t;
        total += (d * d).to_f64().unwrap();
        *g = scale * d;
    }
    (total / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|i| i as f64 * 0.37 - 3.0).collect())
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn reflect_index_mirrors_without_repeat() {
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn pixel_shuffle_round_trip() {
        let x = seq(12, 3, 4);
        let y = pixel_shuffle(&x, 2);
        assert_eq!((y.channels, y.height, y.width), (3, 6, 8));
        assert_eq!(pixel_shuffle_backward(&y, 2), x);
        // channel 1 of group 0 is sub-pixel (0, 1)
        assert_eq!(y.at(0, 0, 1), x.at(1, 0, 0));
    }

    #[test]
    fn pad_and_subsample_adjoints() {
        let x = seq(2, 5, 6);
        let p = reflect_pad(&x, 3);
        let g = seq(2, 11, 12);
        assert!((dot(&p, &g) - dot(&x, &reflect_pad_backward(&g, 3, 5, 6))).abs() < 1e-9);

        let s = subsample(&x, 2, 1);
        assert_eq!((s.height, s.width), (2, 3));
        let gs = seq(2, 2, 3);
        assert!((dot(&s, &gs) - dot(&x, &subsample_backward(&gs, 2, 1, 5, 6))).abs() < 1e-9);
    }
}
