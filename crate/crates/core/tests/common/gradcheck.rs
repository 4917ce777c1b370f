//! Central finite-difference checks of every hand-written backward pass, in f64.
//! Each check panics on the first mismatch.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tta_sr::models::{Ddn, Gdn, Gup, Network};
use tta_sr::nn::{
    conv2d, conv2d_backward, l1_loss, leaky_relu, leaky_relu_backward, mse_to_target,
    pixel_shuffle, pixel_shuffle_backward, reflect_pad, reflect_pad_backward, relu,
    relu_backward, subsample, subsample_backward, ConvGeometry, Grads, Tensor,
};
use tta_sr::resample::Bicubic;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const PROBES: usize = 24;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(c: usize, h: usize, w: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| r.random_range(-1.0..1.0)).collect())
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert!(a.same_shape(b));
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

fn assert_grad(what: &str, idx: usize, analytic: f64, numeric: f64) {
    let denom = analytic.abs().max(numeric.abs()).max(1e-4);
    let rel = (analytic - numeric).abs() / denom;
    assert!(
        rel < TOL,
        "{what}[{idx}]: analytic {analytic:.10e} vs numeric {numeric:.10e} (rel {rel:.2e})"
    );
}

fn probes(n: usize, r: &mut ChaCha8Rng) -> Vec<usize> {
    sample(r, n, n.min(PROBES)).into_vec()
}

/// Checks `analytic` against the numeric gradient of `f` at `x`.
fn check_input(
    what: &str,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    f: impl Fn(&Tensor<f64>) -> f64,
    r: &mut ChaCha8Rng,
) {
    assert!(x.same_shape(analytic), "{what}: gradient shape");
    for i in probes(x.data.len(), r) {
        let mut p = x.clone();
        p.data[i] += STEP;
        let up = f(&p);
        p.data[i] -= 2.0 * STEP;
        let down = f(&p);
        assert_grad(what, i, analytic.data[i], (up - down) / (2.0 * STEP));
    }
}

/// Checks weight gradients of a network against numeric ones.
fn check_params<N: Network<f64> + Clone>(
    what: &str,
    net: &N,
    grads: &Grads<f64>,
    f: impl Fn(&N) -> f64,
    r: &mut ChaCha8Rng,
) {
    let names: Vec<String> = net.params().iter().map(|p| p.name.clone()).collect();
    for (pi, name) in names.iter().enumerate() {
        let g = grads.get(pi);
        for i in probes(g.len(), r) {
            let mut n = net.clone();
            n.params_mut().get_mut(pi)[i] += STEP;
            let up = f(&n);
            n.params_mut().get_mut(pi)[i] -= 2.0 * STEP;
            let down = f(&n);
            assert_grad(&format!("{what}.{name}"), i, g[i], (up - down) / (2.0 * STEP));
        }
    }
}

fn randomize<N: Network<f64>>(net: &mut N, scale: f64, r: &mut ChaCha8Rng) {
    for p in net.params_mut().iter_mut() {
        for v in p.data.iter_mut() {
            *v = r.random_range(-scale..scale);
        }
    }
}

pub fn conv2d_gradients() {
    let mut r = rng(1);
    for g in [ConvGeometry::same(2, 3, 3), ConvGeometry::valid(3, 2, 5), ConvGeometry::same(1, 1, 1)] {
        let x = random(g.in_channels, 9, 8, &mut r);
        let w: Vec<f64> = (0..g.weight_len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..g.out_channels).map(|_| r.random_range(-1.0..1.0)).collect();
        let (y, cache) = conv2d(&x, &w, Some(&b), g);
        let proj = random(y.channels, y.height, y.width, &mut r);
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; b.len()];
        let gx = conv2d_backward(&cache, &w, &proj, Some(&mut gw), Some(&mut gb), true).unwrap();

        let loss = |x: &Tensor<f64>, w: &[f64], b: &[f64]| dot(&proj, &conv2d(x, w, Some(b), g).0);
        check_input("conv.input", &x, &gx, |x| loss(x, &w, &b), &mut r);
        for i in probes(w.len(), &mut r) {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[i] += STEP;
            down[i] -= STEP;
            let n = (loss(&x, &up, &b) - loss(&x, &down, &b)) / (2.0 * STEP);
            assert_grad("conv.weight", i, gw[i], n);
        }
        for i in 0..b.len() {
            let (mut up, mut down) = (b.clone(), b.clone());
            up[i] += STEP;
            down[i] -= STEP;
            let n = (loss(&x, &w, &up) - loss(&x, &w, &down)) / (2.0 * STEP);
            assert_grad("conv.bias", i, gb[i], n);
        }
    }
}

/// Random inputs kept away from the kink at zero.
fn off_kink(c: usize, h: usize, w: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut x = random(c, h, w, r);
    for v in x.data.iter_mut() {
        if v.abs() < 0.01 {
            *v += 0.05;
        }
    }
    x
}

pub fn relu_gradients() {
    let mut r = rng(2);
    let x = off_kink(2, 6, 5, &mut r);
    let proj = random(2, 6, 5, &mut r);
    let gx = relu_backward(&x, &proj);
    check_input("relu", &x, &gx, |x| dot(&proj, &relu(x)), &mut r);
}

pub fn leaky_relu_gradients() {
    let mut r = rng(3);
    let x = off_kink(2, 6, 5, &mut r);
    let proj = random(2, 6, 5, &mut r);
    let gx = leaky_relu_backward(&x, &proj);
    check_input("leaky_relu", &x, &gx, |x| dot(&proj, &leaky_relu(x)), &mut r);
}

pub fn pixel_shuffle_gradients() {
    let mut r = rng(4);
    for s in [2, 3] {
        let x = random(2 * s * s, 4, 3, &mut r);
        let proj = random(2, 4 * s, 3 * s, &mut r);
        let gx = pixel_shuffle_backward(&proj, s);
        check_input("pixel_shuffle", &x, &gx, |x| dot(&proj, &pixel_shuffle(x, s)), &mut r);
    }
}

pub fn reflect_pad_gradients() {
    let mut r = rng(5);
    let x = random(2, 7, 6, &mut r);
    for pad in [1, 3, 5] {
        let proj = random(2, 7 + 2 * pad, 6 + 2 * pad, &mut r);
        let gx = reflect_pad_backward(&proj, pad, 7, 6);
        check_input("reflect_pad", &x, &gx, |x| dot(&proj, &reflect_pad(x, pad)), &mut r);
    }
}

pub fn subsample_gradients() {
    let mut r = rng(6);
    let x = random(2, 9, 8, &mut r);
    for (stride, phase) in [(2, 0), (3, 1), (4, 1)] {
        let y = subsample(&x, stride, phase);
        let proj = random(y.channels, y.height, y.width, &mut r);
        let gx = subsample_backward(&proj, stride, phase, 9, 8);
        check_input("subsample", &x, &gx, |x| dot(&proj, &subsample(x, stride, phase)), &mut r);
    }
}

pub fn bicubic_gradients() {
    let mut r = rng(7);
    for (h, w, scale) in [(6, 5, 2.0), (12, 10, 0.5), (9, 9, 1.0 / 3.0), (5, 4, 4.0)] {
        let op = Bicubic::new(h, w, scale).unwrap();
        let (oh, ow) = op.output_size();
        let x = random(3, h, w, &mut r);
        let proj = random(3, oh, ow, &mut r);
        let gx = op.adjoint(&proj);
        check_input("bicubic", &x, &gx, |x| dot(&proj, &op.apply(x)), &mut r);
    }
}

pub fn l1_and_mse_gradients() {
    let mut r = rng(8);
    let x = random(3, 5, 4, &mut r);
    let t = off_kink(3, 5, 4, &mut r);
    let target = Tensor::from_vec(3, 5, 4, x.data.iter().zip(&t.data).map(|(a, b)| a + b).collect());
    let (_, g) = l1_loss(&x, &target);
    check_input("l1", &x, &g, |x| l1_loss(x, &target).0, &mut r);
    for c in [0.0, 1.0] {
        let (_, g) = mse_to_target(&x, c);
        check_input("mse", &x, &g, |x| mse_to_target(x, c).0, &mut r);
    }
}

pub fn gup_gradients() {
    let mut r = rng(9);
    for scale in [2, 3] {
        let mut gup: Gup<f64> = Gup::new(scale, 4, 2, &mut r).unwrap();
        randomize(&mut gup, 0.3, &mut r);
        let x = random(3, 6, 5, &mut r);
        let y = gup.forward(&x);
        let proj = random(y.channels, y.height, y.width, &mut r);
        let (_, trace) = gup.forward_train(&x);
        let mut grads = gup.params().zero_grads();
        let gx = gup.backward(&trace, &proj, Some(&mut grads), true).unwrap();
        check_input("gup.input", &x, &gx, |x| dot(&proj, &gup.forward(x)), &mut r);
        check_params("gup", &gup, &grads, |n| dot(&proj, &n.forward(&x)), &mut r);
    }
}

pub fn gdn_gradients() {
    let mut r = rng(10);
    for (linear, scale) in [(true, 2), (false, 2), (true, 3)] {
        let mut gdn: Gdn<f64> = Gdn::new(scale, &[5, 3, 1], linear, &mut r).unwrap();
        randomize(&mut gdn, 0.5, &mut r);
        let x = random(3, 12, 9, &mut r);
        let (y, trace) = gdn.forward_train(&x);
        let proj = random(y.channels, y.height, y.width, &mut r);
        let mut grads = gdn.params().zero_grads();
        let gx = gdn.backward(&trace, &proj, Some(&mut grads), true).unwrap();
        let what = if linear { "gdn" } else { "gdn_nonlinear" };
        check_input(what, &x, &gx, |x| dot(&proj, &gdn.forward(x)), &mut r);
        check_params(what, &gdn, &grads, |n| dot(&proj, &n.forward(&x)), &mut r);
    }
}

pub fn ddn_gradients() {
    let mut r = rng(11);
    let mut ddn: Ddn<f64> = Ddn::new(8, 2, &mut r).unwrap();
    randomize(&mut ddn, 0.3, &mut r);
    let x = random(3, 7, 6, &mut r);
    let (y, trace) = ddn.forward_train(&x);
    let proj = random(y.channels, y.height, y.width, &mut r);
    let mut grads = ddn.params().zero_grads();
    let gx = ddn.backward(&trace, &proj, Some(&mut grads), true).unwrap();
    check_input("ddn.input", &x, &gx, |x| dot(&proj, &ddn.forward(x)), &mut r);
    check_params("ddn", &ddn, &grads, |n| dot(&proj, &n.forward(&x)), &mut r);
}

/// Every layer check, by name.
pub const ALL: &[(&str, fn())] = &[
    ("conv2d_gradients", conv2d_gradients),
    ("relu_gradients", relu_gradients),
    ("leaky_relu_gradients", leaky_relu_gradients),
    ("pixel_shuffle_gradients", pixel_shuffle_gradients),
    ("reflect_pad_gradients", reflect_pad_gradients),
    ("subsample_gradients", subsample_gradients),
    ("bicubic_gradients", bicubic_gradients),
    ("l1_and_mse_gradients", l1_and_mse_gradients),
    ("gup_gradients", gup_gradients),
    ("gdn_gradients", gdn_gradients),
    ("ddn_gradients", ddn_gradients),
];
