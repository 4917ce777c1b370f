use super::{Grads, ParamStore, Scalar};

/// Adam with bias correction (β₁ = 0.9, β₂ = 0.999, ε = 1e-8 by default).
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zero_grads().0,
            v: params.zero_grads().0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let step_size = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(self.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads.get(i);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                let denom = (v[j] * inv_bc2).sqrt() + eps;
                p.data[j] -= step_size * m[j] / denom;
            }
        }
    }
}

/// Step decay: `base · decay^floor(iter / step)`.
pub fn lr_schedule(base: f64, decay: f64, step: u64, iter: u64) -> f64 {
    if step == 0 {
        return base;
    }
    base * decay.powi((iter / step) as i32)
}
