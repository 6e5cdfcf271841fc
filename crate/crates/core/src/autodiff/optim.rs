use super::{AutodiffError, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    /// One bias-corrected Adam update using each tensor's `grad`. Tensors
    /// without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut [Tensor<T>], cfg: &AdamConfig) -> Result<()> {
        if !(cfg.lr > 0.0) || !cfg.lr.is_finite() {
            return Err(AutodiffError::Config {
                op: "adam_step",
                reason: format!("learning rate must be positive, got {}", cfg.lr),
            });
        }
        if params.len() != self.m.len()
            || params.iter().zip(&self.m).any(|(p, m)| p.len() != m.len())
        {
            return Err(AutodiffError::Config {
                op: "adam_step",
                reason: "optimizer state does not match parameter shapes".into(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let c1 = T::one() / (T::one() - T::of(cfg.beta1.powi(t)));
        let c2 = T::one() / (T::one() - T::of(cfg.beta2.powi(t)));
        let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.take();
            let data = p.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(T::zero(), |g| g[i]);
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mhat = m[i] * c1;
                let vhat = v[i] * c2;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
