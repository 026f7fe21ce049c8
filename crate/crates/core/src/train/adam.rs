use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros = || params.values().iter().map(|v| Tensor::zeros(v.shape())).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    pub fn from_config(params: &ParamSet, cfg: &TrainConfig) -> Self {
        AdamState {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            ..Self::new(params, cfg.lr)
        }
    }

    /// Restores a saved state; moment shapes must match `params`.
    pub fn from_parts(
        params: &ParamSet,
        cfg: &TrainConfig,
        step: u64,
        first_moment: Vec<Tensor>,
        second_moment: Vec<Tensor>,
    ) -> Result<Self> {
        let mut state = Self::from_config(params, cfg);
        for moments in [&first_moment, &second_moment] {
            let ok = moments.len() == params.len()
                && moments.iter().zip(params.values()).all(|(m, p)| m.shape() == p.shape());
            if !ok {
                return Err(Error::CheckpointCorrupt(
                    "optimizer moments do not match parameters".into(),
                ));
            }
        }
        state.step = step;
        state.first_moment = first_moment;
        state.second_moment = second_moment;
        Ok(state)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.second_moment
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, model has {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let (values, grads) = params.values_and_grads_mut();
        for (i, (w, g)) in values.iter_mut().zip(grads.iter_mut()).enumerate() {
            let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
            if m.shape() != w.shape() || g.shape() != w.shape() {
                return Err(Error::shape("adam_step", w.shape(), g.shape()));
            }
            for (((w, g), m), v) in w
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            g.data_mut().fill(0.0);
        }
        Ok(())
    }
}
