use serde::{Deserialize, Serialize};

use super::{Gradients, MlpNet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    /// Coefficient of the `l2 * w` term added to every gradient entry.
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, l2: f64) -> Self {
        Self {
            lr,
            l2,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            l2: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(net: &MlpNet, cfg: AdamConfig) -> Self {
        let n = net.params().len();
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One bias-corrected Adam update. A non-finite gradient leaves both the
    /// network and the moments untouched.
    pub fn step(&mut self, net: &mut MlpNet, grads: &Gradients) -> Result<()> {
        let params = net.params_mut();
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam state has {} entries, gradient {}, network {}",
                self.m.len(),
                grads.len(),
                params.len()
            )));
        }
        if let Some(i) = grads.as_slice().iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "gradient entry {i} is {}",
                grads.as_slice()[i]
            )));
        }

        self.steps += 1;
        let AdamConfig {
            lr,
            l2,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.steps as i32);
        let bc2 = 1.0 - beta2.powi(self.steps as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads.as_slice())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let g = g + l2 * *p;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Architecture};

    fn scalar_net(w: f64) -> MlpNet {
        let mut net = MlpNet::zeros(Architecture::new(
            vec![1, 1],
            Activation::Relu,
            Activation::Identity,
        ))
        .unwrap();
        net.params_mut()[0] = w;
        net
    }

    #[test]
    fn first_step_closed_form() {
        let mut net = scalar_net(0.0);
        let mut adam = Adam::new(&net, AdamConfig::new(1e-3, 0.0));
        adam.step(&mut net, &Gradients::from_vec(vec![0.5, 0.0]))
            .unwrap();
        let expected = -1e-3 * 0.5 / (0.25f64.sqrt() + 1e-8);
        assert!((net.params()[0] - expected).abs() < 1e-15);
        assert!((net.params()[0] + 1e-3).abs() < 1e-10);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_without_l2_is_identity() {
        let net0 = MlpNet::new(
            Architecture::new(vec![3, 4, 2], Activation::Tanh, Activation::Tanh),
            3,
        )
        .unwrap();
        let mut net = net0.clone();
        let mut adam = Adam::new(&net, AdamConfig::new(1e-2, 0.0));
        let zero = Gradients::zeros_like(&net);
        for _ in 0..5 {
            adam.step(&mut net, &zero).unwrap();
        }
        assert_eq!(net, net0);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn l2_shrinks_positive_weight() {
        let mut net = scalar_net(0.8);
        let mut adam = Adam::new(&net, AdamConfig::new(1e-3, 1e-4));
        let zero = Gradients::zeros_like(&net);
        adam.step(&mut net, &zero).unwrap();
        assert!(net.params()[0] < 0.8);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut net = scalar_net(0.3);
        let before = net.clone();
        let mut adam = Adam::new(&net, AdamConfig::default());
        let err = adam
            .step(&mut net, &Gradients::from_vec(vec![f64::NAN, 0.0]))
            .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(net, before);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn gradient_shape_is_checked() {
        let mut net = scalar_net(0.3);
        let mut adam = Adam::new(&net, AdamConfig::default());
        let err = adam
            .step(&mut net, &Gradients::from_vec(vec![0.0; 3]))
            .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }
}
