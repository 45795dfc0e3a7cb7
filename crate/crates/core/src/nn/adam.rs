use super::{AdamConfig, Gradients, Model, Scalar};

/// Adam with bias correction; one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, model: &Model<T>) -> Self {
        Adam {
            config,
            m: model.zero_gradients(),
            v: model.zero_gradients(),
            step: 0,
        }
    }

    /// `m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2; p <- p - lr m_hat / (sqrt(v_hat) + eps)`
    pub fn step(&mut self, model: &mut Model<T>, grads: &Gradients<T>) {
        self.step += 1;
        let b1 = T::c(self.config.beta1);
        let b2 = T::c(self.config.beta2);
        let one = T::one();
        let t = self.step.min(i32::MAX as u64) as i32;
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = T::c(self.config.lr);
        let eps = T::c(self.config.epsilon);
        for (((param, g), m), v) in model.params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in param.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;

    fn model() -> Model<f64> {
        Model::new(ModelConfig::custom(2, 2, vec![2], vec![2], 2)).unwrap()
    }

    #[test]
    fn first_step_with_unit_gradient() {
        let mut m = model();
        let before = m.clone();
        let mut adam = Adam::new(AdamConfig::default(), &m);
        let grads: Gradients<f64> = m.params.iter().map(|t| vec![1.0; t.data.len()]).collect();
        adam.step(&mut m, &grads);
        // Hand computation: m = 0.1, v = 0.001, m_hat = v_hat = 1, step = lr / (1 + eps).
        let expected = 0.001 / (1.0 + 1e-8);
        for (a, b) in m.params.iter().zip(&before.params) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!(((y - x) - expected).abs() < 1e-15);
            }
        }
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = model();
        let before = m.clone();
        let mut adam = Adam::new(AdamConfig::default(), &m);
        let zeros = m.zero_gradients();
        for _ in 0..5 {
            adam.step(&mut m, &zeros);
        }
        assert_eq!(m, before);
    }

    #[test]
    fn repeated_runs_agree() {
        let run = || {
            let mut m = model();
            let mut adam = Adam::new(AdamConfig::default(), &m);
            for k in 0..20 {
                let g: Gradients<f64> = m
                    .params
                    .iter()
                    .map(|t| (0..t.data.len()).map(|i| ((i + k) as f64).sin()).collect())
                    .collect();
                adam.step(&mut m, &g);
            }
            m
        };
        assert_eq!(run(), run());
    }
}
