use super::mlp::{Gradients, MlpModel};

/// First-order parameter update rule.
pub trait Optimizer {
    fn step(&mut self, model: &mut MlpModel, grads: &Gradients);
}

/// SGD with classical momentum: `v ← μ·v + g`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        if self.velocity.is_empty() {
            self.velocity = grads.params().map(|g| vec![0.0; g.len()]).collect();
        }
        for ((w, g), v) in model.params_mut().zip(grads.params()).zip(&mut self.velocity) {
            for ((wi, gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *wi -= self.learning_rate * *vi;
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        if self.m.is_empty() {
            self.m = grads.params().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((w, g), m), v) in model
            .params_mut()
            .zip(grads.params())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((wi, gi), mi), vi) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *wi -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Matrix;
    use crate::nets::mlp::Dense;

    fn scalar_model(w: f64) -> MlpModel {
        MlpModel::from_layers(vec![Dense {
            weights: Matrix::new(1, 1, vec![w]).unwrap(),
            bias: vec![0.0],
        }])
        .unwrap()
    }

    fn grad_of(model: &MlpModel) -> Gradients {
        // d/dw of (w - 3)^2
        let w = model.layers()[0].weights.get(0, 0);
        Gradients {
            layers: vec![Dense {
                weights: Matrix::new(1, 1, vec![2.0 * (w - 3.0)]).unwrap(),
                bias: vec![0.0],
            }],
            input: Matrix::zeros(0, 1),
        }
    }

    #[test]
    fn sgd_and_adam_minimize_a_quadratic() {
        let mut m = scalar_model(0.0);
        let mut sgd = Sgd::new(0.05, 0.9);
        for _ in 0..300 {
            let g = grad_of(&m);
            sgd.step(&mut m, &g);
        }
        assert!((m.layers()[0].weights.get(0, 0) - 3.0).abs() < 1e-6);

        let mut m = scalar_model(0.0);
        let mut adam = Adam::new(0.1);
        for _ in 0..1000 {
            let g = grad_of(&m);
            adam.step(&mut m, &g);
        }
        assert!((m.layers()[0].weights.get(0, 0) - 3.0).abs() < 1e-3);
    }

    #[test]
    fn plain_sgd_step() {
        let mut m = scalar_model(1.0);
        let mut sgd = Sgd::new(0.5, 0.0);
        let g = grad_of(&m); // 2 * (1 - 3) = -4
        sgd.step(&mut m, &g);
        assert_eq!(m.layers()[0].weights.get(0, 0), 3.0);
    }
}
