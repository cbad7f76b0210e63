use super::mlp::{ForwardTrace, Gradients, MlpModel};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, RngStream};

/// Maps noise to queries: `x = center + half_width · tanh(net(z))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    pub net: MlpModel,
    center: Vec<f64>,
    half_width: Vec<f64>,
}

/// Intermediate values of a generator pass.
#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    net: ForwardTrace,
    squashed: Matrix,
    pub output: Matrix,
}

impl GeneratorModel {
    /// `hidden` lists the hidden widths between the noise and the output.
    pub fn new(noise_dim: usize, hidden: &[usize], bounds: &[(f64, f64)], rng: &mut RngStream) -> Result<Self> {
        let mut dims = vec![noise_dim];
        dims.extend_from_slice(hidden);
        dims.push(bounds.len());
        Self::from_net(MlpModel::new(&dims, rng)?, bounds)
    }

    pub fn from_net(net: MlpModel, bounds: &[(f64, f64)]) -> Result<Self> {
        if net.output_dim() != bounds.len() {
            return Err(Error::DimensionMismatch {
                expected: bounds.len(),
                got: net.output_dim(),
            });
        }
        if bounds.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidSpec("generator bounds must satisfy lo < hi".into()));
        }
        Ok(Self {
            net,
            center: bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect(),
            half_width: bounds.iter().map(|&(lo, hi)| 0.5 * (hi - lo)).collect(),
        })
    }

    pub fn noise_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn sample_noise(&self, n: usize, rng: &mut RngStream) -> Matrix {
        Matrix::from_raw(n, self.noise_dim(), rng.gaussian_vec(n * self.noise_dim()))
    }

    pub fn generate(&self, z: &Matrix) -> Result<Matrix> {
        Ok(self.generate_trace(z)?.output)
    }

    pub fn generate_trace(&self, z: &Matrix) -> Result<GeneratorTrace> {
        if !z.is_finite() {
            return Err(Error::NonFinite("generator noise"));
        }
        let net = self.net.forward_trace(z)?;
        let pre = net.output();
        let (rows, d) = (pre.rows(), self.output_dim());
        let squashed: Vec<f64> = pre.as_slice().iter().map(|v| v.tanh()).collect();
        let output: Vec<f64> = squashed
            .iter()
            .enumerate()
            .map(|(i, t)| self.center[i % d] + self.half_width[i % d] * t)
            .collect();
        Ok(GeneratorTrace {
            net,
            squashed: Matrix::from_raw(rows, d, squashed),
            output: Matrix::from_raw(rows, d, output),
        })
    }

    /// Parameter gradients given `∂L/∂x` for the generated batch.
    pub fn backward(&self, trace: &GeneratorTrace, grad_output: &Matrix) -> Result<Gradients> {
        if grad_output.shape() != trace.output.shape() {
            return Err(Error::DimensionMismatch {
                expected: trace.output.cols(),
                got: grad_output.cols(),
            });
        }
        let d = self.output_dim();
        let up: Vec<f64> = grad_output
            .as_slice()
            .iter()
            .zip(trace.squashed.as_slice())
            .enumerate()
            .map(|(i, (g, t))| g * self.half_width[i % d] * (1.0 - t * t))
            .collect();
        self.net
            .backward_from(&trace.net, &Matrix::from_raw(grad_output.rows(), d, up))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_center() {
        let net = MlpModel::zeros(&[3, 4, 2]).unwrap();
        let g = GeneratorModel::from_net(net, &[(-2.0, 4.0), (0.0, 10.0)]).unwrap();
        let x = g.generate(&Matrix::zeros(1, 3)).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 5.0]);
    }

    #[test]
    fn outputs_stay_in_bounds_and_are_deterministic() {
        let mut rng = RngStream::new(1, 1);
        let bounds = vec![(-1.0, 1.0); 4];
        let g = GeneratorModel::new(8, &[16], &bounds, &mut rng).unwrap();
        let z = g.sample_noise(10_000, &mut rng).scaled(5.0);
        let x = g.generate(&z).unwrap();
        assert!(x.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(x, g.generate(&z).unwrap());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RngStream::new(2, 2);
        let bounds = vec![(-3.0, 3.0); 3];
        let g = GeneratorModel::new(2, &[4], &bounds, &mut rng).unwrap();
        let z = g.sample_noise(3, &mut rng);
        let w = Matrix::new(3, 3, rng.gaussian_vec(9)).unwrap();
        let objective = |gen: &GeneratorModel| -> f64 {
            let x = gen.generate(&z).unwrap();
            x.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
        };
        let trace = g.generate_trace(&z).unwrap();
        let grads = g.backward(&trace, &w).unwrap();
        let analytic = grads.layers[0].weights.get(1, 2);
        let h = 1e-6;
        let mut plus = g.clone();
        plus.net.layers_mut()[0].weights.set(1, 2, g.net.layers()[0].weights.get(1, 2) + h);
        let mut minus = g.clone();
        minus.net.layers_mut()[0].weights.set(1, 2, g.net.layers()[0].weights.get(1, 2) - h);
        let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
        assert!((analytic - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()));
    }

    #[test]
    fn rejects_bad_noise() {
        let g = GeneratorModel::from_net(MlpModel::zeros(&[2, 2]).unwrap(), &[(0.0, 1.0); 2]).unwrap();
        assert!(g.generate(&Matrix::zeros(1, 3)).is_err());
    }
}
