//! Adaptive-moment gradient descent with bias correction.

use crate::error::{Error, Result};

use super::mlp::{Gradients, Mlp};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Adam {
    pub fn new(parameter_count: usize, learning_rate: f64) -> Self {
        Self { learning_rate, step: 0, first: vec![0.0; parameter_count], second: vec![0.0; parameter_count] }
    }

    pub fn for_net(net: &Mlp, learning_rate: f64) -> Self {
        Self::new(net.parameter_count(), learning_rate)
    }

    /// One descent step on `params` along `grads`.
    pub fn update<'a>(&mut self, params: impl Iterator<Item = &'a mut f64>, grads: impl Iterator<Item = f64>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.first).zip(&mut self.second) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }

    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        self.update(params.iter_mut(), grads.iter().copied());
        Ok(())
    }

    pub fn step_net(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if net.parameter_count() != self.first.len() {
            return Err(Error::Shape("optimizer does not match network".into()));
        }
        let flat = grads.weights.iter().zip(&grads.bias).flat_map(|(w, b)| w.iter().chain(b.iter()).copied());
        self.update(net.parameters_mut(), flat);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = Adam::new(3, 0.1);
        let mut p = [1.0, -2.0, 3.0];
        for _ in 0..10 {
            opt.step_slice(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_has_unit_size() {
        for g in [1e-3, 1.0, 1e3] {
            let mut opt = Adam::new(1, 0.01);
            let mut p = [0.0];
            opt.step_slice(&mut p, &[g]).unwrap();
            // |m_hat| / sqrt(v_hat) = 1 on the first step
            assert_relative_eq!(p[0], -0.01 * g / (g + EPSILON), max_relative = 1e-12);
            assert_relative_eq!(p[0], -0.01, max_relative = 1e-4);
        }
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut opt = Adam::new(1, 0.1);
        let mut x = [1.0];
        for _ in 0..200 {
            let g = [2.0 * x[0]];
            opt.step_slice(&mut x, &g).unwrap();
        }
        assert!(x[0].abs() < 0.01, "{}", x[0]);
    }

    #[test]
    fn shape_is_checked() {
        let mut opt = Adam::new(2, 0.1);
        assert!(opt.step_slice(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
