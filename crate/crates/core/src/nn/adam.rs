use crate::error::{Error, Result};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        let zeros = || shapes.iter().map(|s| Tensor::zeros(s)).collect();
        Self { config, step: 0, first: zeros(), second: zeros() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every parameter. Gradients are checked before anything
    /// moves, so a non-finite gradient leaves parameters and state untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], names: &[String]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "AdamState::step",
                format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), self.first.len()),
            ));
        }
        for (i, ((p, g), m)) in params.iter().zip(grads).zip(&self.first).enumerate() {
            let name = names.get(i).map_or_else(|| format!("parameter {i}"), Clone::clone);
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape("AdamState::step", format!("{name}: {:?} vs grad {:?}", p.shape(), g.shape())));
            }
            if !g.all_finite() {
                return Err(Error::Divergence { context: format!("non-finite gradient in {name}") });
            }
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powf(self.step as f64);
        let c2 = 1.0 - beta2.powf(self.step as f64);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *w -= learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(&[1], vec![v]).unwrap()
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        // exact first step is -lr·g/(|g| + ε); within lr·1e-6 of -lr·sign(g) once |g| ≥ 0.01
        for g in [3.7, -0.05, 1e4, -0.002] {
            let mut adam = AdamState::new(AdamConfig::default(), &[&[1]]);
            let mut w = scalar(0.5);
            adam.step(&mut [&mut w], &[&scalar(g)], &[]).unwrap();
            let update = w.data()[0] - 0.5;
            assert!((update + 1e-3 * g / (g.abs() + 1e-8)).abs() <= 1e-15, "{g}: {update}");
            if g.abs() >= 0.01 {
                assert!((update + 1e-3 * g.signum()).abs() <= 1e-3 * 1e-6, "{g}: {update}");
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = AdamState::new(AdamConfig::default(), &[&[3]]);
        let mut w = Tensor::new(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        let before = w.clone();
        adam.step(&mut [&mut w], &[&Tensor::zeros(&[3])], &[]).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn quadratic_decreases() {
        let mut adam = AdamState::new(AdamConfig::default(), &[&[1]]);
        let mut w = scalar(1.0);
        let mut f = 1.0;
        for _ in 0..2 {
            let g = scalar(2.0 * w.data()[0]);
            adam.step(&mut [&mut w], &[&g], &[]).unwrap();
            let next = w.data()[0].powi(2);
            assert!(next < f);
            f = next;
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut adam = AdamState::new(AdamConfig::default(), &[&[1], &[1]]);
        let (mut a, mut b) = (scalar(1.0), scalar(1.0));
        let err = adam
            .step(&mut [&mut a, &mut b], &[&scalar(1.0), &scalar(f64::NAN)], &["w".into(), "layer7.dense.bias".into()])
            .unwrap_err();
        assert!(err.to_string().contains("layer7.dense.bias"), "{err}");
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(adam.step_count(), 0);
    }
}
