use crate::error::{bail, Result};
use crate::teacher_student::ParameterStore;
use crate::tensorkit::Tensor;

/// `η₀·(1 − i/i_max)^power`, zero at and beyond `i_max`.
pub fn poly_lr(base: f64, iter: usize, max_iter: usize, power: f64) -> f64 {
    if max_iter == 0 || iter >= max_iter {
        return 0.0;
    }
    base * (1.0 - iter as f64 / max_iter as f64).powf(power)
}

/// SGD with classical momentum; weight decay is folded into the gradient.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(params: &ParameterStore, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// `v ← m·v + (g + λθ)`, `θ ← θ − η·v`. `grads` follows store order.
    pub fn step(&mut self, params: &mut ParameterStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.velocity.len() != params.len() {
            bail!(State, "{} gradients for {} parameters", grads.len(), params.len());
        }
        for (((_, theta), g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if g.shape() != theta.shape() {
                bail!(State, "gradient shape {:?} for parameter {:?}", g.shape(), theta.shape());
            }
            for ((t, &gi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *t;
                *t -= lr * *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher_student::Role;

    #[test]
    fn poly_examples() {
        assert_eq!(poly_lr(0.001, 0, 100, 0.9), 0.001);
        assert_eq!(poly_lr(0.001, 100, 100, 0.9), 0.0);
        assert_eq!(poly_lr(0.001, 150, 100, 0.9), 0.0);
        assert!((poly_lr(0.001, 50, 100, 0.9) - 5.359e-4).abs() < 1e-7);
        let lrs: Vec<f64> = (0..=100).map(|i| poly_lr(1.0, i, 100, 0.9)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn decay_only_step_shrinks_exactly() {
        let mut p = ParameterStore::new(Role::Student);
        p.insert("w", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let before = p.get("w").unwrap().clone();
        let mut opt = Sgd::new(&p, 0.9, 1e-4);
        let (lr, wd) = (0.01, 1e-4);
        opt.step(&mut p, &[Tensor::zeros(&[3])], lr).unwrap();
        for (a, b) in p.get("w").unwrap().data().iter().zip(before.data()) {
            assert_eq!(*a, b - lr * wd * b);
            assert!((a - b * (1.0 - lr * wd)).abs() <= 1e-15);
        }
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = ParameterStore::new(Role::Student);
        p.insert("w", Tensor::scalar(0.0));
        let mut opt = Sgd::new(&p, 0.5, 0.0);
        let g = [Tensor::scalar(1.0)];
        opt.step(&mut p, &g, 1.0).unwrap();
        assert_eq!(p.get("w").unwrap().item(), -1.0);
        opt.step(&mut p, &g, 1.0).unwrap();
        assert_eq!(p.get("w").unwrap().item(), -2.5);
        assert!(opt.step(&mut p, &[], 1.0).is_err());
    }
}
