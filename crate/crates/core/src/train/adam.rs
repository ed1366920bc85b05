use crate::scalar::Scalar;

/// Adam with bias correction; moments live in the parameter precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub(crate) m: Vec<T>,
    pub(crate) v: Vec<T>,
    pub(crate) t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let c1 = T::c(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::c(1.0 - self.beta2.powi(self.t as i32));
        let lr = T::c(lr);
        let eps = T::c(self.eps);
        let one = T::one();
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut adam = Adam::<f64>::new(2, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[0.5, -3.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut adam = Adam::<f32>::new(1, 0.9, 0.999, 1e-8);
        let mut p = vec![5.0f32];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.5)];
            adam.step(&mut p, &g, 0.05);
        }
        assert!((p[0] - 1.5).abs() < 1e-2);
    }
}
