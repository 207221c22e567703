//! Adam optimizer with bias correction and an optional per-parameter lower
//! floor applied after each update (used to keep GDN parameters in their
//! admissible region).

use super::tensor::{Scalar, Tensor};
use super::{shape_mismatch, AutodiffError};

pub struct AdamState<S: Scalar> {
    learning_rate: S,
    beta1: S,
    beta2: S,
    epsilon: S,
    step: u64,
    first_moment: Vec<Tensor<S>>,
    second_moment: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    /// Fresh state for one tensor per entry of `shapes`, with
    /// beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(learning_rate: S, shapes: &[Vec<usize>]) -> Self {
        Self {
            learning_rate,
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            epsilon: S::from_f64(1e-8),
            step: 0,
            first_moment: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            second_moment: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over all parameter tensors. `grads[i]` may be `None`
    /// for a parameter that received no gradient this step (it still advances
    /// through the moment decay with a zero gradient). `floors[i]`, when
    /// present, clamps the parameter from below after the update.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<S>],
        grads: &[Option<&Tensor<S>>],
        floors: &[Option<S>],
    ) -> Result<(), AutodiffError> {
        if params.len() != self.first_moment.len()
            || grads.len() != params.len()
            || floors.len() != params.len()
        {
            return Err(AutodiffError::InvalidParameter {
                op: "adam_step",
                reason: format!(
                    "expected {} parameter tensors, got {} params / {} grads / {} floors",
                    self.first_moment.len(),
                    params.len(),
                    grads.len(),
                    floors.len()
                ),
            });
        }
        for (i, p) in params.iter().enumerate() {
            if p.shape() != self.first_moment[i].shape() {
                return Err(shape_mismatch(
                    "adam_step parameter",
                    self.first_moment[i].shape(),
                    p.shape(),
                ));
            }
            if let Some(g) = grads[i] {
                if g.shape() != p.shape() {
                    return Err(shape_mismatch("adam_step gradient", p.shape(), g.shape()));
                }
            }
        }

        self.step += 1;
        let t = self.step as f64;
        let bc1 = S::from_f64(1.0 - 0.9f64.powf(t));
        let bc2 = S::from_f64(1.0 - 0.999f64.powf(t));
        let one = S::one();

        for i in 0..params.len() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = params[i].data_mut();
            for e in 0..p.len() {
                let g = grads[i].map_or(S::zero(), |g| g.data()[e]);
                m[e] = self.beta1 * m[e] + (one - self.beta1) * g;
                v[e] = self.beta2 * v[e] + (one - self.beta2) * g * g;
                let m_hat = m[e] / bc1;
                let v_hat = v[e] / bc2;
                p[e] = p[e] - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            if let Some(floor) = floors[i] {
                for e in p.iter_mut() {
                    if *e < floor {
                        *e = floor;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::<f64>::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut adam = AdamState::new(1e-4, &[vec![3]]);
        let zero = Tensor::zeros(vec![3]);
        let before = p.clone();
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[Some(&zero)], &[None]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_matches_analytic_value() {
        // theta = 0, g = 1, lr = 1e-4: bias correction cancels exactly and the
        // update is lr * g / (|g| + eps).
        let mut p = Tensor::<f64>::zeros(vec![1]);
        let g = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut adam = AdamState::new(1e-4, &[vec![1]]);
        adam.step(&mut [&mut p], &[Some(&g)], &[None]).unwrap();
        let expect = -1e-4 / (1.0 + 1e-8);
        assert!((p.data()[0] - expect).abs() < 1e-15, "{}", p.data()[0]);
        assert!((p.data()[0] - (-9.999_999_9e-5)).abs() < 1e-12);
    }

    #[test]
    fn tensors_update_independently() {
        let mut a = Tensor::<f64>::zeros(vec![2]);
        let mut b = Tensor::<f64>::zeros(vec![2]);
        let ga = Tensor::new(vec![2], vec![1.0, -1.0]).unwrap();
        let mut adam = AdamState::new(1e-2, &[vec![2], vec![2]]);
        adam.step(&mut [&mut a, &mut b], &[Some(&ga), None], &[None, None])
            .unwrap();
        assert!(a.data().iter().all(|&v| v != 0.0));
        assert!(b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn floor_projection_applies_after_update() {
        let mut p = Tensor::<f64>::new(vec![1], vec![1e-6]).unwrap();
        let g = Tensor::new(vec![1], vec![5.0]).unwrap();
        let mut adam = AdamState::new(1e-2, &[vec![1]]);
        adam.step(&mut [&mut p], &[Some(&g)], &[Some(1e-6)]).unwrap();
        assert_eq!(p.data()[0], 1e-6);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::<f64>::zeros(vec![2]);
        let g = Tensor::<f64>::zeros(vec![3]);
        let mut adam = AdamState::new(1e-2, &[vec![2]]);
        assert!(adam.step(&mut [&mut p], &[Some(&g)], &[None]).is_err());
    }
}
