use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// RMSProp hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    /// Decay of the squared-gradient moving average.
    pub rho: f64,
    pub eps: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp {
            learning_rate: 1e-4,
            rho: 0.99,
            eps: 1e-8,
        }
    }
}

/// Per-parameter squared-gradient accumulator. Entries are never negative.
#[derive(Clone, Debug, PartialEq)]
pub struct RmspropState<T> {
    acc: Tensor<T>,
}

impl<T: Real> RmspropState<T> {
    pub fn new(shape: &[usize]) -> Self {
        RmspropState {
            acc: Tensor::zeros(shape.to_vec()),
        }
    }

    pub fn from_accumulator(acc: Tensor<T>) -> Result<Self> {
        if acc.data().iter().any(|&v| v < T::zero() || !v.is_finite()) {
            return Err(TensorError::argument(
                "rmsprop",
                "accumulator entries must be finite and non-negative",
            ));
        }
        Ok(RmspropState { acc })
    }

    pub fn accumulator(&self) -> &Tensor<T> {
        &self.acc
    }
}

impl RmsProp {
    /// `acc <- rho * acc + (1 - rho) * g^2`, then
    /// `param <- param - lr * g / (sqrt(acc) + eps)`.
    pub fn step<T: Real>(
        &self,
        param: &mut Tensor<T>,
        grad: &[T],
        state: &mut RmspropState<T>,
    ) -> Result<()> {
        if grad.len() != param.numel() || state.acc.shape() != param.shape() {
            return Err(TensorError::shape(
                "rmsprop_step",
                format!(
                    "param {:?}, grad of {} values, accumulator {:?}",
                    param.shape(),
                    grad.len(),
                    state.acc.shape()
                ),
            ));
        }
        let rho = T::from_f64(self.rho);
        let keep = T::from_f64(1.0 - self.rho);
        let lr = T::from_f64(self.learning_rate);
        let eps = T::from_f64(self.eps);
        for ((p, a), &g) in param
            .data_mut()
            .iter_mut()
            .zip(state.acc.data_mut())
            .zip(grad)
        {
            *a = rho * *a + keep * g * g;
            *p -= lr * g / (a.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_only_decays_accumulator() {
        let opt = RmsProp::default();
        let mut p = Tensor::<f64>::from_f64(vec![2], &[0.5, -1.0]).unwrap();
        let mut s = RmspropState::from_accumulator(Tensor::from_f64(vec![2], &[1.0, 4.0]).unwrap()).unwrap();
        opt.step(&mut p, &[0.0, 0.0], &mut s).unwrap();
        assert_eq!(p.data(), &[0.5, -1.0]);
        assert_eq!(s.accumulator().data(), &[0.99, 3.96]);
    }

    #[test]
    fn first_step_from_empty_accumulator() {
        let opt = RmsProp::default();
        let mut p = Tensor::<f64>::scalar(0.0);
        let mut s = RmspropState::new(&[]);
        opt.step(&mut p, &[1.0], &mut s).unwrap();
        assert!((s.accumulator().data()[0] - 0.01).abs() < 1e-15);
        // -1e-4 / (0.1 + 1e-8)
        assert!((p.data()[0] + 1e-4 / (0.1 + 1e-8)).abs() < 1e-15);
        assert!((p.data()[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn repeated_gradient_shrinks_update() {
        let opt = RmsProp::default();
        let mut p = Tensor::<f64>::scalar(0.0);
        let mut s = RmspropState::new(&[]);
        opt.step(&mut p, &[1.0], &mut s).unwrap();
        let first = p.data()[0];
        opt.step(&mut p, &[1.0], &mut s).unwrap();
        let second = p.data()[0] - first;
        // acc2 = 0.99 * 0.01 + 0.01 = 0.0199
        let expected = -1e-4 / (0.0199f64.sqrt() + 1e-8);
        assert!((second - expected).abs() < 1e-15);
        assert!(second.abs() < first.abs());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let opt = RmsProp::default();
        let mut p = Tensor::<f64>::zeros(vec![3]);
        let mut s = RmspropState::new(&[3]);
        assert!(opt.step(&mut p, &[1.0], &mut s).is_err());
    }
}
