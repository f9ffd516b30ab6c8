//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Worst disagreement found by [`grad_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).data().iter().sum())
}

/// Compares the gradient of the scalar built by `f` against central
/// differences with step `eps_fd`, over every coordinate of every input.
///
/// A NaN error means the op produced a non-finite value.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps_fd: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut worst = GradCheck {
        max_rel_error: 0.0,
        input: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v).expect("leaf gradient");
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + eps_fd;
            let up = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = x0 - eps_fd;
            let down = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = x0;

            let numeric = (up - down) / (2.0 * eps_fd);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if err.is_nan() || err > worst.max_rel_error {
                worst = GradCheck {
                    max_rel_error: err,
                    input: i,
                    index: j,
                    analytic: a,
                    numeric,
                };
                if err.is_nan() {
                    return Ok(worst);
                }
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_is_exact_to_roundoff() {
        let r = grad_check(
            |g, v| g.mul(v[0], v[0]),
            &[Tensor::scalar(3.0)],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // detach hides x from the second factor, so d(x*x)/dx is reported as x
        let r = grad_check(
            |g, v| {
                let d = g.detach(v[0]);
                g.mul(v[0], d)
            },
            &[Tensor::scalar(3.0)],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.4);
    }
}
