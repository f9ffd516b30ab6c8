use adgan_tensor::{kaiming_normal, Graph, Real, Tensor, Var};
use rand::Rng;

use super::params::{Bound, ParamSet};
use crate::error::Result;

/// Convolution with bias.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv {
    weight: usize,
    bias: usize,
    stride: usize,
    pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = kaiming_normal(&[c_out, c_in, k, k], c_in * k * k, rng);
        Conv {
            weight: ps.register(format!("{name}.weight"), w),
            bias: ps.register(format!("{name}.bias"), Tensor::zeros(vec![c_out])),
            stride,
            pad,
        }
    }

    /// 4x4 kernel, stride 2, padding 1: halves H and W.
    pub fn down<T: Real, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Self {
        Self::new(ps, rng, name, c_in, c_out, 4, 2, 1)
    }

    /// 3x3 kernel, stride 1, padding 1: keeps H and W.
    pub fn same<T: Real, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Self {
        Self::new(ps, rng, name, c_in, c_out, 3, 1, 1)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.conv2d(x, p[self.weight], self.stride, self.pad)?;
        Ok(g.bias_add(y, p[self.bias])?)
    }
}

/// Fully connected layer `x W^T + b`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    pub weight: usize,
    pub bias: usize,
}

impl Dense {
    pub fn new<T: Real, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias_init: f64,
    ) -> Self {
        let w = kaiming_normal(&[d_out, d_in], d_in, rng);
        Dense {
            weight: ps.register(format!("{name}.weight"), w),
            bias: ps.register(
                format!("{name}.bias"),
                Tensor::full(vec![d_out], T::from_f64(bias_init)),
            ),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(g.linear(x, p[self.weight], Some(p[self.bias]))?)
    }
}
