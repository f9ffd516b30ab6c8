use adgan_tensor::{Graph, Real, Var};
use rand::Rng;

use super::layers::{Conv, Dense};
use super::params::{Bound, ParamSet};
use super::{check_image, ArchConfig};
use crate::attributes::AttributeSpace;
use crate::error::Result;

/// Four stride-2 convolutions, global average pooling and an affine map
/// to the style dimension.
#[derive(Clone, Debug)]
struct Trunk {
    convs: [Conv; 4],
    head: Dense,
    in_channels: usize,
    resolution: usize,
    slope: f64,
}

impl Trunk {
    fn new<T: Real, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        rng: &mut R,
        prefix: &str,
        in_channels: usize,
        arch: &ArchConfig,
        resolution: usize,
    ) -> Self {
        let c = arch.base_channels;
        let widths = [in_channels, c, 2 * c, 4 * c, 4 * c];
        let convs = std::array::from_fn(|i| {
            Conv::down(ps, rng, &format!("{prefix}.conv{i}"), widths[i], widths[i + 1])
        });
        let head = Dense::new(ps, rng, &format!("{prefix}.head"), 4 * c, arch.style_dim, 0.0);
        Trunk {
            convs,
            head,
            in_channels,
            resolution,
            slope: arch.leaky_slope,
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, who: &'static str) -> Result<Var> {
        check_image(who, g.shape(x), self.in_channels, self.resolution)?;
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, p, h)?;
            h = g.leaky_relu(h, self.slope);
        }
        let pooled = g.global_avg_pool(h)?;
        self.head.forward(g, p, pooled)
    }
}

/// Individual attribute encoder `E(X_t)`: style image to embedding.
#[derive(Clone, Debug)]
pub struct AttributeEncoder<T> {
    params: ParamSet<T>,
    trunk: Trunk,
}

impl<T: Real> AttributeEncoder<T> {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, resolution: usize, rng: &mut R) -> Result<Self> {
        arch.check_resolution(resolution, 16)?;
        let mut params = ParamSet::default();
        let trunk = Trunk::new(&mut params, rng, "E", 3, arch, resolution);
        Ok(AttributeEncoder { params, trunk })
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// `[N,3,H,H] -> [N, style_dim]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, image: Var) -> Result<Var> {
        self.trunk.forward(g, p, image, "encoder")
    }
}

/// Attribute disentanglement network `F(S_t)`: attribute code to embedding.
///
/// Same trunk as the encoder with `n + 1` input channels, so both
/// embeddings live in comparable geometry.
#[derive(Clone, Debug)]
pub struct Disentangler<T> {
    params: ParamSet<T>,
    trunk: Trunk,
}

impl<T: Real> Disentangler<T> {
    pub fn new<R: Rng + ?Sized>(
        arch: &ArchConfig,
        space: &AttributeSpace,
        resolution: usize,
        rng: &mut R,
    ) -> Result<Self> {
        arch.check_resolution(resolution, 16)?;
        let mut params = ParamSet::default();
        let trunk = Trunk::new(&mut params, rng, "F", space.code_channels(), arch, resolution);
        Ok(Disentangler { params, trunk })
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// `[N, n+1, H, H] -> [N, style_dim]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, code: Var) -> Result<Var> {
        self.trunk.forward(g, p, code, "disentangler")
    }
}
