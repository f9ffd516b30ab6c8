use adgan_tensor::{Graph, Real, Var};
use rand::Rng;

use super::layers::{Conv, Dense};
use super::params::{Bound, ParamSet};
use super::{check_image, ArchConfig};
use crate::error::{Error, Result};

/// Per-site affine projection of the style embedding into AdaIN scale and shift.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AdaInSite {
    pub scale: Dense,
    pub shift: Dense,
}

#[derive(Clone, Copy, Debug)]
struct ResBlock {
    first: Conv,
    second: Conv,
}

/// Encoder-decoder generator `G(X, z)`.
///
/// Three stride-2 convolutions (`c`, `2c`, `4c` channels) and residual
/// blocks map the image to a bottleneck; three upsampling stages bring it
/// back to full resolution. Before each upsampling stage the feature maps
/// pass through AdaIN whose scale and shift are affine projections of `z`.
/// That is the only route by which `z` reaches the output.
#[derive(Clone, Debug)]
pub struct Generator<T> {
    arch: ArchConfig,
    resolution: usize,
    params: ParamSet<T>,
    down: [Conv; 3],
    res: Vec<ResBlock>,
    sites: [AdaInSite; 3],
    up: [Conv; 3],
    to_rgb: Conv,
}

impl<T: Real> Generator<T> {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, resolution: usize, rng: &mut R) -> Result<Self> {
        arch.check_resolution(resolution, 8)?;
        let c = arch.base_channels;
        let mut ps = ParamSet::default();
        let down = [
            Conv::down(&mut ps, rng, "G.down0", 3, c),
            Conv::down(&mut ps, rng, "G.down1", c, 2 * c),
            Conv::down(&mut ps, rng, "G.down2", 2 * c, 4 * c),
        ];
        let res = (0..arch.res_blocks)
            .map(|i| ResBlock {
                first: Conv::same(&mut ps, rng, &format!("G.res{i}.conv0"), 4 * c, 4 * c),
                second: Conv::same(&mut ps, rng, &format!("G.res{i}.conv1"), 4 * c, 4 * c),
            })
            .collect();
        let site_channels = [4 * c, 2 * c, c];
        let sites = std::array::from_fn(|i| AdaInSite {
            scale: Dense::new(&mut ps, rng, &format!("G.adain{i}.scale"), arch.style_dim, site_channels[i], 1.0),
            shift: Dense::new(&mut ps, rng, &format!("G.adain{i}.shift"), arch.style_dim, site_channels[i], 0.0),
        });
        let up = [
            Conv::same(&mut ps, rng, "G.up0", 4 * c, 2 * c),
            Conv::same(&mut ps, rng, "G.up1", 2 * c, c),
            Conv::same(&mut ps, rng, "G.up2", c, c),
        ];
        let to_rgb = Conv::same(&mut ps, rng, "G.to_rgb", c, 3);
        Ok(Generator {
            arch: arch.clone(),
            resolution,
            params: ps,
            down,
            res,
            sites,
            up,
            to_rgb,
        })
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Indices of the weight matrices of every AdaIN projection.
    pub fn style_projection_weights(&self) -> Vec<usize> {
        self.sites
            .iter()
            .flat_map(|s| [s.scale.weight, s.shift.weight])
            .collect()
    }

    /// `x: [N,3,H,H]` in `[-1, 1]`, `z: [N, style_dim]` -> `[N,3,H,H]` in `[-1, 1]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, x: Var, z: Var) -> Result<Var> {
        let n = check_image("generator", g.shape(x), 3, self.resolution)?;
        if g.shape(z) != [n, self.arch.style_dim] {
            return Err(Error::network(
                "generator",
                format!(
                    "style embedding {:?}, expected [{n}, {}]",
                    g.shape(z),
                    self.arch.style_dim
                ),
            ));
        }
        let slope = self.arch.leaky_slope;
        let mut h = x;
        for conv in &self.down {
            h = conv.forward(g, p, h)?;
            h = g.leaky_relu(h, slope);
        }
        for block in &self.res {
            let r = block.first.forward(g, p, h)?;
            let r = g.leaky_relu(r, slope);
            let r = block.second.forward(g, p, r)?;
            h = g.add(h, r)?;
        }
        for (site, conv) in self.sites.iter().zip(&self.up) {
            let scale = site.scale.forward(g, p, z)?;
            let shift = site.shift.forward(g, p, z)?;
            h = g.adain(h, scale, shift, self.arch.adain_eps)?;
            h = g.upsample2(h)?;
            h = conv.forward(g, p, h)?;
            h = g.leaky_relu(h, slope);
        }
        let out = self.to_rgb.forward(g, p, h)?;
        Ok(g.tanh(out))
    }
}
