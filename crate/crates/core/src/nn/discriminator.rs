use adgan_tensor::{Graph, Real, Var};
use rand::Rng;

use super::layers::Conv;
use super::params::{Bound, ParamSet};
use super::{check_image, ArchConfig};
use crate::attributes::AttributeSpace;
use crate::error::Result;

/// Discriminator with one real/fake logit per attribute combination.
///
/// Four stride-2 convolutions produce the feature layer used for feature
/// matching; a 1x1 convolution maps it to `n` logit maps, averaged over
/// space. Head `t` is selected by the flat index of the attribute label.
#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    params: ParamSet<T>,
    convs: [Conv; 4],
    head: Conv,
    resolution: usize,
    slope: f64,
}

/// Output of [`Discriminator::forward`].
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorOutput {
    /// `[N, n]`
    pub logits: Var,
    /// Penultimate activations `[N, 8c, H/16, H/16]`.
    pub features: Var,
}

impl<T: Real> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(
        arch: &ArchConfig,
        space: &AttributeSpace,
        resolution: usize,
        rng: &mut R,
    ) -> Result<Self> {
        arch.check_resolution(resolution, 16)?;
        let c = arch.base_channels;
        let widths = [3, c, 2 * c, 4 * c, 8 * c];
        let mut ps = ParamSet::default();
        let convs = std::array::from_fn(|i| {
            Conv::down(&mut ps, rng, &format!("D.conv{i}"), widths[i], widths[i + 1])
        });
        let head = Conv::new(&mut ps, rng, "D.head", 8 * c, space.len(), 1, 1, 0);
        Ok(Discriminator {
            params: ps,
            convs,
            head,
            resolution,
            slope: arch.leaky_slope,
        })
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, image: Var) -> Result<DiscriminatorOutput> {
        check_image("discriminator", g.shape(image), 3, self.resolution)?;
        let mut h = image;
        for conv in &self.convs {
            h = conv.forward(g, p, h)?;
            h = g.leaky_relu(h, self.slope);
        }
        let features = h;
        let maps = self.head.forward(g, p, features)?;
        let logits = g.global_avg_pool(maps)?;
        Ok(DiscriminatorOutput { logits, features })
    }
}
