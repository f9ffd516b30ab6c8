//! The four networks: generator `G`, attribute encoder `E`, attribute
//! disentanglement network `F` and discriminator `D`.

mod discriminator;
mod encoder;
mod generator;
mod layers;
mod params;

use std::fmt::Write as _;

use adgan_tensor::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use discriminator::{Discriminator, DiscriminatorOutput};
pub use encoder::{AttributeEncoder, Disentangler};
pub use generator::Generator;
pub use params::{Bound, ParamSet};

use crate::attributes::AttributeSpace;
use crate::error::{Error, Result};

/// Architecture hyperparameters shared by the four networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Width `c` of the first convolution; deeper layers use `2c`, `4c`, `8c`.
    pub base_channels: usize,
    /// Dimension of the style embedding `z`.
    pub style_dim: usize,
    pub res_blocks: usize,
    pub leaky_slope: f64,
    pub adain_eps: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            base_channels: 64,
            style_dim: 256,
            res_blocks: 2,
            leaky_slope: 0.2,
            adain_eps: 1e-5,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.style_dim == 0 {
            return Err(Error::Config(
                "model.base_channels and model.style_dim must be positive".into(),
            ));
        }
        if !(self.adain_eps > 0.0) {
            return Err(Error::Config("model.adain_eps must be positive".into()));
        }
        Ok(())
    }

    fn check_resolution(&self, resolution: usize, factor: usize) -> Result<()> {
        self.validate()?;
        if resolution < 16 || resolution % 16 != 0 || resolution % factor != 0 {
            return Err(Error::Config(format!(
                "resolution {resolution} must be a positive multiple of 16"
            )));
        }
        Ok(())
    }
}

/// Checks `[N, channels, resolution, resolution]` and returns `N`.
pub(crate) fn check_image(who: &'static str, shape: &[usize], channels: usize, resolution: usize) -> Result<usize> {
    match *shape {
        [n, c, h, w] if c == channels && h == resolution && w == resolution => Ok(n),
        _ => Err(Error::network(
            who,
            format!("input {shape:?}, expected [N, {channels}, {resolution}, {resolution}]"),
        )),
    }
}

/// Which of the four networks a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetKind {
    Generator,
    Encoder,
    Disentangler,
    Discriminator,
}

impl NetKind {
    pub const ALL: [NetKind; 4] = [
        NetKind::Generator,
        NetKind::Encoder,
        NetKind::Disentangler,
        NetKind::Discriminator,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            NetKind::Generator => "G",
            NetKind::Encoder => "E",
            NetKind::Disentangler => "F",
            NetKind::Discriminator => "D",
        }
    }
}

/// Parameters of all four networks.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub arch: ArchConfig,
    pub space: AttributeSpace,
    pub resolution: usize,
    pub generator: Generator<T>,
    pub encoder: AttributeEncoder<T>,
    pub disentangler: Disentangler<T>,
    pub discriminator: Discriminator<T>,
}

impl<T: Real> Model<T> {
    /// Kaiming-initialized networks, drawn in the order G, E, F, D.
    pub fn new<R: Rng + ?Sized>(
        arch: &ArchConfig,
        space: AttributeSpace,
        resolution: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Model {
            arch: arch.clone(),
            space,
            resolution,
            generator: Generator::new(arch, resolution, rng)?,
            encoder: AttributeEncoder::new(arch, resolution, rng)?,
            disentangler: Disentangler::new(arch, &space, resolution, rng)?,
            discriminator: Discriminator::new(arch, &space, resolution, rng)?,
        })
    }

    pub fn params(&self, kind: NetKind) -> &ParamSet<T> {
        match kind {
            NetKind::Generator => self.generator.params(),
            NetKind::Encoder => self.encoder.params(),
            NetKind::Disentangler => self.disentangler.params(),
            NetKind::Discriminator => self.discriminator.params(),
        }
    }

    pub fn params_mut(&mut self, kind: NetKind) -> &mut ParamSet<T> {
        match kind {
            NetKind::Generator => self.generator.params_mut(),
            NetKind::Encoder => self.encoder.params_mut(),
            NetKind::Disentangler => self.disentangler.params_mut(),
            NetKind::Discriminator => self.discriminator.params_mut(),
        }
    }

    /// Text report of every parameter tensor, grouped by network, with totals.
    pub fn audit(&self) -> String {
        let mut out = String::new();
        let mut total = 0;
        for kind in NetKind::ALL {
            let ps = self.params(kind);
            let count = ps.scalar_count();
            total += count;
            let _ = writeln!(
                out,
                "# {} ({:?}): {} tensors, {} parameters",
                kind.prefix(),
                kind,
                ps.len(),
                count
            );
            out.push_str(&ps.audit());
        }
        let _ = writeln!(out, "# total: {total} parameters");
        let deployable =
            self.generator.params().scalar_count() + self.disentangler.params().scalar_count();
        let _ = writeln!(
            out,
            "# deployable model (G + F, all {} age groups): {deployable} parameters",
            self.space.n_age
        );
        out
    }
}
