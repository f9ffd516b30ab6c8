//! Attribute-disentanglement GAN for controllable face aging.
//!
//! A generator renders an input face with a target attribute embedding
//! injected through adaptive instance normalization. Training runs in two
//! stages: the generator, an individual attribute encoder and a multi-head
//! discriminator first learn image-to-image attribute transfer from style
//! images; then, with those frozen, a disentanglement network learns to
//! produce a common embedding straight from the attribute label.

pub mod attributes;
pub mod data;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod grid;
pub mod nn;
pub mod objectives;
pub mod train;

pub use attributes::{AgeBinning, AttributeCode, AttributeLabel, AttributeSpace};
pub use error::{Error, Result};
pub use nn::{ArchConfig, Model, NetKind};
