//! Loss terms and the two stage objectives.
//!
//! Discriminator probabilities are `sigmoid(logit)`; every log-probability
//! is written through `softplus` so saturated logits stay finite:
//! `log D = -softplus(-l)` and `log(1 - D) = -softplus(l)`.

use adgan_tensor::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::attributes::AttributeLabel;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn::{Bound, Model, NetKind};

/// Weights of the reconstruction, feature-matching and disentanglement
/// terms, and of the embedding term inside the disentanglement loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_fm: f64,
    pub lambda_dis: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_rec: 0.1,
            lambda_fm: 1.0,
            lambda_dis: 1.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_rec", self.lambda_rec),
            ("lambda_fm", self.lambda_fm),
            ("lambda_dis", self.lambda_dis),
            ("beta", self.beta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "weights.{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Generator-side adversarial term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanLoss {
    /// `log(1 - D(fake))`, minimized; range `(-inf, 0]`.
    #[default]
    Saturating,
    /// `-log D(fake)`, minimized.
    NonSaturating,
}

/// `-(mean log D(real) + mean log(1 - D(fake)))`: the discriminator's
/// ascent objective, negated for minimization. Inputs are `[N]` logits of
/// the heads selected by each sample's label.
pub fn gan_loss_d<T: Real>(g: &mut Graph<T>, real_logits: Var, fake_logits: Var) -> Result<Var> {
    let neg_real = g.scale(real_logits, -1.0);
    let real_term = g.softplus(neg_real);
    let real_term = g.mean(real_term);
    let fake_term = g.softplus(fake_logits);
    let fake_term = g.mean(fake_term);
    Ok(g.add(real_term, fake_term)?)
}

pub fn gan_loss_g<T: Real>(g: &mut Graph<T>, fake_logits: Var, kind: GanLoss) -> Var {
    match kind {
        GanLoss::Saturating => {
            let sp = g.softplus(fake_logits);
            let m = g.mean(sp);
            g.scale(m, -1.0)
        }
        GanLoss::NonSaturating => {
            let neg = g.scale(fake_logits, -1.0);
            let sp = g.softplus(neg);
            g.mean(sp)
        }
    }
}

/// Mean absolute error between an image and its self-reconstruction.
pub fn recon_loss<T: Real>(g: &mut Graph<T>, image: Var, reconstruction: Var) -> Result<Var> {
    Ok(g.l1_mean(image, reconstruction)?)
}

/// Mean absolute error between discriminator features of two images.
pub fn fm_loss<T: Real>(g: &mut Graph<T>, feat_fake: Var, feat_style: Var) -> Result<Var> {
    Ok(g.l1_mean(feat_fake, feat_style)?)
}

/// `mean|X_E - X_F| + beta * mean|z_E - z_F|`.
pub fn dis_loss<T: Real>(
    g: &mut Graph<T>,
    image_e: Var,
    image_f: Var,
    z_e: Var,
    z_f: Var,
    beta: f64,
) -> Result<Var> {
    let img = g.l1_mean(image_e, image_f)?;
    let emb = g.l1_mean(z_e, z_f)?;
    let emb = g.scale(emb, beta);
    Ok(g.add(img, emb)?)
}

/// Graph handles of all four parameter sets.
#[derive(Clone, Debug)]
pub struct Binds {
    pub generator: Bound,
    pub encoder: Bound,
    pub disentangler: Bound,
    pub discriminator: Bound,
}

impl Binds {
    /// Binds every network; those listed in `trainable` receive gradients.
    pub fn new<T: Real>(g: &mut Graph<T>, model: &Model<T>, trainable: &[NetKind]) -> Self {
        let mut bind = |kind: NetKind| model.params(kind).bind(g, trainable.contains(&kind));
        Binds {
            generator: bind(NetKind::Generator),
            encoder: bind(NetKind::Encoder),
            disentangler: bind(NetKind::Disentangler),
            discriminator: bind(NetKind::Discriminator),
        }
    }

    pub fn get(&self, kind: NetKind) -> &Bound {
        match kind {
            NetKind::Generator => &self.generator,
            NetKind::Encoder => &self.encoder,
            NetKind::Disentangler => &self.disentangler,
            NetKind::Discriminator => &self.discriminator,
        }
    }
}

/// Batch tensors placed on a graph as constants.
#[derive(Clone, Debug)]
pub struct BatchVars {
    pub content: Var,
    pub style: Var,
    pub content_heads: Vec<usize>,
    pub style_heads: Vec<usize>,
}

impl BatchVars {
    pub fn new<T: Real>(g: &mut Graph<T>, model: &Model<T>, batch: &Batch<T>) -> Result<Self> {
        let heads = |labels: &[AttributeLabel]| -> Result<Vec<usize>> {
            labels.iter().map(|&l| model.space.flat_index(l)).collect()
        };
        Ok(BatchVars {
            content: g.constant(batch.content.clone()),
            style: g.constant(batch.style.clone()),
            content_heads: heads(&batch.content_labels)?,
            style_heads: heads(&batch.style_labels)?,
        })
    }
}

/// Discriminator objective terms.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorTerms {
    pub loss: Var,
    pub real_logits: Var,
    pub fake_logits: Var,
}

/// Generator-side terms shared by both stages.
#[derive(Clone, Copy, Debug)]
pub struct TranslationTerms {
    pub gan: Var,
    pub recon: Var,
    pub fm: Var,
    /// `X_hat = G(X_i, z_style)`.
    pub fake: Var,
    /// Weighted sum `gan + lambda_rec * recon + lambda_fm * fm`.
    pub total: Var,
}

/// Stage-2 objective terms.
#[derive(Clone, Copy, Debug)]
pub struct DisentangleTerms {
    pub translation: TranslationTerms,
    pub dis: Var,
    pub z_f: Var,
    /// `translation.total + lambda_dis * dis`.
    pub total: Var,
}

fn weighted_sum<T: Real>(g: &mut Graph<T>, base: Var, terms: &[(f64, Var)]) -> Result<Var> {
    let mut acc = base;
    for &(w, v) in terms {
        // zero-weight terms stay off the loss path entirely
        if w == 0.0 {
            continue;
        }
        let s = if w == 1.0 { v } else { g.scale(v, w) };
        acc = g.add(acc, s)?;
    }
    Ok(acc)
}

/// `-(log D^{S_i}(X_i) + log(1 - D^{S_t}(G(X_i, E(X_t)))))` with the fake
/// image detached, so only discriminator parameters receive gradients.
pub fn discriminator_objective<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    binds: &Binds,
    batch: &BatchVars,
) -> Result<DiscriminatorTerms> {
    let z = model.encoder.forward(g, &binds.encoder, batch.style)?;
    let fake = model.generator.forward(g, &binds.generator, batch.content, z)?;
    let fake = g.detach(fake);
    let real_out = model.discriminator.forward(g, &binds.discriminator, batch.content)?;
    let fake_out = model.discriminator.forward(g, &binds.discriminator, fake)?;
    let real_logits = g.gather(real_out.logits, &batch.content_heads)?;
    let fake_logits = g.gather(fake_out.logits, &batch.style_heads)?;
    let loss = gan_loss_d(g, real_logits, fake_logits)?;
    Ok(DiscriminatorTerms {
        loss,
        real_logits,
        fake_logits,
    })
}

/// Adversarial, reconstruction and feature-matching terms for given style
/// embeddings: `z_style` renders `X_i` towards the style label and
/// `z_content` reconstructs `X_i`.
#[allow(clippy::too_many_arguments)]
pub fn translation_terms<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    binds: &Binds,
    batch: &BatchVars,
    z_style: Var,
    z_content: Var,
    weights: &LossWeights,
    gan: GanLoss,
) -> Result<TranslationTerms> {
    let fake = model
        .generator
        .forward(g, &binds.generator, batch.content, z_style)?;
    let fake_out = model.discriminator.forward(g, &binds.discriminator, fake)?;
    let fake_logits = g.gather(fake_out.logits, &batch.style_heads)?;
    let gan_term = gan_loss_g(g, fake_logits, gan);

    let recon_img = model
        .generator
        .forward(g, &binds.generator, batch.content, z_content)?;
    let recon = recon_loss(g, batch.content, recon_img)?;

    let style_out = model
        .discriminator
        .forward(g, &binds.discriminator, batch.style)?;
    let style_features = g.detach(style_out.features);
    let fm = fm_loss(g, fake_out.features, style_features)?;

    let total = weighted_sum(
        g,
        gan_term,
        &[(weights.lambda_rec, recon), (weights.lambda_fm, fm)],
    )?;
    Ok(TranslationTerms {
        gan: gan_term,
        recon,
        fm,
        fake,
        total,
    })
}

/// Stage-1 generator/encoder objective with `z = E(X_t)` and `E(X_i)`.
pub fn translator_objective<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    binds: &Binds,
    batch: &BatchVars,
    weights: &LossWeights,
    gan: GanLoss,
) -> Result<TranslationTerms> {
    let z_style = model.encoder.forward(g, &binds.encoder, batch.style)?;
    let z_content = model.encoder.forward(g, &binds.encoder, batch.content)?;
    translation_terms(g, model, binds, batch, z_style, z_content, weights, gan)
}

/// Both stage-1 objectives evaluated at the same parameters.
pub fn stage1_objective<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    binds: &Binds,
    batch: &BatchVars,
    weights: &LossWeights,
    gan: GanLoss,
) -> Result<(DiscriminatorTerms, TranslationTerms)> {
    let d = discriminator_objective(g, model, binds, batch)?;
    let ge = translator_objective(g, model, binds, batch, weights, gan)?;
    Ok((d, ge))
}

/// Stage-2 terms for given common embeddings `z_f_style = F(S_t)` and
/// `z_f_content = F(S_i)`.
#[allow(clippy::too_many_arguments)]
pub fn disentangle_terms<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    binds: &Binds,
    batch: &BatchVars,
    z_f_style: Var,
    z_f_content: Var,
    weights: &LossWeights,
    gan: GanLoss,
) -> Result<DisentangleTerms> {
    let translation = translation_terms(
        g,
        model,
        binds,
        batch,
        z_f_style,
        z_f_content,
        weights,
        gan,
    )?;
    let z_e = model.encoder.forward(g, &binds.encoder, batch.style)?;
    let image_e = model
        .generator
        .forward(g, &binds.generator, batch.content, z_e)?;
    let z_e = g.detach(z_e);
    let image_e = g.detach(image_e);
    let dis = dis_loss(g, image_e, translation.fake, z_e, z_f_style, weights.beta)?;
    let total = weighted_sum(g, translation.total, &[(weights.lambda_dis, dis)])?;
    Ok(DisentangleTerms {
        translation,
        dis,
        z_f: z_f_style,
        total,
    })
}

/// Stage-2 objective: the stage-1 generator terms with `F(S_t)` in place
/// of `E(X_t)` (and `F(S_i)` in place of `E(X_i)`), plus the weighted
/// disentanglement loss. `style_codes` and `content_codes` are
/// `[N, n+1, H, H]` attribute codes of the style and content labels.
#[allow(clippy::too_many_arguments)]
pub fn stage2_objective<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    binds: &Binds,
    batch: &BatchVars,
    style_codes: &Tensor<T>,
    content_codes: &Tensor<T>,
    weights: &LossWeights,
    gan: GanLoss,
) -> Result<DisentangleTerms> {
    let sc = g.constant(style_codes.clone());
    let cc = g.constant(content_codes.clone());
    let z_style = model.disentangler.forward(g, &binds.disentangler, sc)?;
    let z_content = model.disentangler.forward(g, &binds.disentangler, cc)?;
    disentangle_terms(g, model, binds, batch, z_style, z_content, weights, gan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_of(g: &Graph<f64>, v: Var) -> f64 {
        g.value(v).item().unwrap()
    }

    fn logits(g: &mut Graph<f64>, v: &[f64]) -> Var {
        g.constant(Tensor::from_f64(vec![v.len()], v).unwrap())
    }

    #[test]
    fn perfect_discriminator_has_zero_loss() {
        let mut g = Graph::new();
        let r = logits(&mut g, &[60.0, 80.0]);
        let f = logits(&mut g, &[-60.0, -70.0]);
        let l = gan_loss_d(&mut g, r, f).unwrap();
        assert!(scalar_of(&g, l) < 1e-25);
    }

    #[test]
    fn chance_discriminator_loss_is_two_ln2() {
        let mut g = Graph::new();
        let r = logits(&mut g, &[0.0]);
        let f = logits(&mut g, &[0.0]);
        let l = gan_loss_d(&mut g, r, f).unwrap();
        assert!((scalar_of(&g, l) - 1.3862943611198906).abs() < 1e-15);
    }

    #[test]
    fn symmetric_logits_give_twice_softplus() {
        for a in [-3.0, -0.5, 0.25, 2.0, 7.5] {
            let mut g = Graph::new();
            let r = logits(&mut g, &[a]);
            let f = logits(&mut g, &[-a]);
            let l = gan_loss_d(&mut g, r, f).unwrap();
            let expected = 2.0 * (1.0 + f64::exp(-a)).ln();
            assert!((scalar_of(&g, l) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_terms() {
        let mut g = Graph::new();
        let half = logits(&mut g, &[0.0]);
        let sat = gan_loss_g(&mut g, half, GanLoss::Saturating);
        assert!((scalar_of(&g, sat) + std::f64::consts::LN_2).abs() < 1e-15);
        let ns = gan_loss_g(&mut g, half, GanLoss::NonSaturating);
        assert!((scalar_of(&g, ns) - std::f64::consts::LN_2).abs() < 1e-15);

        let confident = logits(&mut g, &[20.0]);
        let sat = gan_loss_g(&mut g, confident, GanLoss::Saturating);
        let v = scalar_of(&g, sat);
        assert!(v.is_finite() && v <= -20.0);
        let huge = logits(&mut g, &[1e4]);
        let sat = gan_loss_g(&mut g, huge, GanLoss::Saturating);
        assert_eq!(scalar_of(&g, sat), -1e4);
    }

    #[test]
    fn l1_terms() {
        let mut g = Graph::new();
        let x = logits(&mut g, &[1.0, 2.0]);
        let zero = logits(&mut g, &[0.0, 0.0]);
        let r = recon_loss(&mut g, x, zero).unwrap();
        assert_eq!(scalar_of(&g, r), 1.5);
        let r0 = recon_loss(&mut g, x, x).unwrap();
        assert_eq!(scalar_of(&g, r0), 0.0);

        let nx = logits(&mut g, &[-1.0, -2.0]);
        let r_neg = recon_loss(&mut g, nx, zero).unwrap();
        assert_eq!(scalar_of(&g, r_neg), 1.5);

        let a = logits(&mut g, &[1.0, 1.0]);
        let b = logits(&mut g, &[0.0, 3.0]);
        let ab = fm_loss(&mut g, a, b).unwrap();
        let ba = fm_loss(&mut g, b, a).unwrap();
        assert_eq!(scalar_of(&g, ab), 1.5);
        assert_eq!(scalar_of(&g, ba), 1.5);

        let short = logits(&mut g, &[1.0]);
        assert!(recon_loss(&mut g, x, short).is_err());
    }

    #[test]
    fn dis_loss_combines_image_and_embedding_terms() {
        let mut g = Graph::new();
        let xe = logits(&mut g, &[0.0, 0.0, 0.0, 0.0]);
        let xf = logits(&mut g, &[0.2, -0.2, 0.1, 0.3]);
        let ze = logits(&mut g, &[1.0, 2.0]);
        let zf = logits(&mut g, &[1.1, 1.9]);
        let l = dis_loss(&mut g, xe, xf, ze, zf, 1.0).unwrap();
        assert!((scalar_of(&g, l) - 0.3).abs() < 1e-12);
        let l2 = dis_loss(&mut g, xe, xf, ze, zf, 2.0).unwrap();
        assert!((scalar_of(&g, l2) - scalar_of(&g, l) - 0.1).abs() < 1e-12);
        let same = dis_loss(&mut g, xe, xe, ze, ze, 1.0).unwrap();
        assert_eq!(scalar_of(&g, same), 0.0);
    }

    #[test]
    fn negative_weight_rejected() {
        let w = LossWeights {
            beta: -1.0,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }
}
