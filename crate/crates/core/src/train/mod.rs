//! Two-stage training: stage 1 alternates discriminator and
//! generator/encoder updates; stage 2 freezes those three networks and
//! trains the disentanglement network alone.

pub mod checkpoint;
mod config;
mod metrics;

use adgan_tensor::{Graph, Gradients, Real, RmsProp, Tensor, Var};

pub use checkpoint::{Checkpoint, CheckpointError, OptimStates, TrainState};
pub use config::{DatasetConfig, LabelNames, Precision, RmsPropConfig, TrainConfig};
pub use metrics::{MetricRecord, MetricsLog};

use crate::attributes::{AttributeCode, AttributeLabel};
use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Model, NetKind};
use crate::objectives::{
    discriminator_objective, stage2_objective, translator_objective, BatchVars, Binds,
};

/// Loss values of one step, in logging order.
pub type StepRecord = Vec<(&'static str, f64)>;

pub const STAGE1_NETS: [NetKind; 3] = [NetKind::Generator, NetKind::Encoder, NetKind::Discriminator];
pub const STAGE2_NETS: [NetKind; 1] = [NetKind::Disentangler];

/// Model, optimizer state and progress of one run.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: Model<T>,
    pub optim: OptimStates<T>,
    pub state: TrainState,
}

fn scalar<T: Real>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).data()[0].as_f64()
}

impl<T: Real> Trainer<T> {
    /// Fresh networks; the run's generator is seeded from `config.seed`
    /// and draws the initial weights before any batch.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut state = TrainState::new(config.seed);
        let model = Model::new(&config.arch, config.attributes, config.resolution, &mut state.rng)?;
        let optim = OptimStates::new(&model);
        Ok(Trainer {
            config,
            model,
            optim,
            state,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint<T>) -> Self {
        Trainer {
            config: ck.config,
            model: ck.model,
            optim: ck.optim,
            state: ck.state,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config: self.config.clone(),
            state: self.state.clone(),
            model: self.model.clone(),
            optim: self.optim.clone(),
        }
    }

    fn optimizer(&self) -> RmsProp {
        RmsProp {
            learning_rate: self.config.learning_rate,
            rho: self.config.rmsprop.rho,
            eps: self.config.rmsprop.eps,
        }
    }

    fn non_finite(&self, tensor: impl Into<String>) -> Error {
        Error::NonFinite {
            tensor: tensor.into(),
            iteration: self.state.iteration(),
        }
    }

    fn check_losses(&self, g: &Graph<T>, terms: &[(&'static str, Var)]) -> Result<StepRecord> {
        let mut rec = Vec::with_capacity(terms.len());
        for &(name, v) in terms {
            let x = scalar(g, v);
            if !x.is_finite() {
                return Err(self.non_finite(name));
            }
            rec.push((name, x));
        }
        Ok(rec)
    }

    /// Applies one RMSProp update to every network in `trainable` and
    /// verifies no gradient reached the others.
    fn apply(
        &mut self,
        binds: &Binds,
        grads: &Gradients<T>,
        trainable: &[NetKind],
    ) -> Result<()> {
        for kind in NetKind::ALL {
            if trainable.contains(&kind) {
                continue;
            }
            let ps = self.model.params(kind);
            for (i, &v) in binds.get(kind).vars().iter().enumerate() {
                if grads.contains(v) {
                    return Err(Error::FrozenViolation(ps.name(i).to_string()));
                }
            }
        }
        for &kind in trainable {
            let ps = self.model.params(kind);
            for (i, &v) in binds.get(kind).vars().iter().enumerate() {
                if let Some(gr) = grads.get(v) {
                    if gr.iter().any(|x| !x.is_finite()) {
                        return Err(self.non_finite(format!("grad {}", ps.name(i))));
                    }
                }
            }
        }
        let opt = self.optimizer();
        for &kind in trainable {
            let vars = binds.get(kind).vars().to_vec();
            let (params, states) = (self.model.params_mut(kind), self.optim.get_mut(kind));
            for (i, v) in vars.into_iter().enumerate() {
                let zeros;
                let gr = match grads.get(v) {
                    Some(gr) => gr,
                    None => {
                        zeros = vec![T::zero(); params.get(i).numel()];
                        &zeros
                    }
                };
                opt.step(params.get_mut(i), gr, &mut states[i])?;
            }
        }
        Ok(())
    }

    /// One discriminator update followed by one generator/encoder update.
    pub fn stage1_step(&mut self, batch: &Batch<T>) -> Result<StepRecord> {
        let mut g = Graph::new();
        let binds = Binds::new(&mut g, &self.model, &[NetKind::Discriminator]);
        let bv = BatchVars::new(&mut g, &self.model, batch)?;
        let d = discriminator_objective(&mut g, &self.model, &binds, &bv)?;
        let mut rec = self.check_losses(&g, &[("loss_d", d.loss)])?;
        let grads = g.backward(d.loss)?;
        self.apply(&binds, &grads, &[NetKind::Discriminator])?;
        drop(g);

        let trainable = [NetKind::Generator, NetKind::Encoder];
        let mut g = Graph::new();
        let binds = Binds::new(&mut g, &self.model, &trainable);
        let bv = BatchVars::new(&mut g, &self.model, batch)?;
        let t = translator_objective(
            &mut g,
            &self.model,
            &binds,
            &bv,
            &self.config.weights,
            self.config.gan_loss,
        )?;
        rec.extend(self.check_losses(
            &g,
            &[
                ("gan_g", t.gan),
                ("recon", t.recon),
                ("fm", t.fm),
                ("loss_ge", t.total),
            ],
        )?);
        let grads = g.backward(t.total)?;
        self.apply(&binds, &grads, &trainable)?;
        Ok(rec)
    }

    /// Attribute codes `[N, n+1, H, H]` for `labels`, with fresh noise.
    pub fn sample_codes(&mut self, labels: &[AttributeLabel]) -> Result<Tensor<T>> {
        let codes = labels
            .iter()
            .map(|&l| {
                AttributeCode::sample(l, &self.model.space, self.model.resolution, &mut self.state.rng)
                    .map(AttributeCode::into_tensor)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&codes)?)
    }

    /// One disentanglement-network update with G, E and D frozen.
    pub fn stage2_step(&mut self, batch: &Batch<T>) -> Result<StepRecord> {
        let style_codes = self.sample_codes(&batch.style_labels)?;
        let content_codes = self.sample_codes(&batch.content_labels)?;
        let mut g = Graph::new();
        let binds = Binds::new(&mut g, &self.model, &STAGE2_NETS);
        let bv = BatchVars::new(&mut g, &self.model, batch)?;
        let f = stage2_objective(
            &mut g,
            &self.model,
            &binds,
            &bv,
            &style_codes,
            &content_codes,
            &self.config.weights,
            self.config.gan_loss,
        )?;
        let rec = self.check_losses(
            &g,
            &[
                ("gan_f", f.translation.gan),
                ("recon_f", f.translation.recon),
                ("fm_f", f.translation.fm),
                ("dis", f.dis),
                ("loss_f", f.total),
            ],
        )?;
        let grads = g.backward(f.total)?;
        self.apply(&binds, &grads, &STAGE2_NETS)?;
        Ok(rec)
    }

    pub fn finished(&self) -> bool {
        self.state.stage1_done >= self.config.stage1_iters
            && self.state.stage2_done >= self.config.stage2_iters
    }

    /// Runs the remaining iterations of both stages; `on_checkpoint` is
    /// called every `checkpoint_interval` iterations.
    pub fn run(
        &mut self,
        dataset: &Dataset,
        log: &mut MetricsLog,
        mut on_checkpoint: impl FnMut(&Self) -> Result<()>,
    ) -> Result<()> {
        dataset.require_all_classes()?;
        if dataset.resolution() != self.config.resolution || dataset.space() != self.config.attributes {
            return Err(Error::Config(
                "dataset resolution or attribute space differs from the config".into(),
            ));
        }
        let bs = self.config.batch_size;
        while !self.finished() {
            let batch: Batch<T> = dataset.sample_batch(bs, &mut self.state.rng)?;
            let iter = self.state.iteration();
            let rec = if self.state.stage1_done < self.config.stage1_iters {
                let r = self.stage1_step(&batch)?;
                self.state.stage1_done += 1;
                r
            } else {
                let r = self.stage2_step(&batch)?;
                self.state.stage2_done += 1;
                r
            };
            for (name, v) in rec {
                log.push(iter, name, v)?;
            }
            let interval = self.config.checkpoint_interval;
            if interval > 0 && self.state.iteration() % interval == 0 && !self.finished() {
                on_checkpoint(self)?;
            }
        }
        log.flush()
    }
}

/// Trains from scratch per `config` and returns the final state.
pub fn train<T: Real>(config: TrainConfig, dataset: &Dataset, log: &mut MetricsLog) -> Result<Trainer<T>> {
    dataset.require_all_classes()?;
    let mut t = Trainer::new(config)?;
    t.run(dataset, log, |_| Ok(()))?;
    Ok(t)
}
