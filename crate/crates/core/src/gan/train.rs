use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{
    build_discriminator, build_generator, discriminator_loss, generator_loss, Discriminator, GanConfig, Generator,
};
use crate::autograd::{AdamConfig, AdamState, Mode, Tape, Tensor};
use crate::error::{Error, Result};

/// One optimizer step. Scores are mean discriminator outputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub real_score: f64,
    pub fake_score: f64,
}

/// Stacks `[C, H, W]` tensors into `[B, C, H, W]`.
pub fn stack(images: &[&Tensor]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::arg("cannot stack an empty batch"))?;
    let mut shape = vec![images.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(images.len() * first.numel());
    for t in images {
        if t.shape() != first.shape() {
            return Err(Error::dim("stack", first.shape(), t.shape()));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(shape, data)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} became {v}")))
    }
}

/// Both networks, their optimizers and the single RNG that drives latents
/// and dropout.
pub struct GanTrainer {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub adam_g: AdamState,
    pub adam_d: AdamState,
    pub rng: ChaCha8Rng,
    pub steps: usize,
}

impl GanTrainer {
    /// Builds both networks from `cfg.seed`.
    pub fn new(cfg: &GanConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let generator = build_generator(cfg, &mut rng)?;
        let discriminator = build_discriminator(cfg, &mut rng)?;
        let adam = AdamConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
        };
        Ok(Self {
            generator,
            discriminator,
            adam_g: AdamState::new(adam),
            adam_d: AdamState::new(adam),
            rng,
            steps: 0,
        })
    }

    fn latent(&mut self, n: usize) -> Tensor {
        Tensor::randn(&[n, self.generator.config.latent_dim], 1.0, &mut self.rng)
    }

    /// Updates the discriminator on `real` plus an equal-size generated
    /// batch. Returns `(d_loss, real_score, fake_score)`.
    pub fn discriminator_step(&mut self, real: &Tensor) -> Result<(f64, f64, f64)> {
        let n = real.shape()[0];
        let z = self.latent(n);
        let fake = self.generator.generate(&z)?;
        let tape = Tape::new();
        let p = self.discriminator.params.bind(&tape);
        let mut bn = self.discriminator.bn.clone();
        let d = &self.discriminator;
        let real_out = d.forward(&tape, &p, tape.constant(real.clone()), Mode::Train, &mut bn, &mut self.rng)?;
        let fake_out = d.forward(&tape, &p, tape.constant(fake), Mode::Train, &mut bn, &mut self.rng)?;
        let loss = discriminator_loss(&tape, real_out, fake_out)?;
        let value = check_finite("discriminator loss", tape.item(loss)?)?;
        let grads = tape.backward(loss)?;
        self.adam_d
            .step(&mut self.discriminator.params, &p.grads(&tape, &grads))?;
        self.discriminator.bn = bn;
        Ok((value, mean(tape.value(real_out).data()), mean(tape.value(fake_out).data())))
    }

    /// Updates the generator through a frozen discriminator. The
    /// discriminator's running statistics are left untouched.
    pub fn generator_step(&mut self, n: usize) -> Result<f64> {
        let z = self.latent(n);
        let tape = Tape::new();
        let pg = self.generator.params.bind(&tape);
        let pd = self.discriminator.params.bind_frozen(&tape);
        let mut bn = self.discriminator.bn.clone();
        let fake = self.generator.forward(&tape, &pg, tape.constant(z))?;
        let out = self
            .discriminator
            .forward(&tape, &pd, fake, Mode::Train, &mut bn, &mut self.rng)?;
        let loss = generator_loss(&tape, out)?;
        let value = check_finite("generator loss", tape.item(loss)?)?;
        let grads = tape.backward(loss)?;
        self.adam_g.step(&mut self.generator.params, &pg.grads(&tape, &grads))?;
        Ok(value)
    }

    /// One discriminator update followed by one generator update.
    pub fn step(&mut self, real: &Tensor) -> Result<StepRecord> {
        let (d_loss, real_score, fake_score) = self.discriminator_step(real)?;
        let g_loss = self.generator_step(real.shape()[0])?;
        self.steps += 1;
        Ok(StepRecord {
            step: self.steps,
            d_loss,
            g_loss,
            real_score,
            fake_score,
        })
    }
}

pub struct GanOutcome {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub log: Vec<StepRecord>,
}

/// Trains on `images` (`[3, H, W]` each, values in `[0, 1]`).
///
/// Each epoch reshuffles and visits every image once in batches of
/// `cfg.batch_size`, the last possibly smaller. `on_epoch` runs after every
/// completed epoch with its 1-based index.
pub fn train_gan<F>(images: &[Tensor], cfg: &GanConfig, mut on_epoch: F) -> Result<GanOutcome>
where
    F: FnMut(usize, &GanTrainer) -> Result<()>,
{
    if images.is_empty() {
        return Err(Error::arg("empty training set"));
    }
    let (h, w) = cfg.image_size;
    for (i, t) in images.iter().enumerate() {
        if t.shape() != [3, h, w] {
            return Err(Error::arg(format!("image {i} has shape {:?}, expected [3, {h}, {w}]", t.shape())));
        }
        if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg(format!("image {i} has pixels outside [0, 1]")));
        }
    }
    let mut trainer = GanTrainer::new(cfg)?;
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut log = Vec::new();
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut trainer.rng);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| trainer.steps >= m) {
                break 'epochs;
            }
            let batch: Vec<&Tensor> = chunk.iter().map(|&i| &images[i]).collect();
            log.push(trainer.step(&stack(&batch)?)?);
        }
        on_epoch(epoch, &trainer)?;
    }
    Ok(GanOutcome {
        generator: trainer.generator,
        discriminator: trainer.discriminator,
        log,
    })
}

/// `step,d_loss,g_loss,real_score,fake_score` rows with a header.
pub fn write_step_log_csv<W: Write>(w: W, log: &[StepRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in log {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
