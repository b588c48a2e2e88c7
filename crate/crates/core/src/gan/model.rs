use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{init_he_uniform, init_uniform, Bound, Mode, ParamStore, RunningStats, Tape, Tensor, Var, BN_EPS};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub latent_dim: usize,
    /// `(height, width)`, powers of two, at least 16.
    pub image_size: (usize, usize),
    pub base_channels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stops early once this many steps have run.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub dropout: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            latent_dim: 100,
            image_size: (32, 32),
            base_channels: 32,
            epochs: 50,
            batch_size: 16,
            max_steps: None,
            seed: 0,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            dropout: 0.3,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        for (name, v) in [("height", h), ("width", w)] {
            if !v.is_power_of_two() || v < 16 {
                return Err(Error::config(format!("image {name} {v} must be a power of two >= 16")));
            }
        }
        if self.latent_dim == 0 || self.base_channels == 0 || self.batch_size == 0 {
            return Err(Error::config("latent_dim, base_channels and batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("adam settings out of range"));
        }
        Ok(())
    }
}

fn conv_bias(tape: &Tape, p: &Bound, x: Var, name: &str, stride: usize) -> Result<Var> {
    let y = tape.conv2d(x, p.var(&format!("{name}.w")), stride, 1)?;
    tape.channel_bias(y, p.var(&format!("{name}.b")))
}

/// Dense → ReLU → reshape → two (upsample ×2, 3×3 conv, ReLU) stages →
/// 3×3 conv → sigmoid.
#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GanConfig,
    pub params: ParamStore,
}

pub fn build_generator<R: Rng + ?Sized>(config: &GanConfig, rng: &mut R) -> Result<Generator> {
    config.validate()?;
    let c = config.base_channels;
    let (h, w) = config.image_size;
    let seed_cells = c * (h / 4) * (w / 4);
    let mut p = ParamStore::new();
    p.insert("g.fc.w", init_he_uniform(&[config.latent_dim, seed_cells], config.latent_dim, 0.0, rng));
    p.insert("g.fc.b", Tensor::zeros(&[seed_cells]));
    for name in ["g.up1", "g.up2"] {
        p.insert(format!("{name}.w"), init_he_uniform(&[c, c, 3, 3], c * 9, 0.0, rng));
        p.insert(format!("{name}.b"), Tensor::zeros(&[c]));
    }
    p.insert("g.out.w", init_uniform(&[IMAGE_CHANNELS, c, 3, 3], c * 9, rng));
    p.insert("g.out.b", Tensor::zeros(&[IMAGE_CHANNELS]));
    Ok(Generator {
        config: config.clone(),
        params: p,
    })
}

impl Generator {
    /// `z: [B, latent]` to images `[B, 3, H, W]` in `(0, 1)`.
    pub fn forward(&self, tape: &Tape, p: &Bound, z: Var) -> Result<Var> {
        let (h, w) = self.config.image_size;
        let c = self.config.base_channels;
        let b = tape.shape(z)[0];
        let x = tape.relu(tape.dense(z, p.var("g.fc.w"), p.var("g.fc.b"))?);
        let mut x = tape.reshape(x, &[b, c, h / 4, w / 4])?;
        for name in ["g.up1", "g.up2"] {
            x = tape.upsample2d_nearest(x, 2)?;
            x = tape.relu(conv_bias(tape, p, x, name, 1)?);
        }
        Ok(tape.sigmoid(conv_bias(tape, p, x, "g.out", 1)?))
    }

    /// Value-only forward.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let out = self.forward(&tape, &p, tape.constant(z.clone()))?;
        Ok((*tape.value(out)).clone())
    }
}

/// Strided conv + leaky ReLU + dropout, two (strided conv, batch norm,
/// leaky ReLU) blocks, then flatten → dense → sigmoid.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: GanConfig,
    pub params: ParamStore,
    pub bn: [RunningStats; 2],
}

pub fn build_discriminator<R: Rng + ?Sized>(config: &GanConfig, rng: &mut R) -> Result<Discriminator> {
    config.validate()?;
    let c = config.base_channels;
    let (h, w) = config.image_size;
    let mut p = ParamStore::new();
    p.insert("d.conv1.w", init_he_uniform(&[c, IMAGE_CHANNELS, 3, 3], IMAGE_CHANNELS * 9, LEAKY_SLOPE, rng));
    p.insert("d.conv1.b", Tensor::zeros(&[c]));
    p.insert("d.conv2.w", init_he_uniform(&[2 * c, c, 3, 3], c * 9, LEAKY_SLOPE, rng));
    p.insert("d.bn2.gamma", Tensor::ones(&[2 * c]));
    p.insert("d.bn2.beta", Tensor::zeros(&[2 * c]));
    p.insert("d.conv3.w", init_he_uniform(&[4 * c, 2 * c, 3, 3], 2 * c * 9, LEAKY_SLOPE, rng));
    p.insert("d.bn3.gamma", Tensor::ones(&[4 * c]));
    p.insert("d.bn3.beta", Tensor::zeros(&[4 * c]));
    let flat = 4 * c * (h / 8) * (w / 8);
    p.insert("d.fc.w", init_uniform(&[flat, 1], flat, rng));
    p.insert("d.fc.b", Tensor::zeros(&[1]));
    Ok(Discriminator {
        config: config.clone(),
        params: p,
        bn: [RunningStats::new(2 * c), RunningStats::new(4 * c)],
    })
}

impl Discriminator {
    /// Images `[B, 3, H, W]` to real-probabilities `[B, 1]`.
    ///
    /// Batch-norm statistics are read from and, in train mode, folded into
    /// `bn`; pass a copy to keep the layer's own statistics untouched.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &Tape,
        p: &Bound,
        x: Var,
        mode: Mode,
        bn: &mut [RunningStats; 2],
        rng: &mut R,
    ) -> Result<Var> {
        let x = tape.leaky_relu(conv_bias(tape, p, x, "d.conv1", 2)?, LEAKY_SLOPE)?;
        let mut x = tape.dropout(x, self.config.dropout, mode, rng)?;
        for (i, stats) in bn.iter_mut().enumerate() {
            let n = i + 2;
            x = tape.conv2d(x, p.var(&format!("d.conv{n}.w")), 2, 1)?;
            x = tape.batchnorm2d(
                x,
                p.var(&format!("d.bn{n}.gamma")),
                p.var(&format!("d.bn{n}.beta")),
                BN_EPS,
                mode,
                stats,
            )?;
            x = tape.leaky_relu(x, LEAKY_SLOPE)?;
        }
        let flat = tape.flatten(x)?;
        Ok(tape.sigmoid(tape.dense(flat, p.var("d.fc.w"), p.var("d.fc.b"))?))
    }

    /// Eval-mode scores for a batch of images.
    pub fn score(&self, images: &Tensor) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let mut bn = self.bn.clone();
        let mut unused = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let out = self.forward(&tape, &p, tape.constant(images.clone()), Mode::Eval, &mut bn, &mut unused)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Parameters plus running statistics, for checkpoints.
    pub fn state(&self) -> BTreeMap<String, Tensor> {
        let mut out = self.params.tensors().clone();
        for (i, s) in self.bn.iter().enumerate() {
            out.insert(format!("d.bn{}.running_mean", i + 2), Tensor::from_vec(s.mean.clone()));
            out.insert(format!("d.bn{}.running_var", i + 2), Tensor::from_vec(s.var.clone()));
        }
        out
    }

    pub fn load_state(&mut self, state: &BTreeMap<String, Tensor>) -> Result<()> {
        self.params.load_from(state)?;
        for (i, s) in self.bn.iter_mut().enumerate() {
            for (suffix, dst) in [("running_mean", &mut s.mean), ("running_var", &mut s.var)] {
                let key = format!("d.bn{}.{suffix}", i + 2);
                let t = state.get(&key).ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
                if t.numel() != dst.len() {
                    return Err(Error::dim("load_state", &[dst.len()], t.shape()));
                }
                dst.copy_from_slice(t.data());
            }
        }
        Ok(())
    }
}

/// `BCE(real, 1) + BCE(fake, 0)`, each a batch mean.
pub fn discriminator_loss(tape: &Tape, real_out: Var, fake_out: Var) -> Result<Var> {
    let ones = Tensor::ones(&tape.shape(real_out));
    let zeros = Tensor::zeros(&tape.shape(fake_out));
    tape.add(tape.bce_loss(real_out, &ones)?, tape.bce_loss(fake_out, &zeros)?)
}

/// `BCE(fake, 1)`.
pub fn generator_loss(tape: &Tape, fake_out: Var) -> Result<Var> {
    tape.bce_loss(fake_out, &Tensor::ones(&tape.shape(fake_out)))
}
