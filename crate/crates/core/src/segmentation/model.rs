use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mask_cls::SegmentationPrediction;
use crate::autograd::{init_uniform, Bound, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Sizes of the toy query-based segmenter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskFormerConfig {
    pub num_classes: usize,
    pub num_queries: usize,
    pub embed_dim: usize,
    /// Output stride of the pixel backbone; a power of two.
    pub stride: usize,
    pub feature_channels: usize,
    pub in_channels: usize,
    pub image_height: usize,
    pub image_width: usize,
}

impl Default for MaskFormerConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            num_queries: 20,
            embed_dim: 64,
            stride: 4,
            feature_channels: 32,
            in_channels: 3,
            image_height: 32,
            image_width: 32,
        }
    }
}

impl MaskFormerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.num_classes,
            self.num_queries,
            self.embed_dim,
            self.stride,
            self.feature_channels,
            self.in_channels,
            self.image_height,
            self.image_width,
        ];
        if positive.contains(&0) {
            return Err(Error::config("all maskformer sizes must be positive"));
        }
        if !self.stride.is_power_of_two() {
            return Err(Error::config(format!("stride {} is not a power of two", self.stride)));
        }
        if self.image_height % self.stride != 0 || self.image_width % self.stride != 0 {
            return Err(Error::config(format!(
                "image {}x{} not divisible by stride {}",
                self.image_height, self.image_width, self.stride
            )));
        }
        Ok(())
    }

    fn stages(&self) -> usize {
        self.stride.trailing_zeros() as usize
    }

    pub fn feature_cells(&self) -> usize {
        (self.image_height / self.stride) * (self.image_width / self.stride)
    }
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct MaskFormerOutput {
    /// `[N, K+1]`, softmax over classes with no-object last.
    pub probs: Var,
    /// `[N, H·W]` soft masks.
    pub masks: Var,
    /// `[D, H·W]`.
    pub pixel_embeddings: Var,
    /// `[N, D]`.
    pub mask_embeddings: Var,
    /// `[N, D]` per-segment embeddings after cross-attention.
    pub segment_embeddings: Var,
}

/// Pixel module, one cross-attention layer over learnable queries, and
/// class/mask heads.
#[derive(Clone, Debug)]
pub struct MaskFormer {
    pub config: MaskFormerConfig,
    pub params: ParamStore,
}

pub fn build_toy_maskformer<R: Rng + ?Sized>(config: MaskFormerConfig, rng: &mut R) -> Result<MaskFormer> {
    config.validate()?;
    let c = config;
    let (d, cf) = (c.embed_dim, c.feature_channels);
    let mut p = ParamStore::new();
    let mut ch = c.in_channels;
    for s in 0..c.stages().max(1) {
        p.insert(format!("pixel.stage{s}.w"), init_uniform(&[cf, ch, 3, 3], ch * 9, rng));
        p.insert(format!("pixel.stage{s}.b"), Tensor::zeros(&[cf]));
        ch = cf;
    }
    p.insert("pixel.proj.w", init_uniform(&[d, cf, 1, 1], cf, rng));
    p.insert("pixel.proj.b", Tensor::zeros(&[d]));
    p.insert("pixel.lateral.w", init_uniform(&[d, c.in_channels, 3, 3], c.in_channels * 9, rng));
    p.insert("pixel.out.w", init_uniform(&[d, d, 1, 1], d, rng));
    p.insert("pixel.out.b", Tensor::zeros(&[d]));

    p.insert("queries", Tensor::randn(&[c.num_queries, d], 1.0, rng));
    p.insert("pos", Tensor::randn(&[c.feature_cells(), cf], 0.1, rng));
    p.insert("attn.q", init_uniform(&[d, d], d, rng));
    p.insert("attn.k", init_uniform(&[cf, d], cf, rng));
    p.insert("attn.v", init_uniform(&[cf, d], cf, rng));

    p.insert("cls.w", init_uniform(&[d, c.num_classes + 1], d, rng));
    p.insert("cls.b", Tensor::zeros(&[c.num_classes + 1]));
    for l in 0..3 {
        p.insert(format!("mlp{l}.w"), init_uniform(&[d, d], d, rng));
        p.insert(format!("mlp{l}.b"), Tensor::zeros(&[d]));
    }
    Ok(MaskFormer { config, params: p })
}

/// `sigmoid(E_mask · E_pixel)` for `E_mask: [N, D]`, `E_pixel: [D, H·W]`.
pub fn masks_from_embeddings(tape: &Tape, mask_embeddings: Var, pixel_embeddings: Var) -> Result<Var> {
    Ok(tape.sigmoid(tape.matmul(mask_embeddings, pixel_embeddings)?))
}

impl MaskFormer {
    /// Forward pass for one image `[C, H, W]` with values in `[0, 1]`.
    pub fn forward(&self, tape: &Tape, p: &Bound, image: Var) -> Result<MaskFormerOutput> {
        let c = &self.config;
        let (h, w) = (c.image_height, c.image_width);
        if tape.shape(image) != [c.in_channels, h, w] {
            return Err(Error::dim("maskformer input", &tape.shape(image), &[c.in_channels, h, w]));
        }
        let (d, cf) = (c.embed_dim, c.feature_channels);
        let x = tape.reshape(image, &[1, c.in_channels, h, w])?;

        // pixel-level module
        let mut f = x;
        let stage_stride = if c.stride == 1 { 1 } else { 2 };
        for s in 0..c.stages().max(1) {
            f = tape.conv2d(f, p.var(&format!("pixel.stage{s}.w")), stage_stride, 1)?;
            f = tape.relu(tape.channel_bias(f, p.var(&format!("pixel.stage{s}.b")))?);
        }
        let up = tape.upsample2d_nearest(f, c.stride)?;
        let proj = tape.channel_bias(tape.conv2d(up, p.var("pixel.proj.w"), 1, 0)?, p.var("pixel.proj.b"))?;
        let lateral = tape.conv2d(x, p.var("pixel.lateral.w"), 1, 1)?;
        let fused = tape.relu(tape.add(proj, lateral)?);
        let pix = tape.channel_bias(tape.conv2d(fused, p.var("pixel.out.w"), 1, 0)?, p.var("pixel.out.b"))?;
        let pixel_embeddings = tape.reshape(pix, &[d, h * w])?;

        // transformer module
        let memory = tape.transpose(tape.reshape(f, &[cf, c.feature_cells()])?)?;
        let keyed = tape.add(memory, p.var("pos"))?;
        let queries = p.var("queries");
        let q = tape.matmul(queries, p.var("attn.q"))?;
        let k = tape.matmul(keyed, p.var("attn.k"))?;
        let v = tape.matmul(memory, p.var("attn.v"))?;
        let logits = tape.mul_scalar(tape.matmul(q, tape.transpose(k)?)?, 1.0 / (d as f64).sqrt());
        let attn = tape.softmax(logits, 1)?;
        let segment_embeddings = tape.add(queries, tape.matmul(attn, v)?)?;

        // segmentation module
        let probs = tape.softmax(tape.dense(segment_embeddings, p.var("cls.w"), p.var("cls.b"))?, 1)?;
        let mut m = segment_embeddings;
        for l in 0..3 {
            m = tape.dense(m, p.var(&format!("mlp{l}.w")), p.var(&format!("mlp{l}.b")))?;
            if l < 2 {
                m = tape.relu(m);
            }
        }
        let masks = masks_from_embeddings(tape, m, pixel_embeddings)?;
        Ok(MaskFormerOutput {
            probs,
            masks,
            pixel_embeddings,
            mask_embeddings: m,
            segment_embeddings,
        })
    }

    pub fn predict(&self, image: &Tensor) -> Result<SegmentationPrediction> {
        let tape = Tape::new();
        let bound = self.params.bind_frozen(&tape);
        let x = tape.constant(image.clone());
        let out = self.forward(&tape, &bound, x)?;
        SegmentationPrediction::new(
            self.config.num_classes,
            self.config.image_height,
            self.config.image_width,
            tape.value(out.probs).data().to_vec(),
            tape.value(out.masks).data().to_vec(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_shapes() {
        let cfg = MaskFormerConfig {
            image_height: 16,
            image_width: 8,
            ..Default::default()
        };
        let model = build_toy_maskformer(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let pred = model.predict(&Tensor::full(&[3, 16, 8], 0.5)).unwrap();
        assert_eq!(pred.num_queries(), 20);
        assert_eq!(pred.class_probs.len(), 20 * 5);
        assert_eq!(pred.masks.len(), 20 * 16 * 8);
    }

    #[test]
    fn zero_mask_embedding_gives_half_masks() {
        let tape = Tape::new();
        let e = tape.constant(Tensor::zeros(&[3, 4]));
        let pix = tape.constant(Tensor::from_fn(&[4, 6], |i| i as f64 - 7.0));
        let m = masks_from_embeddings(&tape, e, pix).unwrap();
        assert!(tape.value(m).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn indivisible_dims_are_config_errors() {
        let cfg = MaskFormerConfig {
            image_height: 30,
            ..Default::default()
        };
        let err = build_toy_maskformer(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let cfg = MaskFormerConfig {
            stride: 3,
            image_height: 33,
            image_width: 33,
            ..Default::default()
        };
        assert!(build_toy_maskformer(cfg, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
