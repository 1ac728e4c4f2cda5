//! The full captioner: conv encoder, dual spatial attention, caption decoder
//! and the auxiliary scene-graph head, with a per-sample loss and backward.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{generate, AttentiveDecoder, DecoderDims, DynamicAttentionWeights, SearchStrategy};
use crate::encoder::{
    dual_attention, dual_attention_backward, BundleGrad, ConvEncoder, ConvSpec, EncoderTrace, FeatureBundle,
    FeatureMap, ImageInput, Provenance, SpatialAttention,
};
use crate::error::{Error, Result};
use crate::nn::{prefixed, Params};
use crate::sg_head::{RoleMasks, SceneGraphHead, TripletPrediction};
use crate::tensor::Tensor;
use crate::training::{combined_loss, regularizers, BranchTerms, LossConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub conv: Vec<ConvSpec>,
    /// Hidden width of the per-location spatial attention map.
    pub attention_hidden: usize,
    pub embed: usize,
    pub hidden: usize,
    /// Width of the additive stream attention.
    pub attention_dim: usize,
    pub sg_embed: usize,
    pub sg_hidden: usize,
    /// Token budget of a caption including BOS and EOS.
    pub max_caption_len: usize,
    pub max_triplets: usize,
    /// Keep the encoder at its initial weights.
    pub freeze_encoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            conv: vec![
                ConvSpec {
                    channels: 32,
                    kernel: 4,
                    stride: 4,
                },
                ConvSpec {
                    channels: 64,
                    kernel: 2,
                    stride: 2,
                },
            ],
            attention_hidden: 64,
            embed: 64,
            hidden: 128,
            attention_dim: 64,
            sg_embed: 64,
            sg_hidden: 128,
            max_caption_len: 16,
            max_triplets: 8,
            freeze_encoder: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.image_size,
            self.attention_hidden,
            self.embed,
            self.hidden,
            self.attention_dim,
            self.sg_embed,
            self.sg_hidden,
            self.max_triplets,
        ];
        if dims.contains(&0) {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.max_caption_len < 3 {
            return Err(Error::config("max_caption_len must leave room for BOS, a token and EOS"));
        }
        if self.conv.iter().any(|c| c.channels == 0 || c.kernel == 0 || c.stride == 0) {
            return Err(Error::config("conv layers need positive channels, kernel and stride"));
        }
        Ok(())
    }
}

/// Either two images or two precomputed feature maps.
#[derive(Debug, Clone, Copy)]
pub enum PairInput<'a> {
    Images(&'a ImageInput, &'a ImageInput),
    Features(&'a FeatureMap, &'a FeatureMap),
}

/// Supervision for one sample. `caption` is a tokenized caption starting
/// with BOS; `scene_graph` the flat triplet target.
#[derive(Debug, Clone, Copy)]
pub struct Targets<'a> {
    pub caption: &'a [u32],
    pub scene_graph: Option<&'a [u32]>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub cap: f64,
    pub sgr: Option<f64>,
    pub l1: f64,
    pub ent_cap: f64,
    pub ent_sgr: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: ConvEncoder,
    pub attention: SpatialAttention,
    pub decoder: AttentiveDecoder,
    pub sg_head: SceneGraphHead,
}

impl Model {
    pub fn new(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = ConvEncoder::new(config.image_size, &config.conv, &mut rng)?;
        let (c, _, _) = encoder.output_shape();
        let attention = SpatialAttention::new(c, config.attention_hidden, &mut rng);
        let decoder = AttentiveDecoder::new(
            DecoderDims {
                vocab: vocab_size,
                embed: config.embed,
                features: c,
                hidden: config.hidden,
                attention: config.attention_dim,
            },
            &mut rng,
        );
        let sg_head = SceneGraphHead::new(
            DecoderDims {
                vocab: vocab_size,
                embed: config.sg_embed,
                features: c,
                hidden: config.sg_hidden,
                attention: config.attention_dim,
            },
            &mut rng,
        );
        Ok(Model {
            config,
            encoder,
            attention,
            decoder,
            sg_head,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.decoder.vocab_size()
    }

    /// A zero-filled copy used to accumulate gradients.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.zero_();
        g
    }

    fn features(&self, input: PairInput<'_>, trace: bool) -> Result<(FeatureMap, FeatureMap, Option<[EncoderTrace; 2]>)> {
        match input {
            PairInput::Images(a, b) => {
                let (xa, ta) = self.encoder.encode_traced(a, Provenance::ImageA)?;
                let (xb, tb) = self.encoder.encode_traced(b, Provenance::ImageB)?;
                Ok((xa, xb, trace.then_some([ta, tb])))
            }
            PairInput::Features(a, b) => {
                let expect = self.encoder.output_shape();
                for m in [a, b] {
                    if m.shape() != expect {
                        return Err(Error::shape(format!(
                            "precomputed features {:?}, model expects {expect:?}",
                            m.shape()
                        )));
                    }
                }
                Ok((a.clone(), b.clone(), None))
            }
        }
    }

    pub fn bundle(&self, input: PairInput<'_>) -> Result<FeatureBundle> {
        let (xa, xb, _) = self.features(input, false)?;
        Ok(dual_attention(xa, xb, &self.attention)?.0)
    }

    /// Generated caption ids, ending with EOS unless the budget ran out.
    pub fn caption(&self, input: PairInput<'_>, strategy: SearchStrategy) -> Result<Vec<u32>> {
        let b = self.bundle(input)?;
        generate(&self.decoder, b.streams(), strategy, self.config.max_caption_len - 1)
    }

    pub fn caption_bundle(&self, bundle: &FeatureBundle, strategy: SearchStrategy) -> Result<Vec<u32>> {
        generate(&self.decoder, bundle.streams(), strategy, self.config.max_caption_len - 1)
    }

    pub fn predict_triplets(&self, input: PairInput<'_>, masks: &RoleMasks) -> Result<TripletPrediction> {
        let b = self.bundle(input)?;
        self.sg_head.predict_triplets(b.streams(), masks, self.config.max_triplets)
    }

    /// Per-sample objective. With `alpha = None` only the caption branch is
    /// used; otherwise `scene_graph` targets are required. When `grad` is
    /// given, gradients of the total are accumulated into it.
    pub fn loss(
        &self,
        input: PairInput<'_>,
        targets: Targets<'_>,
        cfg: &LossConfig,
        alpha: Option<f64>,
        grad: Option<&mut Model>,
    ) -> Result<LossTerms> {
        let cap_ids = targets.caption;
        if cap_ids.len() < 2 {
            return Err(Error::shape("caption target needs at least BOS and one token"));
        }
        let (xa, xb, enc_trace) = self.features(input, grad.is_some())?;
        let (bundle, att_trace) = dual_attention(xa, xb, &self.attention)?;
        let streams = bundle.streams();
        let cap = self
            .decoder
            .teacher_forced(streams, &cap_ids[..cap_ids.len() - 1], &cap_ids[1..])?;
        let (l1, ent_cap) = regularizers(&bundle.a_a, &bundle.a_b, &cap.weights);
        let cap_terms = BranchTerms {
            loss: cap.loss,
            l1,
            ent: cap.entropy,
        };
        let sg = match alpha {
            Some(_) => {
                let t = targets
                    .scene_graph
                    .ok_or_else(|| Error::config("scene-graph targets required when alpha is set"))?;
                Some(self.sg_head.teacher_forced(streams, t)?)
            }
            None => None,
        };
        let a = alpha.unwrap_or(1.0);
        let sg_terms = sg.as_ref().map(|s| {
            let ent = mean_entropy(&s.weights);
            BranchTerms { loss: s.loss, l1, ent }
        });
        let total = combined_loss(cap_terms, sg_terms.unwrap_or_default(), a, cfg)?;
        let terms = LossTerms {
            cap: cap.loss,
            sgr: sg_terms.map(|t| t.loss),
            l1,
            ent_cap,
            ent_sgr: sg_terms.map_or(0.0, |t| t.ent),
            total,
        };
        let Some(grad) = grad else {
            return Ok(terms);
        };

        let c = bundle.dim();
        let n = bundle.x_a.locations();
        let mut g = BundleGrad::zeros(c, n);
        let add = |d: [Vec<f64>; 3], g: &mut BundleGrad| {
            for (dst, src) in [&mut g.l_a, &mut g.l_b, &mut g.l_diff].into_iter().zip(d) {
                for (x, y) in dst.iter_mut().zip(src) {
                    *x += y;
                }
            }
        };
        if a > 0.0 {
            let d = self.decoder.backward(streams, &cap, a, -a * cfg.lambda_ent, &mut grad.decoder);
            add(d, &mut g);
        }
        if let Some(s) = sg.as_ref().filter(|_| a < 1.0) {
            let w = 1.0 - a;
            let d = self.sg_head.decoder.backward(streams, s, w, -w * cfg.lambda_ent, &mut grad.sg_head.decoder);
            add(d, &mut g);
        }
        // Both branches regularise the same maps; their weights sum to one.
        let branch_weight = if sg.is_some() { 1.0 } else { a };
        let dl1 = cfg.lambda_l1 * branch_weight / (2 * n) as f64;
        for (s, d) in g.a_a.iter_mut().zip(&bundle.a_a.weights) {
            *s += dl1 * d.signum();
        }
        for (s, d) in g.a_b.iter_mut().zip(&bundle.a_b.weights) {
            *s += dl1 * d.signum();
        }
        let (dxa, dxb) = dual_attention_backward(&bundle, &att_trace, &self.attention, &g, &mut grad.attention);
        if let (Some([ta, tb]), false) = (enc_trace, self.config.freeze_encoder) {
            self.encoder.backward(&ta, &dxa, &mut grad.encoder);
            self.encoder.backward(&tb, &dxb, &mut grad.encoder);
        }
        Ok(terms)
    }
}

fn mean_entropy(w: &[DynamicAttentionWeights]) -> f64 {
    if w.is_empty() {
        0.0
    } else {
        w.iter().map(DynamicAttentionWeights::entropy).sum::<f64>() / w.len() as f64
    }
}

impl Params for Model {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("encoder", self.encoder.params());
        v.extend(prefixed("attention", self.attention.params()));
        v.extend(prefixed("decoder", self.decoder.params()));
        v.extend(prefixed("sg_head", self.sg_head.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.params_mut();
        v.extend(self.attention.params_mut());
        v.extend(self.decoder.params_mut());
        v.extend(self.sg_head.params_mut());
        v
    }
}
