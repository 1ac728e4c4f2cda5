//! Auxiliary scene-graph head.
//!
//! A second attentive decoder with its own parameters reads the same three
//! feature streams and emits `subject relationship object` token triples
//! followed by EOS. It never sees caption tokens. Decoding is greedy with a
//! role mask per position.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{SceneGraphTriplet, Vocabulary, BOS, EOS, PAD};
use crate::decoder::{caption_loss, AttentiveDecoder, DecoderDims, Streams, TeacherForced};
use crate::error::{Error, Result};
use crate::nn::Params;
use crate::tensor::Tensor;

/// Allowed ids per role; EOS is only allowed where a triplet may start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleMasks {
    allowed: [Vec<bool>; 3],
}

impl RoleMasks {
    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        let n = vocab.len();
        let allowed = std::array::from_fn(|role| {
            let mut m = vec![false; n];
            for &id in vocab.role_ids(role) {
                m[id as usize] = true;
            }
            if role == 0 {
                m[EOS as usize] = true;
            }
            m
        });
        RoleMasks { allowed }
    }

    /// Unrestricted masks over `n` ids.
    pub fn open(n: usize) -> Self {
        RoleMasks {
            allowed: std::array::from_fn(|_| vec![true; n]),
        }
    }

    /// Whether `id` may be decoded at `position` of a sequence with
    /// `max_triplets` slots. The final slot only admits EOS.
    pub fn allows(&self, position: usize, max_triplets: usize, id: u32) -> bool {
        if position >= 3 * max_triplets {
            return id == EOS;
        }
        self.allowed[position % 3].get(id as usize).copied().unwrap_or(false)
    }

    fn masked_argmax(&self, logits: &[f64], position: usize, max_triplets: usize) -> u32 {
        let mut best: Option<(u32, f64)> = None;
        for (i, &l) in logits.iter().enumerate() {
            let id = i as u32;
            if self.allows(position, max_triplets, id) && best.is_none_or(|(_, b)| l > b) {
                best = Some((id, l));
            }
        }
        best.map_or(EOS, |(id, _)| id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletPrediction {
    /// One row per decoded position, up to and including EOS.
    pub logits: Vec<Vec<f64>>,
    pub tokens: Vec<u32>,
    pub triplets: Vec<SceneGraphTriplet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraphHead {
    pub decoder: AttentiveDecoder,
}

impl SceneGraphHead {
    pub fn new<R: Rng>(dims: DecoderDims, rng: &mut R) -> Self {
        SceneGraphHead {
            decoder: AttentiveDecoder::new(dims, rng),
        }
    }

    /// Greedy role-masked decoding of up to `max_triplets` triplets.
    pub fn predict_triplets(&self, streams: Streams<'_>, masks: &RoleMasks, max_triplets: usize) -> Result<TripletPrediction> {
        if max_triplets == 0 {
            return Err(Error::config("max_triplets must be at least 1"));
        }
        let proj = self.decoder.attention.project(streams)?;
        let mut state = self.decoder.initial_state();
        let mut prev = BOS;
        let mut logits = Vec::new();
        let mut tokens = Vec::new();
        for pos in 0..=3 * max_triplets {
            let att = self.decoder.attention.attend(&proj, streams, &state.hidden)?;
            let (row, next) = self.decoder.decode_step(&att.context, prev, &state)?;
            let tok = masks.masked_argmax(&row, pos, max_triplets);
            logits.push(row);
            tokens.push(tok);
            if tok == EOS {
                break;
            }
            state = next;
            prev = tok;
        }
        let body = tokens.iter().position(|&t| t == EOS).map_or(&tokens[..], |p| &tokens[..p]);
        let triplets = body
            .chunks_exact(3)
            .map(|c| SceneGraphTriplet {
                subject: c[0],
                relationship: c[1],
                object: c[2],
            })
            .collect();
        Ok(TripletPrediction { logits, tokens, triplets })
    }

    /// Teacher-forced pass against a flat target of length `3 * max + 1`.
    pub fn teacher_forced(&self, streams: Streams<'_>, target: &[u32]) -> Result<TeacherForced> {
        let inputs = shifted_inputs(target);
        self.decoder.teacher_forced(streams, &inputs, target)
    }
}

/// BOS followed by the target shifted right by one.
pub fn shifted_inputs(target: &[u32]) -> Vec<u32> {
    let mut inputs = Vec::with_capacity(target.len());
    inputs.push(BOS);
    inputs.extend(target.iter().take(target.len().saturating_sub(1)).map(|&t| if t == PAD { EOS } else { t }));
    inputs.truncate(target.len());
    inputs
}

/// Mean cross-entropy over the non-PAD target positions.
pub fn sg_loss(logits: &[Vec<f64>], target: &[u32]) -> Result<f64> {
    caption_loss(logits, target, PAD)
}

impl Params for SceneGraphHead {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.decoder.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.decoder.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TripletLabels;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        let mut v = Vocabulary::from_tokens(["person", "fork", "holding", "on", "table"]);
        v.add_triplet_roles(&TripletLabels::new("person", "holding", "fork"));
        v.add_triplet_roles(&TripletLabels::new("fork", "on", "table"));
        v
    }

    fn head(v: usize, seed: u64) -> SceneGraphHead {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SceneGraphHead::new(
            DecoderDims {
                vocab: v,
                embed: 3,
                features: 4,
                hidden: 5,
                attention: 3,
            },
            &mut rng,
        )
    }

    const L: [f64; 4] = [0.3, -0.2, 0.5, 0.1];

    #[test]
    fn eos_bias_yields_no_triplets() {
        let v = vocab();
        let mut h = head(v.len(), 0);
        h.decoder.output.weight.fill(0.0);
        h.decoder.output.bias.fill(0.0);
        h.decoder.output.bias.data[EOS as usize] = 10.0;
        let p = h.predict_triplets([&L, &L, &L], &RoleMasks::from_vocab(&v), 8).unwrap();
        assert_eq!(p.tokens, vec![EOS]);
        assert!(p.triplets.is_empty());
    }

    #[test]
    fn bias_only_head_decodes_one_triplet() {
        // Zero output weights make logits equal the bias at every step, so
        // the masked argmax per role is fixed and the final slot forces EOS.
        let v = vocab();
        let mut h = head(v.len(), 1);
        h.decoder.output.weight.fill(0.0);
        let mut bias = vec![0.0; v.len()];
        bias[v.id("person") as usize] = 3.0;
        bias[v.id("holding") as usize] = 2.0;
        bias[v.id("table") as usize] = 1.0;
        bias[EOS as usize] = -5.0;
        h.decoder.output.bias.data = bias;
        let p = h.predict_triplets([&L, &L, &L], &RoleMasks::from_vocab(&v), 1).unwrap();
        assert_eq!(
            p.triplets,
            vec![SceneGraphTriplet {
                subject: v.id("person"),
                relationship: v.id("holding"),
                object: v.id("table"),
            }]
        );
        assert_eq!(p.tokens.last(), Some(&EOS));
        assert_eq!(p.logits.len(), 4);
    }

    #[test]
    fn masks_respect_roles() {
        let v = vocab();
        let m = RoleMasks::from_vocab(&v);
        assert!(m.allows(0, 2, v.id("person")));
        assert!(m.allows(0, 2, EOS));
        assert!(!m.allows(0, 2, v.id("holding")));
        assert!(m.allows(1, 2, v.id("on")));
        assert!(!m.allows(2, 2, EOS));
        assert!(m.allows(6, 2, EOS));
        assert!(!m.allows(6, 2, v.id("fork")));
    }

    #[test]
    fn shifted_inputs_start_with_bos() {
        assert_eq!(shifted_inputs(&[5, 6, 7, EOS, PAD, PAD, PAD]), vec![BOS, 5, 6, 7, EOS, EOS, EOS]);
    }

    #[test]
    fn sg_loss_is_uniform_entropy() {
        let l = sg_loss(&[vec![0.0; 6], vec![0.0; 6]], &[4, PAD]).unwrap();
        assert!((l - 6f64.ln()).abs() < 1e-12);
        assert!(sg_loss(&[vec![0.0; 6]], &[4, PAD]).is_err());
    }
}
