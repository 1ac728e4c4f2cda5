use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;

use crate::dataset::{load_image, normalize, scene_graph_targets, tokenize_caption, SgMode, StatePairSample, Vocabulary};
use crate::encoder::{FeatureMap, ImageInput};
use crate::error::{Error, Result};
use crate::model::PairInput;

#[derive(Debug, Clone)]
pub enum PairData {
    /// Kept as 8-bit pixels; converted per use to bound memory.
    Images(RgbImage, RgbImage),
    Features(FeatureMap, FeatureMap),
}

/// A sample ready for the model: inputs, caption ids, scene-graph target and
/// reference tokens.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub pair: PairData,
    pub caption: Vec<u32>,
    pub scene_graph: Vec<u32>,
    pub reference: Vec<String>,
}

impl Prepared {
    pub fn new(
        sample: &StatePairSample,
        pair: PairData,
        vocab: &Vocabulary,
        max_caption_len: usize,
        sg_mode: SgMode,
        max_triplets: usize,
    ) -> Self {
        Prepared {
            id: sample.id.clone(),
            pair,
            caption: tokenize_caption(&sample.caption, vocab, max_caption_len),
            scene_graph: scene_graph_targets(sample, sg_mode, vocab, max_triplets),
            reference: normalize(&sample.caption),
        }
    }

    pub fn with_input<R>(&self, f: impl FnOnce(PairInput<'_>) -> R) -> R {
        match &self.pair {
            PairData::Images(a, b) => {
                let (a, b) = (ImageInput::from_rgb(a), ImageInput::from_rgb(b));
                f(PairInput::Images(&a, &b))
            }
            PairData::Features(a, b) => f(PairInput::Features(a, b)),
        }
    }

    /// Caption ids after BOS up to and including EOS.
    pub fn caption_body(&self) -> &[u32] {
        let end = self
            .caption
            .iter()
            .position(|&t| t == crate::dataset::EOS)
            .map_or(self.caption.len(), |p| p + 1);
        &self.caption[1..end]
    }
}

/// Loads images (or looks up precomputed features keyed by image path) and
/// tokenizes every sample. Order is preserved.
pub fn prepare(
    samples: &[StatePairSample],
    image_root: &Path,
    features: Option<&BTreeMap<String, FeatureMap>>,
    vocab: &Vocabulary,
    max_caption_len: usize,
    sg_mode: SgMode,
    max_triplets: usize,
) -> Result<Vec<Prepared>> {
    samples
        .par_iter()
        .map(|s| {
            let pair = match features {
                Some(f) => {
                    let get = |k: &str| {
                        f.get(k).cloned().ok_or_else(|| Error::InvalidRecord {
                            id: s.id.clone(),
                            message: format!("no precomputed features for {k}"),
                        })
                    };
                    PairData::Features(get(&s.image_a)?, get(&s.image_b)?)
                }
                None => PairData::Images(
                    load_image(&image_root.join(&s.image_a))?,
                    load_image(&image_root.join(&s.image_b))?,
                ),
            };
            Ok(Prepared::new(s, pair, vocab, max_caption_len, sg_mode, max_triplets))
        })
        .collect()
}
