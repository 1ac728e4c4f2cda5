use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{SceneGraphTriplet, StatePairSample, Vocabulary, EOS, PAD};
use crate::error::Error;

/// Which triplets the auxiliary head is asked to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SgMode {
    /// Every triplet of either state.
    All,
    /// Triplets present in exactly one of the two states.
    Diff,
}

impl fmt::Display for SgMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SgMode::All => "all",
            SgMode::Diff => "diff",
        })
    }
}

impl FromStr for SgMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "all" => Ok(SgMode::All),
            "diff" => Ok(SgMode::Diff),
            other => Err(Error::config(format!("unknown sg_mode `{other}`"))),
        }
    }
}

/// Target set for `mode`, in canonical (subject, relationship, object) id order.
pub fn target_triplets(
    sample: &StatePairSample,
    mode: SgMode,
    vocab: &Vocabulary,
) -> Vec<SceneGraphTriplet> {
    let a: BTreeSet<SceneGraphTriplet> = sample.graphs_a.iter().map(|t| vocab.encode_triplet(t)).collect();
    let b: BTreeSet<SceneGraphTriplet> = sample.graphs_b.iter().map(|t| vocab.encode_triplet(t)).collect();
    match mode {
        SgMode::All => a.union(&b).copied().collect(),
        SgMode::Diff => a.symmetric_difference(&b).copied().collect::<BTreeSet<_>>().into_iter().collect(),
    }
}

/// Flat `[s, r, o, ..., EOS, PAD..]` of length `3 * max_triplets + 1`.
pub fn scene_graph_targets(
    sample: &StatePairSample,
    mode: SgMode,
    vocab: &Vocabulary,
    max_triplets: usize,
) -> Vec<u32> {
    assert!(max_triplets >= 1, "max_triplets must be at least 1");
    let mut out = Vec::with_capacity(3 * max_triplets + 1);
    for t in target_triplets(sample, mode, vocab).into_iter().take(max_triplets) {
        out.extend([t.subject, t.relationship, t.object]);
    }
    out.push(EOS);
    out.resize(3 * max_triplets + 1, PAD);
    out
}
