//! On-disk data model for state-pair captioning.
//!
//! A dataset directory holds one line-delimited JSON file per split
//! (`train.jsonl`, `dev.jsonl`, `test.jsonl`) next to the PNG images the
//! records reference by relative path.

mod targets;
mod timeline;
mod vocab;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use targets::{scene_graph_targets, SgMode};
pub use timeline::{
    extract_state_pairs, AnnotationTimeline, ChangeKind, Extraction, Rect, StatePairCandidate,
    TimelineEvent,
};
pub use vocab::{
    detokenize, normalize, tokenize_caption, PosTag, Vocabulary, BOS, EOS, PAD, SPECIAL_TOKENS,
    UNK,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Viewpoint {
    FirstPerson,
    ThirdPerson,
}

/// A scene-graph triplet by label, as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[String; 3]", into = "[String; 3]")]
pub struct TripletLabels {
    pub subject: String,
    pub relationship: String,
    pub object: String,
}

impl TripletLabels {
    pub fn new(s: impl Into<String>, r: impl Into<String>, o: impl Into<String>) -> Self {
        TripletLabels {
            subject: s.into(),
            relationship: r.into(),
            object: o.into(),
        }
    }
}

impl From<[String; 3]> for TripletLabels {
    fn from([subject, relationship, object]: [String; 3]) -> Self {
        TripletLabels {
            subject,
            relationship,
            object,
        }
    }
}

impl From<TripletLabels> for [String; 3] {
    fn from(t: TripletLabels) -> Self {
        [t.subject, t.relationship, t.object]
    }
}

impl fmt::Display for TripletLabels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.subject, self.relationship, self.object)
    }
}

/// A scene-graph triplet in vocabulary ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SceneGraphTriplet {
    pub subject: u32,
    pub relationship: u32,
    pub object: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatePairSample {
    pub id: String,
    pub image_a: String,
    pub image_b: String,
    pub viewpoint: Viewpoint,
    pub object_hint: String,
    pub caption: String,
    pub graphs_a: BTreeSet<TripletLabels>,
    pub graphs_b: BTreeSet<TripletLabels>,
}

// Mirrors `StatePairSample` but keeps triplets as a list so duplicates in a
// record can be reported instead of silently merged.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    image_a: String,
    image_b: String,
    viewpoint: Viewpoint,
    object_hint: String,
    caption: String,
    graphs_a: Vec<TripletLabels>,
    graphs_b: Vec<TripletLabels>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Dev => "dev.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "val" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split `{other}`"))),
        }
    }
}

/// Train/dev/test proportions. The default mirrors a 14335/843/1686 split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.85,
            dev: 0.05,
            test: 0.10,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.dev, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config(format!(
                "split ratios must be in [0, 1] and sum to 1, got {all:?}"
            )));
        }
        Ok(())
    }

    /// Record counts per split for `n` records; test takes the remainder.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let train = ((n as f64) * self.train).round() as usize;
        let dev = (((n as f64) * self.dev).round() as usize).min(n - train.min(n));
        let train = train.min(n);
        [train, dev, n - train - dev]
    }
}

impl StatePairSample {
    pub fn check_invariants(&self) -> Result<()> {
        if normalize(&self.caption).is_empty() {
            return Err(Error::InvalidRecord {
                id: self.id.clone(),
                message: "caption is empty after tokenization".into(),
            });
        }
        Ok(())
    }
}

fn split_path(path: &Path, split: Split) -> PathBuf {
    if path.is_dir() {
        path.join(split.file_name())
    } else {
        path.to_path_buf()
    }
}

/// Loads every record of `split`.
///
/// `path` is either a dataset directory (the split file is picked from it)
/// or a single `.jsonl` file. Image references are resolved against the
/// directory containing the record file and must exist with matching sizes.
pub fn load_dataset(path: &Path, split: Split) -> Result<Vec<StatePairSample>> {
    let file = split_path(path, split);
    let base = file.parent().unwrap_or(Path::new(".")).to_path_buf();
    let f = fs::File::open(&file).map_err(|source| Error::Load {
        path: file.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| Error::Load {
            path: file.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedRecord {
            path: file.clone(),
            line: idx + 1,
            message,
        };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let sample = from_raw(raw).map_err(malformed)?;
        sample.check_invariants()?;
        check_images(&base, &sample)?;
        out.push(sample);
    }
    Ok(out)
}

fn from_raw(raw: RawRecord) -> std::result::Result<StatePairSample, String> {
    let to_set = |v: Vec<TripletLabels>, which: &str| {
        let n = v.len();
        let set: BTreeSet<_> = v.into_iter().collect();
        if set.len() != n {
            Err(format!("duplicate triplet in {which}"))
        } else {
            Ok(set)
        }
    };
    Ok(StatePairSample {
        graphs_a: to_set(raw.graphs_a, "graphs_a")?,
        graphs_b: to_set(raw.graphs_b, "graphs_b")?,
        id: raw.id,
        image_a: raw.image_a,
        image_b: raw.image_b,
        viewpoint: raw.viewpoint,
        object_hint: raw.object_hint,
        caption: raw.caption,
    })
}

fn check_images(base: &Path, sample: &StatePairSample) -> Result<()> {
    let dims = |rel: &str| {
        let p = base.join(rel);
        image::image_dimensions(&p).map_err(|e| Error::InvalidRecord {
            id: sample.id.clone(),
            message: format!("image reference {rel}: {e}"),
        })
    };
    let (da, db) = (dims(&sample.image_a)?, dims(&sample.image_b)?);
    if da != db {
        return Err(Error::InvalidRecord {
            id: sample.id.clone(),
            message: format!("image sizes differ: {da:?} vs {db:?}"),
        });
    }
    Ok(())
}

/// Writes records as line-delimited JSON.
pub fn write_records(path: &Path, samples: &[StatePairSample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Loads an 8-bit RGB image referenced by a record.
pub fn load_image(path: &Path) -> Result<image::RgbImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

/// Resolves the directory image references of a split are relative to.
pub fn image_root(path: &Path, split: Split) -> PathBuf {
    split_path(path, split)
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ratios_reproduce_reference_counts() {
        let r = SplitRatios::default();
        assert_eq!(r.sizes(1000), [850, 50, 100]);
        assert_eq!(r.sizes(0), [0, 0, 0]);
        let [a, b, c] = r.sizes(7);
        assert_eq!(a + b + c, 7);
    }

    #[test]
    fn split_parses() {
        assert_eq!("dev".parse::<Split>().unwrap(), Split::Dev);
        assert!("bogus".parse::<Split>().is_err());
    }

    #[test]
    fn triplet_serialises_as_array() {
        let t = TripletLabels::new("person", "holding", "fork");
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"["person","holding","fork"]"#);
        let back: TripletLabels = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
