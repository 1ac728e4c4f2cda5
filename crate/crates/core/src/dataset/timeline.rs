//! State-pair extraction from timestamped scene-graph annotations.
//!
//! Events sharing a timestamp form one keyframe: the full set of triplets
//! active at that moment. The first keyframe is the initial state. Every
//! later keyframe is compared with the one before it, keyed on the
//! (subject, object) pair.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TripletLabels;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub t: f64,
    pub triplet: TripletLabels,
    #[serde(default)]
    pub rect: Option<Rect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTimeline {
    #[serde(default)]
    pub video: String,
    pub fps: f64,
    #[serde(default)]
    pub start: f64,
    pub end: f64,
    pub events: Vec<TimelineEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    /// Same (subject, object), different relationship.
    Relationship,
    Added,
    Removed,
}

impl fmt::Display for ChangeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChangeKind::Relationship => "relationship",
            ChangeKind::Added => "added",
            ChangeKind::Removed => "removed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePairCandidate {
    pub t: f64,
    pub frame_before: u64,
    pub frame_after: u64,
    /// The new triplet, or the vanished one for removals.
    pub triplet: TripletLabels,
    pub kind: ChangeKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub pairs: Vec<StatePairCandidate>,
    /// One human-readable line per event dropped by the margin rule.
    pub skipped: Vec<String>,
}

impl AnnotationTimeline {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        let tl: Self = serde_json::from_str(&text).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        tl.validate()?;
        Ok(tl)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(Error::config("timeline fps must be positive"));
        }
        if !(self.end >= self.start) {
            return Err(Error::config("timeline end precedes start"));
        }
        if self.events.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::config("timeline timestamps must be non-decreasing"));
        }
        Ok(())
    }

    pub fn frame_index(&self, t: f64) -> u64 {
        (t * self.fps).round().max(0.0) as u64
    }

    fn keyframes(&self) -> Vec<(f64, BTreeSet<&TripletLabels>)> {
        let mut out: Vec<(f64, BTreeSet<&TripletLabels>)> = Vec::new();
        for ev in &self.events {
            match out.last_mut() {
                Some((t, set)) if *t == ev.t => {
                    set.insert(&ev.triplet);
                }
                _ => out.push((ev.t, BTreeSet::from([&ev.triplet]))),
            }
        }
        out
    }
}

type PairKey<'a> = (&'a str, &'a str);

fn by_pair<'a>(set: &BTreeSet<&'a TripletLabels>) -> BTreeMap<PairKey<'a>, BTreeSet<&'a str>> {
    let mut m: BTreeMap<PairKey<'a>, BTreeSet<&'a str>> = BTreeMap::new();
    for t in set {
        m.entry((t.subject.as_str(), t.object.as_str()))
            .or_default()
            .insert(t.relationship.as_str());
    }
    m
}

/// Emits a (before, after) frame pair around every scene-graph change whose
/// `t - margin` and `t + margin` both lie inside the timeline.
pub fn extract_state_pairs(timeline: &AnnotationTimeline, margin: f64) -> Result<Extraction> {
    if !(margin > 0.0) {
        return Err(Error::config("margin must be positive"));
    }
    timeline.validate()?;
    let keyframes = timeline.keyframes();
    let mut out = Extraction::default();
    for w in keyframes.windows(2) {
        let (prev, (t, next)) = (&w[0].1, (&w[1].0, &w[1].1));
        let prev_pairs = by_pair(prev);
        let next_pairs = by_pair(next);
        let mut changes: Vec<(&TripletLabels, ChangeKind)> = Vec::new();
        for tr in next.difference(prev) {
            let kind = if prev_pairs.contains_key(&(tr.subject.as_str(), tr.object.as_str())) {
                ChangeKind::Relationship
            } else {
                ChangeKind::Added
            };
            changes.push((tr, kind));
        }
        for tr in prev.difference(next) {
            if !next_pairs.contains_key(&(tr.subject.as_str(), tr.object.as_str())) {
                changes.push((tr, ChangeKind::Removed));
            }
        }
        changes.sort_by(|a, b| a.0.cmp(b.0));
        for (tr, kind) in changes {
            let (before, after) = (t - margin, t + margin);
            if before < timeline.start || after > timeline.end {
                out.skipped.push(format!(
                    "t={t} {tr} ({kind}): window [{before}, {after}] outside [{}, {}]",
                    timeline.start, timeline.end
                ));
                continue;
            }
            out.pairs.push(StatePairCandidate {
                t: *t,
                frame_before: timeline.frame_index(before),
                frame_after: timeline.frame_index(after),
                triplet: (*tr).clone(),
                kind,
            });
        }
    }
    Ok(out)
}
