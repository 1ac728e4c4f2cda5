use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::PosTag;
use crate::error::{Error, Result};

/// Auxiliary and light verbs never counted as independent verbs, whatever
/// tag the lexicon gives them.
pub const AUXILIARY_STOPLIST: &[&str] = &[
    "be", "is", "are", "was", "were", "been", "being", "am", "have", "has", "had", "do", "does", "did", "will",
    "would", "can", "could", "shall", "should", "may", "might", "must", "get", "gets", "got",
];

/// Token to part-of-speech map; unknown tokens are `Other`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PosLexicon(HashMap<String, PosTag>);

impl PosLexicon {
    pub fn new(map: HashMap<String, PosTag>) -> Self {
        PosLexicon(map)
    }

    pub fn tag(&self, token: &str) -> PosTag {
        self.0.get(token).copied().unwrap_or(PosTag::Other)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parses `token<TAB>tag` lines; blank lines are skipped.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::MalformedRecord {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let (tok, tag) = line.split_once('\t').ok_or_else(|| bad("expected token<TAB>tag".into()))?;
            let tag = PosTag::parse(tag.trim()).ok_or_else(|| bad(format!("unknown tag `{tag}`")))?;
            map.insert(tok.to_string(), tag);
        }
        Ok(PosLexicon(map))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn map(&self) -> &HashMap<String, PosTag> {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosClass {
    Noun,
    Verb,
    VerbIndependent,
}

impl PosClass {
    pub const ALL: [PosClass; 3] = [PosClass::Noun, PosClass::Verb, PosClass::VerbIndependent];

    pub fn contains(self, lexicon: &PosLexicon, token: &str) -> bool {
        match (self, lexicon.tag(token)) {
            (PosClass::Noun, PosTag::Noun) => true,
            (PosClass::Verb, PosTag::Verb | PosTag::AuxVerb) => true,
            (PosClass::VerbIndependent, PosTag::Verb) => !AUXILIARY_STOPLIST.contains(&token),
            _ => false,
        }
    }
}

impl fmt::Display for PosClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PosClass::Noun => "noun",
            PosClass::Verb => "verb",
            PosClass::VerbIndependent => "verb_independent",
        })
    }
}

impl FromStr for PosClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PosClass::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| Error::config(format!("unknown part-of-speech class `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl Prf {
    pub fn from_counts(matched: usize, hyp: usize, reference: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (p, r) = (ratio(matched, hyp), ratio(matched, reference));
        Prf {
            precision: p,
            recall: r,
            f: if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 },
        }
    }
}

/// Class-token counts of one pair: (multiset matches, hypothesis, reference).
pub fn class_counts<S: AsRef<str>>(hyp: &[S], reference: &[S], lexicon: &PosLexicon, class: PosClass) -> (usize, usize, usize) {
    fn bag<'a, S: AsRef<str>>(toks: &'a [S], lexicon: &PosLexicon, class: PosClass) -> HashMap<&'a str, usize> {
        let mut m = HashMap::new();
        for t in toks {
            if class.contains(lexicon, t.as_ref()) {
                *m.entry(t.as_ref()).or_default() += 1;
            }
        }
        m
    }
    let (h, r) = (bag(hyp, lexicon, class), bag(reference, lexicon, class));
    let matched = h.iter().map(|(t, c)| (*c).min(r.get(t).copied().unwrap_or(0))).sum();
    (matched, h.values().sum(), r.values().sum())
}

/// Micro-averaged content-word precision, recall and F over a corpus with
/// one reference per hypothesis.
pub fn content_word_prf<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], lexicon: &PosLexicon, class: PosClass) -> Prf {
    let (mut m, mut h, mut r) = (0, 0, 0);
    for (hy, rf) in hyps.iter().zip(refs) {
        let (a, b, c) = class_counts(hy, rf, lexicon, class);
        m += a;
        h += b;
        r += c;
    }
    Prf::from_counts(m, h, r)
}
