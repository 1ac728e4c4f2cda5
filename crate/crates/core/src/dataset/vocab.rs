use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{SceneGraphTriplet, StatePairSample, TripletLabels};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosTag {
    Noun,
    Verb,
    AuxVerb,
    Other,
}

impl PosTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Noun => "noun",
            PosTag::Verb => "verb",
            PosTag::AuxVerb => "aux_verb",
            PosTag::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "noun" => PosTag::Noun,
            "verb" => PosTag::Verb,
            "aux_verb" => PosTag::AuxVerb,
            "other" => PosTag::Other,
            _ => return None,
        })
    }
}

/// Token/id bijection shared by captions and scene-graph labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    #[serde(skip)]
    token_to_id: HashMap<String, u32>,
    pos: BTreeMap<u32, PosTag>,
    /// Ids seen as subject, relationship and object of a triplet.
    roles: [BTreeSet<u32>; 3],
}

/// Lowercases and splits on anything that is not alphanumeric or `_`.
pub fn normalize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

impl Vocabulary {
    /// Builds a vocabulary from caption tokens with frequency `>= min_count`
    /// plus every scene-graph label. Ordering is frequency descending, then
    /// lexicographic.
    pub fn build(samples: &[StatePairSample], min_count: usize) -> Result<Self> {
        if min_count < 1 {
            return Err(Error::config("min_count must be >= 1"));
        }
        if samples.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut freq: HashMap<String, usize> = HashMap::new();
        for s in samples {
            for tok in normalize(&s.caption) {
                *freq.entry(tok).or_default() += 1;
            }
        }
        let mut keep: BTreeSet<String> = freq
            .iter()
            .filter(|(_, &c)| c >= min_count)
            .map(|(t, _)| t.clone())
            .collect();
        for s in samples {
            for t in s.graphs_a.iter().chain(&s.graphs_b) {
                keep.insert(t.subject.clone());
                keep.insert(t.relationship.clone());
                keep.insert(t.object.clone());
            }
        }
        for sp in SPECIAL_TOKENS {
            keep.remove(sp);
        }
        let mut ordered: Vec<String> = keep.into_iter().collect();
        ordered.sort_by(|a, b| {
            let fa = freq.get(a).copied().unwrap_or(0);
            let fb = freq.get(b).copied().unwrap_or(0);
            fb.cmp(&fa).then_with(|| a.cmp(b))
        });
        let mut vocab = Self::from_tokens(ordered);
        for s in samples {
            for t in s.graphs_a.iter().chain(&s.graphs_b) {
                vocab.add_triplet_roles(t);
            }
        }
        Ok(vocab)
    }

    /// Marks the ids of `t` as valid for their triplet roles.
    pub fn add_triplet_roles(&mut self, t: &TripletLabels) {
        let ids = self.encode_triplet(t);
        self.roles[0].insert(ids.subject);
        self.roles[1].insert(ids.relationship);
        self.roles[2].insert(ids.object);
    }

    /// Vocabulary over the specials followed by `tokens` in order.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens.into_iter().map(Into::into));
        let mut v = Vocabulary {
            id_to_token,
            token_to_id: HashMap::new(),
            pos: BTreeMap::new(),
            roles: Default::default(),
        };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.token_to_id = self
            .id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    /// Must be called after deserialising.
    pub fn restore_index(mut self) -> Self {
        self.reindex();
        self
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn encode_triplet(&self, t: &TripletLabels) -> SceneGraphTriplet {
        SceneGraphTriplet {
            subject: self.id(&t.subject),
            relationship: self.id(&t.relationship),
            object: self.id(&t.object),
        }
    }

    /// Ids valid at triplet position `role` (0 subject, 1 relationship, 2 object).
    pub fn role_ids(&self, role: usize) -> &BTreeSet<u32> {
        &self.roles[role]
    }

    pub fn pos_tag(&self, id: u32) -> PosTag {
        self.pos.get(&id).copied().unwrap_or(PosTag::Other)
    }

    pub fn set_pos_tags(&mut self, lexicon: &HashMap<String, PosTag>) {
        self.pos.clear();
        for (i, t) in self.id_to_token.iter().enumerate() {
            if let Some(&tag) = lexicon.get(t) {
                self.pos.insert(i as u32, tag);
            }
        }
    }

    /// Hex SHA-256 over the token list in id order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.id_to_token {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// One token per line in id order, with a tab-separated POS column when tagged.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        for (i, t) in self.id_to_token.iter().enumerate() {
            match self.pos.get(&(i as u32)) {
                Some(tag) => writeln!(f, "{t}\t{}", tag.as_str())?,
                None => writeln!(f, "{t}")?,
            }
        }
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        let mut tokens = Vec::new();
        let mut tags = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let mut cols = line.split('\t');
            let tok = cols.next().unwrap_or_default().to_string();
            if let Some(tag) = cols.next() {
                let tag = PosTag::parse(tag).ok_or_else(|| Error::MalformedRecord {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: format!("unknown POS tag `{tag}`"),
                })?;
                tags.insert(tok.clone(), tag);
            }
            tokens.push(tok);
        }
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS.map(String::from)
        {
            return Err(Error::config(format!(
                "{}: vocabulary must start with the reserved tokens",
                path.display()
            )));
        }
        let mut v = Vocabulary::from_tokens(tokens.into_iter().skip(SPECIAL_TOKENS.len()));
        v.set_pos_tags(&tags);
        Ok(v)
    }
}

/// Maps a caption to `[BOS, tokens.., EOS, PAD..]` of exactly `max_len` ids.
/// Overlong captions are cut so that EOS stays in the last slot.
pub fn tokenize_caption(text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    assert!(max_len >= 3, "max_len must be at least 3");
    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOS);
    ids.extend(
        normalize(text)
            .iter()
            .take(max_len - 2)
            .map(|t| vocab.id(t)),
    );
    ids.push(EOS);
    ids.resize(max_len, PAD);
    ids
}

/// Drops specials and maps ids back to tokens; stops at the first EOS.
pub fn detokenize(ids: &[u32], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .take_while(|&&id| id != EOS)
        .filter(|&&id| id != PAD && id != BOS)
        .filter_map(|&id| vocab.token(id).map(str::to_owned))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::Viewpoint;
    use super::*;

    fn sample(caption: &str) -> StatePairSample {
        StatePairSample {
            id: "s".into(),
            image_a: "a.png".into(),
            image_b: "b.png".into(),
            viewpoint: Viewpoint::ThirdPerson,
            object_hint: "lid".into(),
            caption: caption.into(),
            graphs_a: BTreeSet::new(),
            graphs_b: BTreeSet::new(),
        }
    }

    #[test]
    fn min_count_drops_rare_tokens() {
        let v = Vocabulary::build(&[sample("open the lid"), sample("open the door")], 2).unwrap();
        assert_ne!(v.id("open"), UNK);
        assert_ne!(v.id("the"), UNK);
        assert_eq!(v.id("lid"), UNK);
        assert_eq!(v.id("door"), UNK);
        // frequency tie broken lexicographically
        assert_eq!(v.tokens()[4..], ["open".to_string(), "the".to_string()]);
    }

    #[test]
    fn min_count_one_keeps_everything() {
        let v = Vocabulary::build(&[sample("open the lid"), sample("open the door")], 1).unwrap();
        for t in ["open", "the", "lid", "door"] {
            assert_ne!(v.id(t), UNK, "{t}");
        }
    }

    #[test]
    fn build_is_deterministic() {
        let c = [sample("put the cup on the table"), sample("wash the cup")];
        assert_eq!(
            Vocabulary::build(&c, 1).unwrap(),
            Vocabulary::build(&c, 1).unwrap()
        );
    }

    #[test]
    fn empty_corpus_and_bad_min_count_fail() {
        assert!(matches!(Vocabulary::build(&[], 1), Err(Error::EmptyCorpus)));
        assert!(Vocabulary::build(&[sample("x")], 0).is_err());
    }

    #[test]
    fn scene_graph_labels_enter_vocab_with_roles() {
        let mut s = sample("put it down");
        s.graphs_a
            .insert(TripletLabels::new("person", "holding", "fork"));
        let v = Vocabulary::build(&[s], 5).unwrap();
        assert!(v.role_ids(0).contains(&v.id("person")));
        assert!(v.role_ids(1).contains(&v.id("holding")));
        assert!(v.role_ids(2).contains(&v.id("fork")));
        assert_eq!(v.id("put"), UNK);
    }

    #[test]
    fn tokenize_examples() {
        let v = Vocabulary::from_tokens(["open", "the", "lid"]);
        let (open, the, lid) = (v.id("open"), v.id("the"), v.id("lid"));
        assert_eq!(
            tokenize_caption("Open the lid.", &v, 8),
            vec![BOS, open, the, lid, EOS, PAD, PAD, PAD]
        );
        assert_eq!(tokenize_caption("", &v, 5), vec![BOS, EOS, PAD, PAD, PAD]);
        let long = vec!["the"; 20].join(" ");
        let ids = tokenize_caption(&long, &v, 8);
        assert_eq!(ids.len(), 8);
        assert_eq!(&ids[1..7], &[the; 6]);
        assert_eq!(ids[7], EOS);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = Vocabulary::from_tokens(["open", "the", "lid"]);
        let lex: HashMap<_, _> = [("open".to_string(), PosTag::Verb)].into();
        v.set_pos_tags(&lex);
        let p = dir.path().join("vocab.txt");
        v.write(&p).unwrap();
        let back = Vocabulary::read(&p).unwrap();
        assert_eq!(back.tokens(), v.tokens());
        assert_eq!(back.pos_tag(back.id("open")), PosTag::Verb);
        assert_eq!(back.hash(), v.hash());
    }
}
