use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::action::{ActionSpec, Verb};
use super::scene::{CATALOG, ZONES};
use crate::dataset::{normalize, PosTag};

/// Paraphrase templates per verb. `{obj}`, `{src}` and `{dst}` are filled
/// from the action; each verb only uses slots its actions always carry.
pub fn templates(verb: Verb) -> &'static [&'static str] {
    match verb {
        Verb::Take => &[
            "take the {obj} from the {src}",
            "take the {obj} off the {src}",
            "please take the {obj} that is on the {src}",
        ],
        Verb::Put => &[
            "put the {obj} on the {dst}",
            "put the {obj} down on the {dst}",
            "put the {obj} onto the {dst}",
        ],
        Verb::Open => &[
            "open the {obj}",
            "open the {obj} on the {src}",
            "please open the {obj} that is on the {src}",
        ],
        Verb::Close => &[
            "close the {obj}",
            "close the {obj} on the {src}",
            "please close the {obj} that is on the {src}",
        ],
        Verb::Move => &[
            "move the {obj} to the {dst}",
            "move the {obj} from the {src} to the {dst}",
            "move the {obj} over to the {dst}",
        ],
        Verb::Wash => &[
            "wash the {obj}",
            "wash the dirty {obj}",
            "please wash the {obj}",
        ],
        Verb::Hang => &[
            "hang the {obj} on the {dst}",
            "hang up the {obj} on the {dst}",
            "hang the {obj} up on the {dst}",
        ],
        Verb::Remove => &[
            "remove the {obj} from the {src}",
            "remove the {obj} out of the {src}",
            "please remove the {obj} that is in the {src}",
        ],
    }
}

/// Picks a paraphrase for `action`, deterministic in `seed`.
pub fn caption_action(action: &ActionSpec, seed: u64) -> String {
    let options = templates(action.verb);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tpl = options[rng.random_range(0..options.len())];
    tpl.replace("{obj}", &action.object)
        .replace("{src}", action.source.as_deref().unwrap_or("place"))
        .replace("{dst}", action.destination.as_deref().unwrap_or("place"))
}

/// Verb class named by a caption: the first token that is a verb lemma.
pub fn caption_verb(caption: &str) -> Option<Verb> {
    normalize(caption)
        .iter()
        .find_map(|t| Verb::ALL.into_iter().find(|v| v.lemma() == t))
}

/// Gold part-of-speech tags for every token the generator can emit.
pub fn lexicon() -> BTreeMap<String, PosTag> {
    let mut lex = BTreeMap::new();
    for v in Verb::ALL {
        for tpl in templates(v) {
            for tok in normalize(&tpl.replace(['{', '}'], " ")) {
                lex.entry(tok).or_insert(PosTag::Other);
            }
        }
    }
    lex.retain(|t, _| !matches!(t.as_str(), "obj" | "src" | "dst"));
    for v in Verb::ALL {
        lex.insert(v.lemma().to_string(), PosTag::Verb);
    }
    lex.insert("is".into(), PosTag::AuxVerb);
    for c in CATALOG {
        lex.insert(c.name.to_string(), PosTag::Noun);
    }
    for z in ZONES {
        lex.insert(z.to_string(), PosTag::Noun);
    }
    lex.insert("place".into(), PosTag::Noun);
    lex
}

pub fn lexicon_map() -> HashMap<String, PosTag> {
    lexicon().into_iter().collect()
}
