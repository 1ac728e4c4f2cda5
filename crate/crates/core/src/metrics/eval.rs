use std::path::Path;

use super::{EvalReport, PosLexicon};
use crate::dataset::{detokenize, Split, Vocabulary};
use crate::decoder::SearchStrategy;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::{dataset_vocabulary, generate_all, load_prepared, Checkpoint, Prepared};

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub split: Split,
    pub strategy: SearchStrategy,
    /// Row label in the report.
    pub system: String,
    /// Explicit lexicon; defaults to the dataset's `lexicon.tsv`.
    pub lexicon: Option<std::path::PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            split: Split::Test,
            strategy: SearchStrategy::Greedy,
            system: "model".into(),
            lexicon: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    /// (sample id, generated caption).
    pub captions: Vec<(String, String)>,
}

/// Scores `model` on prepared samples.
pub fn evaluate_prepared(
    model: &Model,
    vocab: &Vocabulary,
    data: &[Prepared],
    lexicon: &PosLexicon,
    strategy: SearchStrategy,
    system: &str,
) -> Result<Evaluation> {
    let hyps: Vec<Vec<String>> = generate_all(model, data, strategy)?
        .iter()
        .map(|g| detokenize(g, vocab))
        .collect();
    let refs: Vec<Vec<String>> = data.iter().map(|p| p.reference.clone()).collect();
    let report = EvalReport::score(system, &hyps, &refs, lexicon);
    let captions = data.iter().zip(&hyps).map(|(p, h)| (p.id.clone(), h.join(" "))).collect();
    Ok(Evaluation { report, captions })
}

/// Loads a checkpoint, checks it against the dataset's vocabulary, captions
/// every sample of the split and scores the result.
pub fn evaluate(checkpoint: &Path, dataset: &Path, opts: &EvalOptions) -> Result<Evaluation> {
    let ck = Checkpoint::load(checkpoint)?;
    let vocab = dataset_vocabulary(dataset, ck.config.min_count)?;
    if vocab.hash() != ck.vocab.hash() {
        return Err(Error::VocabularyMismatch {
            expected: ck.vocab.hash(),
            found: vocab.hash(),
        });
    }
    let lex_path = opts.lexicon.clone().unwrap_or_else(|| dataset.join("lexicon.tsv"));
    let lexicon = PosLexicon::read(&lex_path)?;
    let data = load_prepared(dataset, opts.split, &ck.vocab, &ck.config)?;
    evaluate_prepared(&ck.model, &ck.vocab, &data, &lexicon, opts.strategy, &opts.system)
}
