//! Caption metrics: BLEU, ROUGE-L, CIDEr and content-word P/R/F, plus the
//! evaluation report that gathers them.

mod bleu;
mod cider;
mod content;
mod eval;
mod rouge;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bleu::{bleu, corpus_bleu};
pub use cider::{cider, CiderScore};
pub use content::{class_counts, content_word_prf, PosClass, PosLexicon, Prf, AUXILIARY_STOPLIST};
pub use eval::{evaluate, evaluate_prepared, EvalOptions, Evaluation};
pub use rouge::{lcs_len, rouge_l, rouge_l_multi, ROUGE_BETA};

/// Counts of every contiguous `n`-gram of `toks`.
pub fn ngram_counts<T: Eq + Hash>(toks: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if n == 0 {
        return m;
    }
    for g in toks.windows(n) {
        *m.entry(g).or_default() += 1;
    }
    m
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub samples: usize,
    /// Mean smoothed sentence BLEU-1..4.
    pub bleu: [f64; 4],
    /// Unsmoothed corpus BLEU-1..4.
    pub corpus_bleu: [f64; 4],
    pub rouge_l: f64,
    pub cider: f64,
    pub cider_degenerate: bool,
    pub noun: Prf,
    pub verb: Prf,
    pub verb_independent: Prf,
}

pub const REPORT_COLUMNS: [&str; 22] = [
    "system",
    "samples",
    "bleu1",
    "bleu2",
    "bleu3",
    "bleu4",
    "corpus_bleu1",
    "corpus_bleu2",
    "corpus_bleu3",
    "corpus_bleu4",
    "rouge_l",
    "cider",
    "cider_degenerate",
    "noun_p",
    "noun_r",
    "noun_f",
    "verb_p",
    "verb_r",
    "verb_f",
    "verb_independent_p",
    "verb_independent_r",
    "verb_independent_f",
];

impl EvalReport {
    /// Scores hypotheses against one reference each.
    pub fn score<S: AsRef<str>>(system: &str, hyps: &[Vec<S>], refs: &[Vec<S>], lexicon: &PosLexicon) -> Self {
        let h: Vec<Vec<&str>> = hyps.iter().map(|t| t.iter().map(AsRef::as_ref).collect()).collect();
        let r: Vec<Vec<Vec<&str>>> = refs.iter().map(|t| vec![t.iter().map(AsRef::as_ref).collect()]).collect();
        let n = h.len().min(r.len());
        let mut sent = [0.0; 4];
        let mut rouge = 0.0;
        for i in 0..n {
            for (acc, v) in sent.iter_mut().zip(bleu(&h[i], &r[i], 4)) {
                *acc += v;
            }
            rouge += rouge_l_multi(&h[i], &r[i], ROUGE_BETA);
        }
        let mean = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
        let cb = corpus_bleu(&h[..n], &r[..n], 4);
        let c = cider(&h[..n], &r[..n]);
        let flat: Vec<Vec<&str>> = r.iter().map(|x| x[0].clone()).collect();
        EvalReport {
            system: system.to_string(),
            samples: n,
            bleu: sent.map(mean),
            corpus_bleu: [cb[0], cb[1], cb[2], cb[3]],
            rouge_l: mean(rouge),
            cider: c.score,
            cider_degenerate: c.degenerate,
            noun: content_word_prf(&h[..n], &flat[..n], lexicon, PosClass::Noun),
            verb: content_word_prf(&h[..n], &flat[..n], lexicon, PosClass::Verb),
            verb_independent: content_word_prf(&h[..n], &flat[..n], lexicon, PosClass::VerbIndependent),
        }
    }

    pub fn prf(&self, class: PosClass) -> Prf {
        match class {
            PosClass::Noun => self.noun,
            PosClass::Verb => self.verb,
            PosClass::VerbIndependent => self.verb_independent,
        }
    }

    /// Bounds every field must satisfy.
    pub fn check_bounds(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0 + 1e-12).contains(&x);
        let mut ok = self.bleu.iter().chain(&self.corpus_bleu).all(|&x| unit(x)) && unit(self.rouge_l) && self.cider >= 0.0;
        for p in [self.noun, self.verb, self.verb_independent] {
            let f = if p.precision + p.recall > 0.0 {
                2.0 * p.precision * p.recall / (p.precision + p.recall)
            } else {
                0.0
            };
            ok &= unit(p.precision) && unit(p.recall) && (p.f - f).abs() < 1e-12;
        }
        if ok {
            Ok(())
        } else {
            Err(Error::Inapplicable(format!("report out of bounds: {self:?}")))
        }
    }

    fn values(&self) -> Vec<String> {
        let mut v = vec![self.system.clone(), self.samples.to_string()];
        v.extend(self.bleu.iter().chain(&self.corpus_bleu).map(|x| format!("{x:.6}")));
        v.push(format!("{:.6}", self.rouge_l));
        v.push(format!("{:.6}", self.cider));
        v.push(self.cider_degenerate.to_string());
        for p in [self.noun, self.verb, self.verb_independent] {
            v.extend([p.precision, p.recall, p.f].map(|x| format!("{x:.6}")));
        }
        v
    }

    fn from_values(cols: &[&str]) -> Option<Self> {
        if cols.len() != REPORT_COLUMNS.len() {
            return None;
        }
        let f = |i: usize| cols[i].parse::<f64>().ok();
        let prf = |i: usize| {
            Some(Prf {
                precision: f(i)?,
                recall: f(i + 1)?,
                f: f(i + 2)?,
            })
        };
        Some(EvalReport {
            system: cols[0].to_string(),
            samples: cols[1].parse().ok()?,
            bleu: [f(2)?, f(3)?, f(4)?, f(5)?],
            corpus_bleu: [f(6)?, f(7)?, f(8)?, f(9)?],
            rouge_l: f(10)?,
            cider: f(11)?,
            cider_degenerate: cols[12].parse().ok()?,
            noun: prf(13)?,
            verb: prf(16)?,
            verb_independent: prf(19)?,
        })
    }
}

/// Tab-separated table with one header line and one row per report.
pub fn render_reports(reports: &[EvalReport]) -> String {
    let mut s = REPORT_COLUMNS.join("\t");
    s.push('\n');
    for r in reports {
        let _ = writeln!(s, "{}", r.values().join("\t"));
    }
    s
}

pub fn write_reports(path: &Path, reports: &[EvalReport]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, render_reports(reports))?;
    Ok(())
}

pub fn read_reports(path: &Path) -> Result<Vec<EvalReport>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split('\t').eq(REPORT_COLUMNS) => {}
        _ => {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                line: 1,
                message: "unexpected report header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            EvalReport::from_values(&l.split('\t').collect::<Vec<_>>()).ok_or_else(|| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 1,
                message: "bad report row".into(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_evaluation_is_ceiling() {
        let lex = PosLexicon::new(crate::synthetic::lexicon_map());
        let refs: Vec<Vec<&str>> = vec![
            "put the fork on the table".split(' ').collect(),
            "open the lid that is on the shelf".split(' ').collect(),
            "wash the dirty cup".split(' ').collect(),
        ];
        let r = EvalReport::score("refs", &refs, &refs, &lex);
        for b in r.bleu.iter().chain(&r.corpus_bleu) {
            assert!((b - 1.0).abs() < 1e-12);
        }
        assert!((r.rouge_l - 1.0).abs() < 1e-12);
        for c in PosClass::ALL {
            assert_eq!(r.prf(c).f, 1.0);
        }
        r.check_bounds().unwrap();
    }

    #[test]
    fn report_round_trips_through_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let lex = PosLexicon::default();
        let a = vec![vec!["a", "b", "c"]];
        let b = vec![vec!["a", "c", "d"]];
        let rep = EvalReport::score("x", &a, &b, &lex);
        let p = dir.path().join("r.tsv");
        write_reports(&p, std::slice::from_ref(&rep)).unwrap();
        let back = read_reports(&p).unwrap();
        assert_eq!(back.len(), 1);
        assert!((back[0].rouge_l - rep.rouge_l).abs() < 1e-6);
        assert_eq!(back[0].system, "x");
    }
}
