use std::collections::HashMap;
use std::hash::Hash;

use super::ngram_counts;

/// Reference length closest to `hyp_len`; the shorter one wins a tie.
fn closest_ref_len<T>(hyp_len: usize, refs: &[Vec<T>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(hyp_len), r))
        .unwrap_or(0)
}

/// Clipped matches and hypothesis n-gram total for one order.
fn clipped<T: Eq + Hash + Clone>(hyp: &[T], refs: &[Vec<T>], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let mut max_ref: HashMap<&[T], usize> = HashMap::new();
    for r in refs {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_default();
            *e = (*e).max(c);
        }
    }
    let matched = h
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, hyp.len().saturating_sub(n - 1))
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

fn cumulative(precisions: &[f64], bp: f64) -> Vec<f64> {
    (1..=precisions.len())
        .map(|n| {
            if precisions[..n].iter().any(|&p| p <= 0.0) {
                0.0
            } else {
                bp * (precisions[..n].iter().map(|p| p.ln()).sum::<f64>() / n as f64).exp()
            }
        })
        .collect()
}

/// Sentence BLEU-1..`max_n`: clipped precision with add-one smoothing on
/// orders two and up, brevity penalty against the closest reference.
pub fn bleu<T: Eq + Hash + Clone>(hyp: &[T], refs: &[Vec<T>], max_n: usize) -> Vec<f64> {
    let max_n = max_n.max(1);
    if hyp.is_empty() || refs.is_empty() {
        return vec![0.0; max_n];
    }
    let precisions: Vec<f64> = (1..=max_n)
        .map(|n| {
            let (m, total) = clipped(hyp, refs, n);
            if n == 1 {
                m as f64 / total as f64
            } else {
                (m + 1) as f64 / (total + 1) as f64
            }
        })
        .collect();
    cumulative(&precisions, brevity_penalty(hyp.len(), closest_ref_len(hyp.len(), refs)))
}

/// Corpus BLEU-1..`max_n`: counts pooled over all samples, no smoothing.
pub fn corpus_bleu<T: Eq + Hash + Clone>(hyps: &[Vec<T>], refs: &[Vec<Vec<T>>], max_n: usize) -> Vec<f64> {
    let max_n = max_n.max(1);
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c, mut r) = (0, 0);
    for (h, rs) in hyps.iter().zip(refs) {
        c += h.len();
        r += closest_ref_len(h.len(), rs);
        for n in 1..=max_n {
            let (m, t) = clipped(h, rs, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    let precisions: Vec<f64> = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    cumulative(&precisions, brevity_penalty(c, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn identity_scores_one() {
        let s = toks("put the fork on the table");
        for v in bleu(&s, &[s.clone()], 4) {
            assert!((v - 1.0).abs() < 1e-12);
        }
        for v in corpus_bleu(&[s.clone()], &[vec![s.clone()]], 4) {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_example() {
        let b = bleu(&toks("the the the"), &[toks("the cat")], 4);
        assert!((b[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_overlap_and_empty() {
        assert_eq!(bleu(&toks("a b"), &[toks("c d")], 4)[0], 0.0);
        assert_eq!(bleu::<String>(&[], &[toks("c d")], 2), vec![0.0, 0.0]);
    }

    #[test]
    fn short_hypothesis_is_penalised() {
        let b = bleu(&toks("the cat"), &[toks("the cat sat down")], 1);
        assert!((b[0] - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }
}
