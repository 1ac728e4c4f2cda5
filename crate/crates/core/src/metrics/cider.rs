use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use super::ngram_counts;

#[derive(Debug, Clone, PartialEq)]
pub struct CiderScore {
    pub score: f64,
    pub per_sample: Vec<f64>,
    /// Every reference n-gram occurs in every sample, so all idf weights
    /// vanish and the score carries no information.
    pub degenerate: bool,
}

fn tfidf<'a, T: Eq + Hash>(
    counts: HashMap<&'a [T], usize>,
    df: &HashMap<&[T], usize>,
    log_n: f64,
) -> HashMap<&'a [T], f64> {
    counts
        .into_iter()
        .map(|(g, c)| {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            (g, c as f64 * (log_n - d.ln()))
        })
        .collect()
}

fn cosine<T: Eq + Hash>(a: &HashMap<&[T], f64>, b: &HashMap<&[T], f64>) -> f64 {
    let na = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().filter_map(|(g, v)| b.get(g).map(|w| v * w)).sum::<f64>() / (na * nb)
}

/// CIDEr over a corpus: mean over samples of `10 * mean_n mean_refs cos`,
/// with tf-idf weights whose document frequency counts reference sets.
pub fn cider<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<Vec<T>>]) -> CiderScore {
    let n_docs = hyps.len().min(refs.len());
    if n_docs == 0 {
        return CiderScore {
            score: 0.0,
            per_sample: Vec::new(),
            degenerate: true,
        };
    }
    let log_n = (n_docs as f64).ln();
    let mut per_sample = vec![0.0; n_docs];
    let mut any_weight = false;
    for n in 1..=4 {
        let mut df: HashMap<&[T], usize> = HashMap::new();
        for rs in &refs[..n_docs] {
            let grams: HashSet<&[T]> = rs.iter().flat_map(|r| r.windows(n)).collect();
            for g in grams {
                *df.entry(g).or_default() += 1;
            }
        }
        any_weight |= df.values().any(|&d| d < n_docs);
        for i in 0..n_docs {
            let h = tfidf(ngram_counts(&hyps[i], n), &df, log_n);
            if refs[i].is_empty() {
                continue;
            }
            let sim: f64 = refs[i]
                .iter()
                .map(|r| cosine(&h, &tfidf(ngram_counts(r, n), &df, log_n)))
                .sum::<f64>()
                / refs[i].len() as f64;
            per_sample[i] += sim / 4.0 * 10.0;
        }
    }
    if !any_weight {
        return CiderScore {
            score: 0.0,
            per_sample: vec![0.0; n_docs],
            degenerate: true,
        };
    }
    CiderScore {
        score: per_sample.iter().sum::<f64>() / n_docs as f64,
        per_sample,
        degenerate: false,
    }
}
