/// Default recall weight in the ROUGE-L F-measure.
pub const ROUGE_BETA: f64 = 1.2;

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure `(1 + b^2) P R / (R + b^2 P)`.
pub fn rouge_l<T: PartialEq>(hyp: &[T], reference: &[T], beta: f64) -> f64 {
    rouge_l_multi(hyp, std::slice::from_ref(&reference), beta)
}

/// Multi-reference form: precision and recall are each maximised over the
/// references before combining.
pub fn rouge_l_multi<T: PartialEq, R: AsRef<[T]>>(hyp: &[T], refs: &[R], beta: f64) -> f64 {
    if hyp.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let (mut p, mut r) = (0.0f64, 0.0f64);
    for rf in refs {
        let rf = rf.as_ref();
        if rf.is_empty() {
            continue;
        }
        let l = lcs_len(hyp, rf) as f64;
        p = p.max(l / hyp.len() as f64);
        r = r.max(l / rf.len() as f64);
    }
    if p == 0.0 || r == 0.0 {
        return 0.0;
    }
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let a = ["a", "b", "c", "d"];
        assert!((rouge_l(&a, &a, ROUGE_BETA) - 1.0).abs() < 1e-15);
        let f = rouge_l(&a, &["a", "c", "d"], ROUGE_BETA);
        let b2 = 1.44;
        assert!((f - (1.0 + b2) * 0.75 / (1.0 + b2 * 0.75)).abs() < 1e-15);
        assert_eq!(rouge_l(&["x"], &["y"], ROUGE_BETA), 0.0);
        assert_eq!(rouge_l::<&str>(&[], &[], ROUGE_BETA), 0.0);
    }
}
