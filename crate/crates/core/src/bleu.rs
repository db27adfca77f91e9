//! Corpus BLEU with clipped n-gram precision and a brevity penalty.

use std::collections::HashMap;

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

/// BLEU-1 through BLEU-`max_n` (uniform weights) over hypothesis/reference
/// pairs. A zero precision at any order makes that score and all higher
/// ones 0.
pub fn corpus_bleu<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)], max_n: usize) -> Vec<f64> {
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (hyp, reference) in pairs {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=max_n {
            let h = ngrams(hyp, n);
            let r = ngrams(reference, n);
            matched[n - 1] += h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum::<usize>();
            total[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }
    let bp = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let mut log_sum = 0.0;
    (1..=max_n)
        .map(|n| {
            let p = if total[n - 1] == 0 {
                0.0
            } else {
                matched[n - 1] as f64 / total[n - 1] as f64
            };
            log_sum += if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
            if log_sum.is_finite() {
                bp * (log_sum / n as f64).exp()
            } else {
                0.0
            }
        })
        .collect()
}
