use crate::error::{Error, Result};

/// Mean pairwise cosine similarity of embedding vectors grouped by the
/// dominant speaker of their bin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineReport {
    /// Mean over distinct pairs with the same dominant speaker.
    pub within: f64,
    /// Mean over pairs with different dominant speakers.
    pub across: f64,
    pub vectors: usize,
}

/// `embeddings` is `N × dim`, `labels` is `N × M` with exactly one `+1` per
/// row. Zero vectors are skipped. Runs in `O(N · (dim + M))` via per-class
/// sums of unit vectors.
pub fn cosine_separation_report(embeddings: &[f32], dim: usize, labels: &[f32], m: usize) -> Result<CosineReport> {
    if dim == 0 || m == 0 || embeddings.len() % dim != 0 {
        return Err(Error::invalid("embedding buffer does not match its dimension"));
    }
    let n = embeddings.len() / dim;
    if labels.len() != n * m {
        return Err(Error::shape("cosine_separation_report", &[n, dim], &[labels.len() / m, m]));
    }
    let mut sums = vec![vec![0.0f64; dim]; m];
    let mut counts = vec![0usize; m];
    for (v, y) in embeddings.chunks(dim).zip(labels.chunks(m)) {
        let norm = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let c = y.iter().position(|&l| l > 0.0).unwrap_or(0);
        counts[c] += 1;
        for (s, &x) in sums[c].iter_mut().zip(v) {
            *s += x as f64 / norm;
        }
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (mut within_sum, mut within_pairs) = (0.0, 0.0);
    for c in 0..m {
        let k = counts[c] as f64;
        if counts[c] >= 2 {
            // |Σ u|² counts every ordered pair plus the k self-pairs
            within_sum += dot(&sums[c], &sums[c]) - k;
            within_pairs += k * (k - 1.0);
        }
    }
    let (mut across_sum, mut across_pairs) = (0.0, 0.0);
    for c in 0..m {
        for d in c + 1..m {
            across_sum += dot(&sums[c], &sums[d]);
            across_pairs += (counts[c] * counts[d]) as f64;
        }
    }
    let ratio = |s: f64, p: f64| if p > 0.0 { s / p } else { f64::NAN };
    Ok(CosineReport {
        within: ratio(within_sum, within_pairs),
        across: ratio(across_sum, across_pairs),
        vectors: counts.iter().sum(),
    })
}
