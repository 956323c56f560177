/// Square-root compressed, min-max scaled magnitudes (`frames × bins`).
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedFeature {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f32>,
}

/// `(√|X| − min √|X|) / (max √|X| − min √|X|)` over the whole block; a
/// constant block maps to zeros.
pub fn normalize_input(magnitude: &[f32], frames: usize, bins: usize) -> NormalizedFeature {
    debug_assert_eq!(magnitude.len(), frames * bins);
    let roots: Vec<f32> = magnitude.iter().map(|m| m.max(0.0).sqrt()).collect();
    let (lo, hi) = roots
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let values = if roots.is_empty() || hi <= lo {
        vec![0.0; roots.len()]
    } else {
        let span = hi - lo;
        roots.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
    };
    NormalizedFeature {
        frames,
        bins,
        values,
    }
}
