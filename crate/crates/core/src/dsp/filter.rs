use super::Waveform;

/// `y[n] = x[n] − a·x[n−1]` with `x[−1] = 0`. Expects `|a| < 1`.
pub fn preemphasis(w: &Waveform, a: f32) -> Waveform {
    debug_assert!(a.abs() < 1.0);
    let mut prev = 0.0;
    let samples = w
        .samples
        .iter()
        .map(|&x| {
            let y = x - a * prev;
            prev = x;
            y
        })
        .collect();
    Waveform::new(samples, w.sample_rate)
}

/// Inverse IIR of [`preemphasis`]: `y[n] = x[n] + a·y[n−1]`.
pub fn deemphasis(w: &Waveform, a: f32) -> Waveform {
    debug_assert!(a.abs() < 1.0);
    let mut prev = 0.0f64;
    let samples = w
        .samples
        .iter()
        .map(|&x| {
            prev = x as f64 + a as f64 * prev;
            prev as f32
        })
        .collect();
    Waveform::new(samples, w.sample_rate)
}
