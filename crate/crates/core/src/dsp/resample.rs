use super::Waveform;
use crate::error::{Error, Result};

const TAPS: usize = 64;
const KAISER_BETA: f64 = 8.6;
/// Cutoff as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(x: f64) -> f64 {
    if x.abs() > 1.0 {
        0.0
    } else {
        bessel_i0(KAISER_BETA * (1.0 - x * x).sqrt()) / bessel_i0(KAISER_BETA)
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Polyphase filter bank: `up` phases of `TAPS` coefficients each, every
/// phase normalized to unit DC gain.
fn filter_bank(up: usize, cutoff: f64) -> Vec<f64> {
    let half = (TAPS / 2) as f64;
    let mut bank = vec![0.0; up * TAPS];
    for phase in 0..up {
        let delta = phase as f64 / up as f64;
        let row = &mut bank[phase * TAPS..(phase + 1) * TAPS];
        for (j, h) in row.iter_mut().enumerate() {
            // distance from the output instant to input sample (base - 31 + j)
            let tau = delta + (TAPS / 2 - 1) as f64 - j as f64;
            *h = 2.0 * cutoff * sinc(2.0 * cutoff * tau) * kaiser(tau / half);
        }
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|h| *h /= sum);
    }
    bank
}

/// Rational polyphase resampling with a Kaiser-windowed sinc (β = 8.6,
/// 64 taps per phase). Output length is `round(len · target / source)`.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 || w.sample_rate == 0 {
        return Err(Error::invalid(format!(
            "sample rates must be positive (source {}, target {target_rate})",
            w.sample_rate
        )));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let (src, tgt) = (w.sample_rate as u64, target_rate as u64);
    let g = gcd(src, tgt);
    let (up, down) = ((tgt / g) as usize, (src / g) as usize);
    let len = w.samples.len() as u128;
    let out_len = ((2 * len * tgt as u128 + src as u128) / (2 * src as u128)) as usize;
    // cutoff in cycles per input sample
    let cutoff = 0.5 * ROLLOFF * (tgt as f64 / src as f64).min(1.0);
    let bank = filter_bank(up, cutoff);
    let x = &w.samples;
    let n_in = x.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let pos = n as u128 * down as u128;
        let base = (pos / up as u128) as isize;
        let phase = (pos % up as u128) as usize;
        let taps = &bank[phase * TAPS..(phase + 1) * TAPS];
        let first = base - (TAPS / 2 - 1) as isize;
        let mut acc = 0.0f64;
        for (j, &h) in taps.iter().enumerate() {
            let k = first + j as isize;
            if k >= 0 && k < n_in {
                acc += h * x[k as usize] as f64;
            }
        }
        out.push(acc as f32);
    }
    Ok(Waveform::new(out, target_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, rate: u32, secs: f64) -> Waveform {
        let n = (rate as f64 * secs) as usize;
        Waveform::new(
            (0..n)
                .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32)
                .collect(),
            rate,
        )
    }

    #[test]
    fn equal_rates_identity() {
        let w = sine(440.0, 8000, 0.1);
        assert_eq!(resample(&w, 8000).unwrap(), w);
    }

    #[test]
    fn rejects_zero_rate() {
        let w = sine(440.0, 8000, 0.01);
        assert!(resample(&w, 0).is_err());
    }

    #[test]
    fn length_arithmetic() {
        let w = sine(300.0, 16_000, 1.2345);
        let r = resample(&w, 10_000).unwrap();
        let expected = w.len() as f64 * 10_000.0 / 16_000.0;
        assert!((r.len() as f64 - expected).abs() <= 0.5 + 1e-9);
        assert!((r.duration_secs() - w.duration_secs()).abs() <= 1.0 / 10_000.0);
    }

    #[test]
    fn downsampled_sine_keeps_amplitude_and_frequency() {
        let w = sine(1000.0, 20_000, 1.0);
        let r = resample(&w, 10_000).unwrap();
        // compare against the analytic sine at the new rate, away from edges
        let mut max_err = 0.0f64;
        let (mut power, mut count) = (0.0f64, 0usize);
        for (i, &y) in r.samples.iter().enumerate().skip(200).take(r.len() - 400) {
            let t = i as f64 / 10_000.0;
            let expected = (2.0 * PI * 1000.0 * t).sin();
            max_err = max_err.max((y as f64 - expected).abs());
            power += (y as f64).powi(2);
            count += 1;
        }
        // an integer number of periods fits, so rms * sqrt(2) is the amplitude
        let amplitude = (2.0 * power / count as f64).sqrt();
        assert!((amplitude - 1.0).abs() < 0.01, "amplitude {amplitude}");
        assert!(max_err < 0.01, "max error {max_err}");
    }

    #[test]
    fn upsampling_preserves_sine() {
        let w = sine(500.0, 8000, 0.5);
        let r = resample(&w, 10_000).unwrap();
        for (i, &y) in r.samples.iter().enumerate().skip(200).take(r.len() - 400) {
            let expected = (2.0 * PI * 500.0 * i as f64 / 10_000.0).sin();
            assert!((y as f64 - expected).abs() < 0.01);
        }
    }
}
