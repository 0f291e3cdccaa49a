//! Polyphase FIR resampling with a Kaiser-windowed sinc prototype.

use crate::error::{Error, Result};

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Rationalize an fs pair to (up, down) with small integers.
fn ratio(fs_in: f64, fs_out: f64) -> (usize, usize) {
    // sampling rates are specified to mHz resolution
    let a = (fs_out * 1000.0).round() as u64;
    let b = (fs_in * 1000.0).round() as u64;
    let g = gcd(a, b);
    ((a / g) as usize, (b / g) as usize)
}

/// Modified Bessel function of the first kind, order zero (series expansion).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_sq = x * x / 4.0;
    for k in 1..50 {
        term *= half_sq / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-16 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass for a polyphase resampler.
/// `cutoff` is normalized to the upsampled Nyquist (0..1).
fn design_lowpass(up: usize, down: usize, beta: f64) -> Vec<f64> {
    let max_rate = up.max(down);
    let half_zero_crossings = 10;
    let half_len = half_zero_crossings * max_rate;
    let n_taps = 2 * half_len + 1;
    let cutoff = 1.0 / max_rate as f64; // fraction of upsampled Nyquist
    let i0b = bessel_i0(beta);
    let mut h = Vec::with_capacity(n_taps);
    for i in 0..n_taps {
        let t = i as f64 - half_len as f64;
        let sinc = if t == 0.0 {
            cutoff
        } else {
            (std::f64::consts::PI * cutoff * t).sin() / (std::f64::consts::PI * t)
        };
        let w_arg = 1.0 - (t / half_len as f64).powi(2);
        let window = bessel_i0(beta * w_arg.max(0.0).sqrt()) / i0b;
        h.push(sinc * window * up as f64);
    }
    h
}

/// Resample one channel from `fs_in` to `fs_out`.
///
/// Output length is `round(n · fs_out / fs_in)`; the first output sample is
/// aligned with the first input sample, and edges are handled by replicating
/// the boundary values so constant signals are preserved exactly.
pub fn resample_channel(x: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    if fs_in <= 0.0 || fs_out <= 0.0 {
        return Err(Error::Signal(format!(
            "sampling rates must be positive, got {fs_in} -> {fs_out}"
        )));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    if (fs_in - fs_out).abs() < 1e-9 {
        return Ok(x.to_vec());
    }
    let (up, down) = ratio(fs_in, fs_out);
    let out_len = ((x.len() as f64) * fs_out / fs_in).round() as usize;
    let h = design_lowpass(up, down, 8.6);
    let half = (h.len() - 1) / 2;
    let n = x.len() as isize;

    // per-phase tap sums for exact DC gain 1
    let mut phase_sum = vec![0.0; up];
    for (k, &hv) in h.iter().enumerate() {
        phase_sum[k % up] += hv;
    }

    let mut y = Vec::with_capacity(out_len);
    for m in 0..out_len {
        // output sample m sits at upsampled index m*down; taps centered at +half
        let center = m * down + half;
        // x_up[j] nonzero only at j = up*i
        let i_max = (center / up) as isize;
        let mut acc = 0.0;
        let phase = center % up;
        let norm = up as f64 / phase_sum[phase];
        let mut k = phase; // tap index aligned with x_up grid
        let mut i = i_max;
        while k < h.len() {
            let xi = x[i.clamp(0, n - 1) as usize];
            acc += h[k] * xi;
            k += up;
            i -= 1;
        }
        y.push(acc * norm / up as f64);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::pearson;

    #[test]
    fn constant_preserved() {
        let x = vec![3.25; 1000];
        let y = resample_channel(&x, 200.0, 50.0).unwrap();
        assert_eq!(y.len(), 250);
        for v in &y {
            assert!((v - 3.25).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn length_rule() {
        let x = vec![0.0; 1000];
        assert_eq!(resample_channel(&x, 200.0, 50.0).unwrap().len(), 250);
        assert_eq!(resample_channel(&x, 100.0, 50.0).unwrap().len(), 500);
        assert_eq!(resample_channel(&x, 50.0, 50.0).unwrap().len(), 1000);
    }

    #[test]
    fn sine_preserved() {
        let fs_in = 200.0;
        let fs_out = 50.0;
        let n = 2000;
        let f = 5.0;
        let x: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * f * i as f64 / fs_in).sin())
            .collect();
        let y = resample_channel(&x, fs_in, fs_out).unwrap();
        let ideal: Vec<f64> = (0..y.len())
            .map(|i| (std::f64::consts::TAU * f * i as f64 / fs_out).sin())
            .collect();
        let r = pearson(&y, &ideal);
        assert!(r >= 0.999, "correlation {r}");
    }

    #[test]
    fn invalid_rates_rejected() {
        assert!(resample_channel(&[1.0], 0.0, 50.0).is_err());
        assert!(resample_channel(&[1.0], 100.0, -1.0).is_err());
    }
}
