//! Butterworth band-pass design and zero-phase application.
//!
//! The band-pass is a 4th-order Butterworth prototype transformed to
//! band-pass form (8 poles, four biquad sections) via the bilinear transform
//! with prewarped edges, and applied forward–backward so the net response is
//! zero phase with squared magnitude.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct C(f64, f64); // complex a + bi

impl C {
    fn add(self, o: C) -> C {
        C(self.0 + o.0, self.1 + o.1)
    }
    fn sub(self, o: C) -> C {
        C(self.0 - o.0, self.1 - o.1)
    }
    fn mul(self, o: C) -> C {
        C(self.0 * o.0 - self.1 * o.1, self.0 * o.1 + self.1 * o.0)
    }
    fn scale(self, s: f64) -> C {
        C(self.0 * s, self.1 * s)
    }
    fn div(self, o: C) -> C {
        let d = o.0 * o.0 + o.1 * o.1;
        C(
            (self.0 * o.0 + self.1 * o.1) / d,
            (self.1 * o.0 - self.0 * o.1) / d,
        )
    }
    fn sqrt(self) -> C {
        let r = (self.0 * self.0 + self.1 * self.1).sqrt();
        let re = ((r + self.0) / 2.0).max(0.0).sqrt();
        let im = ((r - self.0) / 2.0).max(0.0).sqrt();
        C(re, if self.1 >= 0.0 { im } else { -im })
    }
    fn norm_sq(self) -> f64 {
        self.0 * self.0 + self.1 * self.1
    }
}

/// One second-order section, direct form II transposed coefficients.
/// Denominator is monic: y[n] = b0 x + b1 x₋₁ + b2 x₋₂ − a1 y₋₁ − a2 y₋₂.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn apply(&self, x: &mut [f64]) {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for v in x.iter_mut() {
            let xi = *v;
            let y = self.b[0] * xi + s1;
            s1 = self.b[1] * xi - self.a[0] * y + s2;
            s2 = self.b[2] * xi - self.a[1] * y;
            *v = y;
        }
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    /// Single forward pass over a signal, zero initial state.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.apply(&mut y);
        }
        y
    }

    /// Complex frequency response magnitude at digital frequency `f` (Hz).
    pub fn gain_at(&self, f: f64, fs: f64) -> f64 {
        let w = std::f64::consts::TAU * f / fs;
        let z1 = C(w.cos(), -w.sin()); // z^-1
        let z2 = z1.mul(z1);
        let mut h = C(1.0, 0.0);
        for s in &self.sections {
            let num = C(s.b[0], 0.0).add(z1.scale(s.b[1])).add(z2.scale(s.b[2]));
            let den = C(1.0, 0.0).add(z1.scale(s.a[0])).add(z2.scale(s.a[1]));
            h = h.mul(num.div(den));
        }
        h.norm_sq().sqrt()
    }
}

/// Design an order-`order` Butterworth band-pass (2·order poles) for the band
/// `[f_lo, f_hi]` at sampling rate `fs`, as a cascade of biquads.
pub fn butter_bandpass(order: usize, f_lo: f64, f_hi: f64, fs: f64) -> Result<SosFilter> {
    if !(f_lo > 0.0 && f_lo < f_hi && f_hi < fs / 2.0) {
        return Err(Error::Signal(format!(
            "invalid band edges [{f_lo}, {f_hi}] Hz at fs {fs} Hz (need 0 < lo < hi < fs/2)"
        )));
    }
    if order % 2 != 0 {
        return Err(Error::Signal("band-pass prototype order must be even".into()));
    }
    let fs2 = 2.0 * fs;
    // prewarped analog edges
    let w_lo = fs2 * (std::f64::consts::PI * f_lo / fs).tan();
    let w_hi = fs2 * (std::f64::consts::PI * f_hi / fs).tan();
    let w0_sq = w_lo * w_hi;
    let bw = w_hi - w_lo;

    // prototype poles in the upper half plane; conjugates handled pairwise
    let n = order;
    let mut sections = Vec::new();
    for k in 0..n / 2 {
        let theta = std::f64::consts::PI * (2.0 * (k as f64 + 1.0) + n as f64 - 1.0)
            / (2.0 * n as f64);
        let p = C(theta.cos(), theta.sin()); // |p| = 1, Re < 0, Im > 0
        // low-pass -> band-pass: s = (pB ± sqrt(p²B² − 4ω0²)) / 2
        let pb = p.scale(bw);
        let disc = pb.mul(pb).sub(C(4.0 * w0_sq, 0.0)).sqrt();
        for sign in [1.0, -1.0] {
            let s = pb.add(disc.scale(sign)).scale(0.5);
            // bilinear: z = (2fs + s) / (2fs − s)
            let zp = C(fs2 + s.0, s.1).div(C(fs2 - s.0, -s.1));
            // conjugate pole pair -> real denominator; numerator (1 − z^-2)
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-2.0 * zp.0, zp.norm_sq()],
            });
        }
    }
    let mut filt = SosFilter { sections };
    // unit gain at the geometric band centre
    let f_center = (f_lo * f_hi).sqrt();
    let g = filt.gain_at(f_center, fs);
    if !(g.is_finite() && g > 0.0) {
        return Err(Error::Signal("degenerate band-pass design".into()));
    }
    let per_section = (1.0 / g).powf(1.0 / filt.sections.len() as f64);
    for s in &mut filt.sections {
        for b in &mut s.b {
            *b *= per_section;
        }
    }
    Ok(filt)
}

/// Forward–backward (zero-phase) filtering with odd-reflection padding.
pub fn filtfilt(filter: &SosFilter, x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    // odd reflection about the end points preserves local trend
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    let mut y = filter.filter(&ext);
    y.reverse();
    let mut y = filter.filter(&y);
    y.reverse();
    y[pad..pad + n].to_vec()
}
