//! Per-channel robust scaling (median / interquartile range) with clamping.

use crate::error::{Error, Result};

/// Values outside this range are clamped after scaling.
pub const CLAMP: f64 = 5.0;

/// Per-channel center (median) and scale (25–75% interquartile range),
/// fitted on training-split samples only.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ScalerStats {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// Channels whose IQR was zero; their scale fell back to 1.
    pub degenerate_channels: Vec<usize>,
}

/// Linear-interpolation quantile of a sorted slice (numpy type-7 rule).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl ScalerStats {
    /// Fit on the samples of `channels` covered by `ranges` (sample indices).
    pub fn fit(channels: &[Vec<f64>], ranges: &[std::ops::Range<usize>]) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Signal("no channels to fit scaler on".into()));
        }
        let n = channels[0].len();
        let mut center = Vec::with_capacity(channels.len());
        let mut scale = Vec::with_capacity(channels.len());
        let mut degenerate = Vec::new();
        for (ci, ch) in channels.iter().enumerate() {
            let mut vals: Vec<f64> = Vec::new();
            for r in ranges {
                let r = r.start.min(n)..r.end.min(n);
                vals.extend_from_slice(&ch[r]);
            }
            if vals.is_empty() {
                return Err(Error::Signal(format!(
                    "no training samples available to fit scaler (channel {ci})"
                )));
            }
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let med = quantile_sorted(&vals, 0.5);
            let iqr = quantile_sorted(&vals, 0.75) - quantile_sorted(&vals, 0.25);
            center.push(med);
            if iqr > 0.0 {
                scale.push(iqr);
            } else {
                degenerate.push(ci);
                scale.push(1.0);
            }
        }
        Ok(ScalerStats {
            center,
            scale,
            degenerate_channels: degenerate,
        })
    }

    /// Fit on complete channels.
    pub fn fit_all(channels: &[Vec<f64>]) -> Result<Self> {
        let n = channels.first().map_or(0, |c| c.len());
        Self::fit(channels, &[0..n])
    }

    /// `clip((x − center) / scale, −5, +5)` per channel.
    pub fn transform(&self, channels: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if channels.len() != self.center.len() {
            return Err(Error::Signal(format!(
                "scaler fitted on {} channels, applied to {}",
                self.center.len(),
                channels.len()
            )));
        }
        Ok(channels
            .iter()
            .enumerate()
            .map(|(i, ch)| {
                let c = self.center[i];
                let s = self.scale[i];
                ch.iter()
                    .map(|&v| ((v - c) / s).clamp(-CLAMP, CLAMP))
                    .collect()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_median_iqr() {
        // channel {1..9}: median 5, IQR 4; input 9 -> (9-5)/4 = 1.0
        let ch = vec![(1..=9).map(|v| v as f64).collect::<Vec<_>>()];
        let stats = ScalerStats::fit_all(&ch).unwrap();
        assert_eq!(stats.center[0], 5.0);
        assert_eq!(stats.scale[0], 4.0);
        let out = stats.transform(&[vec![9.0]]).unwrap();
        assert_eq!(out[0][0], 1.0);
    }

    #[test]
    fn median_maps_to_zero() {
        let ch = vec![vec![2.0, 4.0, 6.0, 8.0, 10.0]];
        let stats = ScalerStats::fit_all(&ch).unwrap();
        let out = stats.transform(&[vec![6.0]]).unwrap();
        assert_eq!(out[0][0], 0.0);
    }

    #[test]
    fn clamp_applied() {
        // value mapping to 7 pre-clamp comes out at exactly 5
        let ch = vec![(1..=9).map(|v| v as f64).collect::<Vec<_>>()];
        let stats = ScalerStats::fit_all(&ch).unwrap();
        let out = stats.transform(&[vec![5.0 + 7.0 * 4.0]]).unwrap();
        assert_eq!(out[0][0], 5.0);
    }

    #[test]
    fn zero_iqr_falls_back() {
        let ch = vec![vec![2.0; 10]];
        let stats = ScalerStats::fit_all(&ch).unwrap();
        assert_eq!(stats.scale[0], 1.0);
        assert_eq!(stats.degenerate_channels, vec![0]);
    }

    #[test]
    fn channel_count_mismatch_rejected() {
        let stats = ScalerStats::fit_all(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(stats.transform(&[vec![1.0], vec![2.0]]).is_err());
    }
}
