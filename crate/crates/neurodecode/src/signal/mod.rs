//! Continuous-recording preprocessing and word-locked epoch extraction.
//!
//! The fixed pipeline order is: band-pass filter → resample → robust scale
//! and clamp → epoch extraction. All steps are per-channel and pure.

mod filter;
mod resample;
mod scaler;

pub use filter::{butter_bandpass, filtfilt, SosFilter};
pub use resample::resample_channel;
pub use scaler::{ScalerStats, CLAMP};

use crate::error::{Error, Result};

/// Default band edges in Hz.
pub const BAND_LO_HZ: f64 = 0.1;
pub const BAND_HI_HZ: f64 = 40.0;
/// Target sampling rate after resampling.
pub const TARGET_FS_HZ: f64 = 50.0;
/// Epoch window length in seconds.
pub const WINDOW_S: f64 = 3.0;
/// Baseline-correction span at the start of each window, seconds.
pub const BASELINE_S: f64 = 0.5;
/// Band-pass prototype order (the band-pass itself has twice as many poles).
pub const FILTER_ORDER: usize = 4;
/// Reflection padding applied at recording boundaries before filtering, seconds.
pub const FILTER_PAD_S: f64 = 2.0;

/// Stimulus modality of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Read,
    Listen,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Read => write!(f, "read"),
            Task::Listen => write!(f, "listen"),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "read" => Ok(Task::Read),
            "listen" => Ok(Task::Listen),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }
}

/// A continuous multichannel recording.
#[derive(Debug, Clone)]
pub struct Recording {
    /// Per-channel sample vectors, all the same length.
    pub channels: Vec<Vec<f64>>,
    /// Sampling rate in Hz.
    pub fs: f64,
    /// Sensor coordinates, normalized to the unit square.
    pub sensor_positions: Vec<[f64; 2]>,
    pub subject_id: String,
    pub dataset_id: String,
    pub task: Task,
}

impl Recording {
    pub fn n_sensors(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.channels.first().map_or(0, |c| c.len())
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }

    pub fn validate(&self) -> Result<()> {
        if self.fs <= 0.0 {
            return Err(Error::Signal("sampling rate must be positive".into()));
        }
        if self.channels.is_empty() {
            return Err(Error::Signal("recording has no sensors".into()));
        }
        let n = self.n_samples();
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(Error::Signal("ragged channel lengths".into()));
        }
        if self.sensor_positions.len() != self.channels.len() {
            return Err(Error::Signal(format!(
                "{} sensor positions for {} channels",
                self.sensor_positions.len(),
                self.channels.len()
            )));
        }
        if self
            .sensor_positions
            .iter()
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::Signal("non-finite sensor position".into()));
        }
        Ok(())
    }
}

/// A word-locked window of preprocessed signal, time-major (t × n_sensors).
#[derive(Debug, Clone)]
pub struct Epoch {
    pub data: Vec<f64>,
    pub t_samples: usize,
    pub n_sensors: usize,
    pub word: String,
    pub onset_s: f64,
    pub subject_id: String,
    pub sentence_id: u32,
}

impl Epoch {
    pub fn sample(&self, t: usize, sensor: usize) -> f64 {
        self.data[t * self.n_sensors + sensor]
    }
}

/// Band-pass every channel (zero phase, reflect-padded).
pub fn bandpass(
    channels: &[Vec<f64>],
    fs: f64,
    f_lo: f64,
    f_hi: f64,
) -> Result<Vec<Vec<f64>>> {
    let filt = butter_bandpass(FILTER_ORDER, f_lo, f_hi, fs)?;
    let pad = (FILTER_PAD_S * fs).round() as usize;
    Ok(channels
        .iter()
        .map(|ch| filtfilt(&filt, ch, pad))
        .collect())
}

/// Resample every channel from `fs_in` to `fs_out`.
pub fn resample(channels: &[Vec<f64>], fs_in: f64, fs_out: f64) -> Result<Vec<Vec<f64>>> {
    channels
        .iter()
        .map(|ch| resample_channel(ch, fs_in, fs_out))
        .collect()
}

/// `clip((x − center)/scale, −5, +5)` per channel; see [`ScalerStats`].
pub fn scale_and_clamp(stats: &ScalerStats, channels: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    stats.transform(channels)
}

/// Extract a baseline-corrected window starting at a word onset.
///
/// The window covers `[onset, onset + window_s)`; the per-channel mean of the
/// first `baseline_s` seconds is subtracted.
pub fn epoch_extract(
    rec: &Recording,
    onset_s: f64,
    window_s: f64,
    baseline_s: f64,
) -> Result<Epoch> {
    extract_window(rec, onset_s, window_s, baseline_s).map(|mut e| {
        e.onset_s = onset_s;
        e
    })
}

/// Window extraction used by both epoching and the baseline offset sweep;
/// `start_s` may differ from the word onset when a pre-onset margin is wanted.
pub fn extract_window(
    rec: &Recording,
    start_s: f64,
    window_s: f64,
    baseline_s: f64,
) -> Result<Epoch> {
    if start_s < 0.0 {
        return Err(Error::Signal(format!(
            "window start {start_s:.3} s is before the recording begins"
        )));
    }
    let start = (start_s * rec.fs).round() as usize;
    let t_samples = (window_s * rec.fs).round() as usize;
    let n = rec.n_samples();
    if start + t_samples > n {
        return Err(Error::Signal(format!(
            "window at onset {start_s:.3} s ({} samples from {start}) exceeds recording length {n}",
            t_samples
        )));
    }
    let n_sensors = rec.n_sensors();
    let baseline_n = (baseline_s * rec.fs).round() as usize;
    let mut data = vec![0.0; t_samples * n_sensors];
    for (s, ch) in rec.channels.iter().enumerate() {
        let window = &ch[start..start + t_samples];
        let base = if baseline_n > 0 {
            window[..baseline_n.min(t_samples)].iter().sum::<f64>()
                / baseline_n.min(t_samples) as f64
        } else {
            0.0
        };
        for (t, &v) in window.iter().enumerate() {
            data[t * n_sensors + s] = v - base;
        }
    }
    Ok(Epoch {
        data,
        t_samples,
        n_sensors,
        word: String::new(),
        onset_s: start_s,
        subject_id: rec.subject_id.clone(),
        sentence_id: 0,
    })
}

/// Full preprocessing of one recording: filter → resample → scale/clamp.
///
/// `train_ranges_s` are time spans (seconds, in the original recording) whose
/// samples may be used to fit the scaler — the training split only.
pub fn preprocess_recording(
    rec: &Recording,
    train_ranges_s: &[(f64, f64)],
) -> Result<(Recording, ScalerStats)> {
    rec.validate()?;
    let filtered = bandpass(&rec.channels, rec.fs, BAND_LO_HZ, BAND_HI_HZ)?;
    let resampled = resample(&filtered, rec.fs, TARGET_FS_HZ)?;
    let ranges: Vec<std::ops::Range<usize>> = train_ranges_s
        .iter()
        .map(|&(a, b)| {
            ((a * TARGET_FS_HZ).round() as usize)..((b * TARGET_FS_HZ).round() as usize)
        })
        .collect();
    let stats = if ranges.is_empty() {
        ScalerStats::fit_all(&resampled)?
    } else {
        ScalerStats::fit(&resampled, &ranges)?
    };
    let scaled = stats.transform(&resampled)?;
    Ok((
        Recording {
            channels: scaled,
            fs: TARGET_FS_HZ,
            sensor_positions: rec.sensor_positions.clone(),
            subject_id: rec.subject_id.clone(),
            dataset_id: rec.dataset_id.clone(),
            task: rec.task,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_recording(channels: Vec<Vec<f64>>, fs: f64) -> Recording {
        let n = channels.len();
        Recording {
            channels,
            fs,
            sensor_positions: (0..n).map(|i| [i as f64 / n as f64, 0.5]).collect(),
            subject_id: "s0".into(),
            dataset_id: "toy".into(),
            task: Task::Listen,
        }
    }

    #[test]
    fn epoch_window_sample_counts() {
        let rec = toy_recording(vec![(0..500).map(|i| i as f64).collect()], 50.0);
        let e = epoch_extract(&rec, 1.0, 3.0, 0.5).unwrap();
        assert_eq!(e.t_samples, 150); // 3 s at 50 Hz
        assert_eq!((0.5 * 50.0) as usize, 25); // baseline samples
    }

    #[test]
    fn constant_channel_zeroed_by_baseline() {
        let rec = toy_recording(vec![vec![4.2; 400], vec![-1.0; 400]], 50.0);
        let e = epoch_extract(&rec, 0.5, 3.0, 0.5).unwrap();
        assert!(e.data.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn baseline_mean_is_zero() {
        let rec = toy_recording(
            vec![(0..1000).map(|i| (i as f64 * 0.37).sin()).collect()],
            50.0,
        );
        let e = epoch_extract(&rec, 2.0, 3.0, 0.5).unwrap();
        let mean: f64 = (0..25).map(|t| e.sample(t, 0)).sum::<f64>() / 25.0;
        assert!(mean.abs() < 1e-9, "baseline mean {mean}");
    }

    #[test]
    fn window_out_of_bounds_names_onset() {
        let rec = toy_recording(vec![vec![0.0; 100]], 50.0);
        let err = epoch_extract(&rec, 1.5, 3.0, 0.5).unwrap_err();
        assert!(err.to_string().contains("1.5"), "{err}");
    }

    #[test]
    fn translation_consistency() {
        let raw: Vec<f64> = (0..800).map(|i| ((i as f64) * 0.13).sin()).collect();
        let rec = toy_recording(vec![raw.clone()], 50.0);
        let shift = 10usize; // 0.2 s at 50 Hz
        let shifted = toy_recording(vec![raw[shift..].to_vec()], 50.0);
        let a = epoch_extract(&rec, 1.0 + shift as f64 / 50.0, 3.0, 0.5).unwrap();
        let b = epoch_extract(&shifted, 1.0, 3.0, 0.5).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_permutation_commutes() {
        let c0: Vec<f64> = (0..600).map(|i| (i as f64 * 0.11).sin()).collect();
        let c1: Vec<f64> = (0..600).map(|i| (i as f64 * 0.07).cos()).collect();
        let fwd = bandpass(&[c0.clone(), c1.clone()], 200.0, 0.1, 40.0).unwrap();
        let rev = bandpass(&[c1, c0], 200.0, 0.1, 40.0).unwrap();
        assert_eq!(fwd[0], rev[1]);
        assert_eq!(fwd[1], rev[0]);
    }

    #[test]
    fn pipeline_output_clamped() {
        let mut ch: Vec<f64> = (0..4000)
            .map(|i| (std::f64::consts::TAU * 3.0 * i as f64 / 200.0).sin())
            .collect();
        ch[2000] = 1e6; // artifact spike
        let rec = toy_recording(vec![ch], 200.0);
        let (pre, _) = preprocess_recording(&rec, &[]).unwrap();
        assert_eq!(pre.fs, 50.0);
        assert!(pre
            .channels
            .iter()
            .flatten()
            .all(|&v| (-CLAMP..=CLAMP).contains(&v)));
    }
}
