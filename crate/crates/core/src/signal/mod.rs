//! Recording I/O, preprocessing and framing of synchronised EEG/IMU streams.

pub mod filter;
pub mod io;
mod recording;
pub mod resample;

pub use filter::{bandpass_filter, notch_filter, Biquad};
pub use io::{load_recording, save_recording, FileFormat};
pub use recording::{Modality, Recording, EEG_LABELS, IMU_LABELS};
pub use resample::resample;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub bandpass_lo_hz: f64,
    pub bandpass_hi_hz: f64,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub target_rate_hz: f64,
    /// EEG channels kept (in this order) when the recording carries labels.
    pub eeg_whitelist: Vec<String>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            bandpass_lo_hz: 0.1,
            bandpass_hi_hz: 75.0,
            notch_hz: 60.0,
            notch_q: 30.0,
            target_rate_hz: 200.0,
            eeg_whitelist: EEG_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let nyq = self.target_rate_hz / 2.0;
        if !(0.0 < self.bandpass_lo_hz && self.bandpass_lo_hz < self.bandpass_hi_hz && self.bandpass_hi_hz < nyq) {
            return Err(Error::Config(format!(
                "need 0 < bandpass_lo_hz < bandpass_hi_hz < {nyq}, got {} and {}",
                self.bandpass_lo_hz, self.bandpass_hi_hz
            )));
        }
        if !(self.notch_hz > 0.0 && self.notch_hz < nyq && self.notch_q > 0.0) {
            return Err(Error::Config(format!(
                "notch at {} Hz (q {}) is invalid for {} Hz output",
                self.notch_hz, self.notch_q, self.target_rate_hz
            )));
        }
        Ok(())
    }
}

/// EEG: convert to µV, apply the channel whitelist, band-pass, notch, resample.
pub fn preprocess_eeg(rec: &Recording, cfg: &PreprocessConfig) -> Result<Recording> {
    cfg.validate()?;
    if rec.modality() != Modality::Eeg {
        return Err(Error::Validation("preprocess_eeg needs an EEG recording".into()));
    }
    let mut r = rec.to_microvolts()?;
    let whitelist: Vec<&str> = cfg.eeg_whitelist.iter().map(String::as_str).collect();
    if r.labels().len() != whitelist.len() || r.labels().iter().zip(&whitelist).any(|(a, b)| a != b) {
        r = r.select_channels(&whitelist)?;
    }
    let r = bandpass_filter(&r, cfg)?;
    let r = notch_filter(&r, cfg.notch_hz, cfg.notch_q)?;
    resample(&r, cfg.target_rate_hz)
}

/// IMU: resample first (a 128 Hz stream cannot carry a 75 Hz band edge), then band-pass.
pub fn preprocess_imu(rec: &Recording, cfg: &PreprocessConfig) -> Result<Recording> {
    cfg.validate()?;
    if rec.modality() != Modality::Imu {
        return Err(Error::Validation("preprocess_imu needs an IMU recording".into()));
    }
    let r = resample(rec, cfg.target_rate_hz)?;
    bandpass_filter(&r, cfg)
}

/// One aligned second of EEG and IMU.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    /// `[eeg channels × samples]`, µV.
    pub eeg: Tensor,
    /// `[imu channels × samples]`.
    pub imu: Tensor,
    pub index: usize,
    pub t0_s: f64,
}

fn frame_of(rec: &Recording, start: usize, len: usize) -> Tensor {
    let mut data = Vec::with_capacity(rec.channels() * len);
    for row in rec.rows() {
        data.extend_from_slice(&row[start..start + len]);
    }
    Tensor::new(&[rec.channels(), len], data).expect("frame size")
}

/// Non-overlapping 1-s frames over the common span; the trailing partial second is dropped.
pub fn frame_pairs(eeg: &Recording, imu: &Recording) -> Result<Vec<FramePair>> {
    if eeg.sample_rate_hz() != imu.sample_rate_hz() {
        return Err(Error::Alignment(format!(
            "EEG at {} Hz and IMU at {} Hz; resample both to a common rate first",
            eeg.sample_rate_hz(),
            imu.sample_rate_hz()
        )));
    }
    let rate = eeg.sample_rate_hz();
    if rate.fract() != 0.0 {
        return Err(Error::Alignment(format!("1-s frames need an integer sample rate, got {rate}")));
    }
    let len = rate as usize;
    let common = eeg.samples().min(imu.samples());
    let n = common / len;
    if n == 0 {
        return Err(Error::Empty(format!(
            "common span of {common} samples is shorter than one {len}-sample frame"
        )));
    }
    Ok((0..n)
        .map(|k| FramePair {
            eeg: frame_of(eeg, k * len, len),
            imu: frame_of(imu, k * len, len),
            index: k,
            t0_s: k as f64,
        })
        .collect())
}

/// Concatenates frames (in order) back into per-channel rows.
pub fn concat_frames<'a>(frames: impl IntoIterator<Item = &'a Tensor>) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for f in frames {
        let (c, t) = (f.shape()[0], f.shape()[1]);
        if rows.is_empty() {
            rows = vec![Vec::new(); c];
        }
        for (ch, row) in rows.iter_mut().enumerate() {
            row.extend_from_slice(&f.data()[ch * t..(ch + 1) * t]);
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(modality: Modality, ch: usize, n: usize, rate: f64) -> Recording {
        let rows = (0..ch).map(|c| (0..n).map(|i| (i * 7 + c) as f64).collect()).collect();
        Recording::new(modality, rate, rows).unwrap()
    }

    #[test]
    fn framing_drops_partial_second() {
        let eeg = ramp(Modality::Eeg, 32, 13100, 200.0);
        let imu = ramp(Modality::Imu, 9, 13100, 200.0);
        let frames = frame_pairs(&eeg, &imu).unwrap();
        assert_eq!(frames.len(), 65);
        assert_eq!(frames[64].t0_s, 64.0);
        let rows = concat_frames(frames.iter().map(|f| &f.eeg));
        for (c, row) in rows.iter().enumerate() {
            assert_eq!(&row[..], &eeg.channel(c)[..13000]);
        }
    }

    #[test]
    fn framing_errors() {
        let eeg = ramp(Modality::Eeg, 2, 400, 200.0);
        let imu = ramp(Modality::Imu, 2, 256, 128.0);
        assert!(matches!(frame_pairs(&eeg, &imu), Err(Error::Alignment(_))));
        let short = ramp(Modality::Imu, 2, 150, 200.0);
        assert!(matches!(frame_pairs(&eeg, &short), Err(Error::Empty(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = PreprocessConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.bandpass_hi_hz = 120.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn full_pipelines_produce_200hz() {
        let eeg = Recording::with_meta(
            Modality::Eeg,
            500.0,
            "mV",
            EEG_LABELS.iter().map(|s| s.to_string()).collect(),
            (0..32).map(|c| (0..2500).map(|i| ((i + c) as f64 * 0.01).sin() * 1e-2).collect()).collect(),
        )
        .unwrap();
        let out = preprocess_eeg(&eeg, &PreprocessConfig::default()).unwrap();
        assert_eq!((out.channels(), out.samples(), out.sample_rate_hz()), (32, 1000, 200.0));
        let imu = ramp(Modality::Imu, 9, 1280, 128.0);
        let out = preprocess_imu(&imu, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.samples(), 2000);
    }
}
