//! Weighted frequency correlation between EEG and IMU frames.
//!
//! Each channel's frame is transformed with an FFT, the first `band_bins` bins of amplitude and
//! phase are standardised across bins, and every EEG/IMU channel pair is scored with
//! `w_amp · ρ(amp) + w_phase · ρ(phase)`. A frame's coherence is the mean over all pairs.

pub mod naive;
mod report;

pub use report::{
    report_from_scores, rows_from_csv, rows_to_csv, windowed_report, CoherenceReport, ReportRow, WindowStat, REPORT_SCHEMA,
    WINDOWS_S,
};
pub(crate) use report::mean_std;

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceConfig {
    pub band_bins: usize,
    pub weight_amp: f64,
    pub weight_phase: f64,
    pub epsilon: f64,
    pub c_eeg: usize,
    pub c_imu: usize,
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        CoherenceConfig {
            band_bins: 40,
            weight_amp: 0.7,
            weight_phase: 0.3,
            epsilon: 1e-8,
            c_eeg: 32,
            c_imu: 9,
        }
    }
}

impl CoherenceConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.weight_amp + self.weight_phase - 1.0).abs() > 1e-12 || self.weight_amp < 0.0 || self.weight_phase < 0.0 {
            return Err(Error::Config(format!(
                "coherence weights must be non-negative and sum to 1, got {} + {}",
                self.weight_amp, self.weight_phase
            )));
        }
        if self.band_bins < 2 {
            return Err(Error::Config("band_bins must be at least 2".into()));
        }
        if !(self.epsilon > 0.0) || self.c_eeg == 0 || self.c_imu == 0 {
            return Err(Error::Config("epsilon and channel counts must be positive".into()));
        }
        Ok(())
    }
}

/// `(x − mean) / (std + 1e-8)` with the population standard deviation.
pub fn std_norm(x: &[f64]) -> Vec<f64> {
    std_norm_eps(x, 1e-8)
}

pub(crate) fn std_norm_eps(x: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    x.iter().map(|v| (v - mean) / (sd + eps)).collect()
}

/// Pearson correlation of standardised vectors: `⟨za, zb⟩ / (‖za‖‖zb‖ + eps)`. Zero-variance
/// input yields 0.
pub fn pearson(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let za = std_norm_eps(a, eps);
    let zb = std_norm_eps(b, eps);
    cosine(&za, &zb, eps)
}

fn cosine(za: &[f64], zb: &[f64], eps: f64) -> f64 {
    let na = dot(za, za).sqrt();
    let nb = dot(zb, zb).sqrt();
    dot(za, zb) / (na * nb + eps)
}

/// One-sided amplitude and phase spectra, one row per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    pub amplitude: Vec<Vec<f64>>,
    pub phase: Vec<Vec<f64>>,
}

impl SpectralFrame {
    pub fn channels(&self) -> usize {
        self.amplitude.len()
    }

    pub fn bins(&self) -> usize {
        self.amplitude.first().map_or(0, Vec::len)
    }
}

/// Cached FFT plan for a fixed frame length.
pub struct SpectrumPlan {
    fft: Arc<dyn Fft<f64>>,
    len: usize,
}

impl SpectrumPlan {
    pub fn new(len: usize) -> Self {
        SpectrumPlan {
            fft: FftPlanner::new().plan_fft_forward(len),
            len,
        }
    }

    /// Amplitude and phase of bins `0..=len/2` for each row of a `[C × len]` frame. The phase
    /// lies in `(−π, π]` and is 0 for bins with zero amplitude.
    pub fn amp_phase(&self, frame: &Tensor) -> Result<SpectralFrame> {
        if frame.ndim() != 2 || frame.shape()[1] != self.len {
            return Err(Error::Shape(format!(
                "expected [C × {}] frame, got {:?}",
                self.len,
                frame.shape()
            )));
        }
        if !frame.is_finite() {
            return Err(Error::Validation("frame contains non-finite samples".into()));
        }
        let bins = self.len / 2 + 1;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        let mut amplitude = Vec::with_capacity(frame.shape()[0]);
        let mut phase = Vec::with_capacity(frame.shape()[0]);
        for c in 0..frame.shape()[0] {
            for (b, &x) in buf.iter_mut().zip(frame.row(c)) {
                *b = Complex64::new(x, 0.0);
            }
            self.fft.process(&mut buf);
            amplitude.push(buf[..bins].iter().map(|z| z.norm()).collect());
            phase.push(buf[..bins].iter().map(|z| phase_of(z.re, z.im)).collect());
        }
        Ok(SpectralFrame { amplitude, phase })
    }
}

pub(crate) fn phase_of(re: f64, im: f64) -> f64 {
    if re == 0.0 && im == 0.0 {
        return 0.0;
    }
    let p = im.atan2(re);
    if p <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        p
    }
}

pub fn fft_amp_phase(frame: &Tensor) -> Result<SpectralFrame> {
    if frame.ndim() != 2 {
        return Err(Error::Shape(format!("expected a [C × T] frame, got {:?}", frame.shape())));
    }
    SpectrumPlan::new(frame.shape()[1]).amp_phase(frame)
}

/// Keeps the first `f` bins.
pub fn band_select(spec: &SpectralFrame, f: usize) -> Result<SpectralFrame> {
    if f > spec.bins() {
        return Err(Error::Config(format!(
            "band of {f} bins requested from a {}-bin spectrum",
            spec.bins()
        )));
    }
    let cut = |rows: &[Vec<f64>]| rows.iter().map(|r| r[..f].to_vec()).collect();
    Ok(SpectralFrame {
        amplitude: cut(&spec.amplitude),
        phase: cut(&spec.phase),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumPart {
    Amplitude,
    Phase,
}

/// A channel whose band-limited spectrum had zero variance; its correlations were set to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Degenerate {
    pub eeg: bool,
    pub channel: usize,
    pub part: SpectrumPart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    /// `[eeg channels × imu channels]`.
    pub values: Tensor,
    pub frame_index: usize,
    pub degenerate: Vec<Degenerate>,
}

fn standardise(rows: &[Vec<f64>], eps: f64, eeg: bool, part: SpectrumPart, flags: &mut Vec<Degenerate>) -> Vec<Vec<f64>> {
    rows.iter()
        .enumerate()
        .map(|(c, r)| {
            let z = std_norm_eps(r, eps);
            if z.iter().all(|v| *v == 0.0) {
                flags.push(Degenerate { eeg, channel: c, part });
            }
            z
        })
        .collect()
}

pub fn weighted_channel_correlation(
    eeg: &SpectralFrame,
    imu: &SpectralFrame,
    cfg: &CoherenceConfig,
) -> Result<CorrelationMatrix> {
    if eeg.bins() != imu.bins() {
        return Err(Error::Shape(format!(
            "EEG spectrum has {} bins, IMU spectrum {}",
            eeg.bins(),
            imu.bins()
        )));
    }
    let eps = cfg.epsilon;
    let mut degenerate = Vec::new();
    let ea = standardise(&eeg.amplitude, eps, true, SpectrumPart::Amplitude, &mut degenerate);
    let ep = standardise(&eeg.phase, eps, true, SpectrumPart::Phase, &mut degenerate);
    let ia = standardise(&imu.amplitude, eps, false, SpectrumPart::Amplitude, &mut degenerate);
    let ip = standardise(&imu.phase, eps, false, SpectrumPart::Phase, &mut degenerate);
    let (ce, ci) = (ea.len(), ia.len());
    let mut values = Vec::with_capacity(ce * ci);
    for i in 0..ce {
        for j in 0..ci {
            values.push(cfg.weight_amp * cosine(&ea[i], &ia[j], eps) + cfg.weight_phase * cosine(&ep[i], &ip[j], eps));
        }
    }
    Ok(CorrelationMatrix {
        values: Tensor::new(&[ce, ci], values)?,
        frame_index: 0,
        degenerate,
    })
}

/// Mean over all channel pairs.
pub fn coherence_score(corr: &CorrelationMatrix) -> f64 {
    corr.values.sum() / corr.values.len() as f64
}

/// Attention supervision target `(ρ − 0.5) × 20`.
pub fn attention_target(corr: &CorrelationMatrix) -> Tensor {
    corr.values.map(|r| (r - 0.5) * 20.0)
}

/// Reusable evaluator for frames of one length.
pub struct CoherenceEngine {
    pub cfg: CoherenceConfig,
    plan: SpectrumPlan,
}

impl CoherenceEngine {
    pub fn new(cfg: CoherenceConfig, frame_len: usize) -> Result<Self> {
        cfg.validate()?;
        if cfg.band_bins > frame_len / 2 + 1 {
            return Err(Error::Config(format!(
                "band_bins {} exceeds the {} bins of a {frame_len}-sample frame",
                cfg.band_bins,
                frame_len / 2 + 1
            )));
        }
        Ok(CoherenceEngine {
            cfg,
            plan: SpectrumPlan::new(frame_len),
        })
    }

    pub fn correlation(&self, eeg: &Tensor, imu: &Tensor) -> Result<CorrelationMatrix> {
        let es = band_select(&self.plan.amp_phase(eeg)?, self.cfg.band_bins)?;
        let is = band_select(&self.plan.amp_phase(imu)?, self.cfg.band_bins)?;
        weighted_channel_correlation(&es, &is, &self.cfg)
    }

    pub fn score(&self, eeg: &Tensor, imu: &Tensor) -> Result<f64> {
        Ok(coherence_score(&self.correlation(eeg, imu)?))
    }
}

/// Coherence of one EEG/IMU frame pair with default settings.
pub fn frame_coherence(eeg: &Tensor, imu: &Tensor, cfg: &CoherenceConfig) -> Result<f64> {
    if eeg.ndim() != 2 {
        return Err(Error::Shape(format!("expected a [C × T] frame, got {:?}", eeg.shape())));
    }
    CoherenceEngine::new(cfg.clone(), eeg.shape()[1])?.score(eeg, imu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(f: f64, phase: f64) -> Vec<f64> {
        (0..200).map(|i| (2.0 * PI * f * i as f64 / 200.0 + phase).cos()).collect()
    }

    #[test]
    fn std_norm_cases() {
        assert_eq!(std_norm(&[5.0; 4]), vec![0.0; 4]);
        let z = std_norm(&[0.0, 2.0]);
        assert!((z[0] + 1.0).abs() < 1e-7 && (z[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn cosine_peak_and_sine_phase() {
        let frame = Tensor::new(&[2, 200], [tone(5.0, 0.0), tone(5.0, -PI / 2.0)].concat()).unwrap();
        let s = fft_amp_phase(&frame).unwrap();
        assert_eq!(s.bins(), 101);
        let peak = s.amplitude[0][5];
        assert!((peak - 100.0).abs() < 1e-9);
        for (k, a) in s.amplitude[0].iter().enumerate() {
            if k != 5 {
                assert!(*a < 1e-9 * peak);
            }
        }
        assert!((s.amplitude[1][5] - peak).abs() < 1e-9);
        assert!(((s.phase[0][5] - s.phase[1][5]) - PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_frame_has_zero_phase() {
        let s = fft_amp_phase(&Tensor::zeros(&[1, 200])).unwrap();
        assert!(s.amplitude[0].iter().all(|a| *a == 0.0));
        assert!(s.phase[0].iter().all(|p| *p == 0.0));
    }

    #[test]
    fn band_select_bounds() {
        let s = fft_amp_phase(&Tensor::zeros(&[1, 200])).unwrap();
        assert_eq!(band_select(&s, 40).unwrap().bins(), 40);
        assert_eq!(band_select(&s, 101).unwrap(), s);
        assert!(matches!(band_select(&s, 102), Err(Error::Config(_))));
    }

    #[test]
    fn anti_correlated_phase_gives_point_four() {
        let amp = vec![(0..40).map(|k| (k as f64 * 0.3).sin() + 2.0).collect::<Vec<_>>()];
        let ph: Vec<f64> = (0..40).map(|k| (k as f64 * 0.7).cos()).collect();
        let eeg = SpectralFrame { amplitude: amp.clone(), phase: vec![ph.clone()] };
        let imu = SpectralFrame { amplitude: amp, phase: vec![ph.iter().map(|p| -p).collect()] };
        let m = weighted_channel_correlation(&eeg, &imu, &CoherenceConfig::default()).unwrap();
        assert!((m.values.item() - 0.4).abs() < 1e-9);
    }

    #[test]
    fn constant_spectrum_is_flagged() {
        let eeg = SpectralFrame { amplitude: vec![vec![1.0; 8]], phase: vec![vec![0.0; 8]] };
        let imu = SpectralFrame {
            amplitude: vec![(0..8).map(f64::from).collect()],
            phase: vec![(0..8).map(|k| (k as f64).sin()).collect()],
        };
        let m = weighted_channel_correlation(&eeg, &imu, &CoherenceConfig::default()).unwrap();
        assert_eq!(m.values.item(), 0.0);
        assert_eq!(m.degenerate.len(), 2);
    }

    #[test]
    fn attention_target_range() {
        let m = CorrelationMatrix {
            values: Tensor::new(&[1, 3], vec![0.5, 1.0, 0.0]).unwrap(),
            frame_index: 0,
            degenerate: vec![],
        };
        assert_eq!(attention_target(&m).data(), &[0.0, 10.0, -10.0]);
        assert!((coherence_score(&m) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn config_checks() {
        let mut cfg = CoherenceConfig::default();
        cfg.weight_amp = 0.8;
        assert!(cfg.validate().is_err());
        let cfg = CoherenceConfig { band_bins: 102, ..Default::default() };
        assert!(CoherenceEngine::new(cfg, 200).is_err());
    }
}
