//! Zero-phase IIR filtering with second-order sections.

use super::recording::Recording;
use super::PreprocessConfig;
use crate::error::{Error, Result};

/// Normalised biquad `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn check_edge(fc: f64, fs: f64) -> Result<()> {
        if !(fc > 0.0 && fc < fs / 2.0) {
            return Err(Error::Config(format!(
                "cut-off {fc} Hz must lie in (0, {}) for a {fs} Hz signal",
                fs / 2.0
            )));
        }
        Ok(())
    }

    /// Second-order Butterworth low-pass (bilinear transform with pre-warping).
    pub fn butter_lowpass(fc: f64, fs: f64) -> Result<Self> {
        Self::check_edge(fc, fs)?;
        let k = (std::f64::consts::PI * fc / fs).tan();
        let norm = 1.0 / (1.0 + std::f64::consts::SQRT_2 * k + k * k);
        let b0 = k * k * norm;
        Ok(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - std::f64::consts::SQRT_2 * k + k * k) * norm],
        })
    }

    /// Second-order Butterworth high-pass.
    pub fn butter_highpass(fc: f64, fs: f64) -> Result<Self> {
        Self::check_edge(fc, fs)?;
        let k = (std::f64::consts::PI * fc / fs).tan();
        let norm = 1.0 / (1.0 + std::f64::consts::SQRT_2 * k + k * k);
        Ok(Biquad {
            b: [norm, -2.0 * norm, norm],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - std::f64::consts::SQRT_2 * k + k * k) * norm],
        })
    }

    /// Second-order notch with quality factor `q` (bandwidth `f0 / q`).
    pub fn notch(f0: f64, q: f64, fs: f64) -> Result<Self> {
        Self::check_edge(f0, fs)?;
        if !(q > 0.0) {
            return Err(Error::Config(format!("notch quality factor must be positive, got {q}")));
        }
        let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        let c = -2.0 * w0.cos() / a0;
        Ok(Biquad {
            b: [1.0 / a0, c, 1.0 / a0],
            a: [c, (1.0 - alpha) / a0],
        })
    }

    /// Magnitude of the frequency response at `f` Hz for a single (one-directional) pass.
    pub fn gain(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let z1 = (w.cos(), -w.sin());
        let z2 = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (
            self.b[0] + self.b[1] * z1.0 + self.b[2] * z2.0,
            self.b[1] * z1.1 + self.b[2] * z2.1,
        );
        let den = (1.0 + self.a[0] * z1.0 + self.a[1] * z2.0, self.a[0] * z1.1 + self.a[1] * z2.1);
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }

    /// Transposed direct-form-II state that leaves a unit step at rest.
    fn steady_state(&self) -> [f64; 2] {
        let dc = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1]);
        let z2 = self.b[2] - self.a[1] * dc;
        let z1 = self.b[1] - self.a[0] * dc + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], init: f64) {
        let zi = self.steady_state();
        let (mut z1, mut z2) = (zi[0] * init, zi[1] * init);
        for v in x.iter_mut() {
            let xi = *v;
            let y = self.b[0] * xi + z1;
            z1 = self.b[1] * xi - self.a[0] * y + z2;
            z2 = self.b[2] * xi - self.a[1] * y;
            *v = y;
        }
    }

    /// Forward-backward application with mirror padding of `pad` samples per side (clamped to
    /// `len - 1`) and steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64], pad: usize) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let p = pad.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * p);
        ext.extend((1..=p).rev().map(|i| x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=p).map(|i| x[n - 1 - i]));
        let first = ext[0];
        self.run(&mut ext, first);
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, first);
        ext.reverse();
        ext[p..p + n].to_vec()
    }
}

/// Padding used by the preprocessing filters: ten seconds, long enough for the 0.1 Hz
/// high-pass transient to settle before the kept span.
fn pad_for(fs: f64) -> usize {
    (10.0 * fs).round().max(6.0) as usize
}

/// Zero-phase band-pass: Butterworth high-pass at `lo` cascaded with Butterworth low-pass at
/// `hi`, each second order and applied forward-backward.
pub fn bandpass(x: &[f64], lo: f64, hi: f64, fs: f64) -> Result<Vec<f64>> {
    if !(lo < hi) {
        return Err(Error::Config(format!("band-pass edges must satisfy lo < hi, got {lo} and {hi}")));
    }
    let hp = Biquad::butter_highpass(lo, fs)?;
    let lp = Biquad::butter_lowpass(hi, fs)?;
    let pad = pad_for(fs);
    Ok(lp.filtfilt(&hp.filtfilt(x, pad), pad))
}

pub fn notch(x: &[f64], f0: f64, q: f64, fs: f64) -> Result<Vec<f64>> {
    Ok(Biquad::notch(f0, q, fs)?.filtfilt(x, pad_for(fs)))
}

pub fn bandpass_filter(rec: &Recording, cfg: &PreprocessConfig) -> Result<Recording> {
    let fs = rec.sample_rate_hz();
    let hp = Biquad::butter_highpass(cfg.bandpass_lo_hz, fs)?;
    let lp = Biquad::butter_lowpass(cfg.bandpass_hi_hz, fs)?;
    if cfg.bandpass_lo_hz >= cfg.bandpass_hi_hz {
        return Err(Error::Config("band-pass low edge must be below the high edge".into()));
    }
    let pad = pad_for(fs);
    rec.map_rows(fs, |r| lp.filtfilt(&hp.filtfilt(r, pad), pad))
}

pub fn notch_filter(rec: &Recording, notch_hz: f64, q: f64) -> Result<Recording> {
    let fs = rec.sample_rate_hz();
    let bq = Biquad::notch(notch_hz, q, fs)?;
    let pad = pad_for(fs);
    rec.map_rows(fs, |r| bq.filtfilt(r, pad))
}
