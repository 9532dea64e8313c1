//! Band-limited resampling through the DFT.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::recording::Recording;
use crate::error::{Error, Result};

/// Resamples one periodic-extended signal from `n` to `m` samples by truncating or
/// zero-padding its spectrum. The Nyquist bin is split or folded so real input stays real.
pub fn resample_signal(x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 || m == 0 {
        return vec![0.0; m];
    }
    if n == m {
        return x.to_vec();
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut spec: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut spec);

    let k = n.min(m);
    let nyq = k / 2 + 1;
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    out[..nyq].copy_from_slice(&spec[..nyq]);
    let neg = k - nyq;
    for i in 1..=neg {
        out[m - i] = spec[n - i];
    }
    if k % 2 == 0 {
        let h = k / 2;
        if m < n {
            // fold the discarded negative Nyquist partner back in
            out[h] += spec[n - h];
        } else {
            out[h] *= 0.5;
            out[m - h] = out[h];
        }
    }
    planner.plan_fft_inverse(m).process(&mut out);
    let scale = 1.0 / n as f64;
    out.iter().map(|c| c.re * scale).collect()
}

/// Output length `round(samples × target / rate)`.
pub fn resampled_len(samples: usize, rate: f64, target: f64) -> usize {
    (samples as f64 * target / rate).round() as usize
}

pub fn resample(rec: &Recording, target_hz: f64) -> Result<Recording> {
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(Error::Config(format!("target rate must be positive, got {target_hz}")));
    }
    let m = resampled_len(rec.samples(), rec.sample_rate_hz(), target_hz);
    if m == 0 {
        return Err(Error::Empty("resampled recording would have no samples".into()));
    }
    rec.map_rows(target_hz, |r| resample_signal(r, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Modality;

    #[test]
    fn imu_128_to_200() {
        let rows: Vec<Vec<f64>> = (0..9)
            .map(|_| (0..1280).map(|i| (2.0 * std::f64::consts::PI * 5.0 * i as f64 / 128.0).sin()).collect())
            .collect();
        let rec = Recording::new(Modality::Imu, 128.0, rows).unwrap();
        let out = resample(&rec, 200.0).unwrap();
        assert_eq!(out.samples(), 2000);
        assert_eq!(out.sample_rate_hz(), 200.0);
        // analytic 5 Hz sine at the new rate
        for (i, v) in out.channel(0).iter().enumerate() {
            let want = (2.0 * std::f64::consts::PI * 5.0 * i as f64 / 200.0).sin();
            assert!((v - want).abs() < 1e-9);
        }
    }

    #[test]
    fn same_rate_is_identity() {
        let x: Vec<f64> = (0..333).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let rec = Recording::new(Modality::Eeg, 200.0, vec![x.clone()]).unwrap();
        let out = resample(&rec, 200.0).unwrap();
        assert_eq!(out.channel(0), &x[..]);
    }

    #[test]
    fn downsampling_keeps_low_tones() {
        let x: Vec<f64> = (0..1000).map(|i| (2.0 * std::f64::consts::PI * 10.0 * i as f64 / 500.0).cos()).collect();
        let y = resample_signal(&x, 400);
        for (i, v) in y.iter().enumerate() {
            let want = (2.0 * std::f64::consts::PI * 10.0 * i as f64 / 200.0).cos();
            assert!((v - want).abs() < 1e-9);
        }
    }
}
