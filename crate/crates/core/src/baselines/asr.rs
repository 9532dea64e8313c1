use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{check_rank, from_matrix, sorted_eigen, to_matrix};
use crate::error::{Error, Result};
use crate::signal::Recording;

pub const ASR_DEFAULT_CUTOFF: f64 = 20.0;
pub const ASR_WINDOW_S: f64 = 0.5;
const MIN_CALIBRATION_S: f64 = 30.0;

/// Principal directions and per-component RMS cutoffs learned from clean data.
#[derive(Debug, Clone, PartialEq)]
pub struct AsrState {
    /// Orthonormal principal directions as columns, by descending variance.
    pub mixing: DMatrix<f64>,
    pub component_thresholds: Vec<f64>,
    pub cutoff_k: f64,
    pub window_s: f64,
    pub sample_rate_hz: f64,
}

impl AsrState {
    /// Window length in samples (even, so the half-overlapped Hann windows sum to one).
    pub fn window_len(&self) -> usize {
        window_len(self.window_s, self.sample_rate_hz)
    }
}

fn window_len(window_s: f64, rate: f64) -> usize {
    let l = (window_s * rate).round() as usize;
    (l + l % 2).max(2)
}

/// Root-mean-square of each row of `y` over `[start, end)`.
fn row_rms(y: &DMatrix<f64>, start: usize, end: usize) -> Vec<f64> {
    (0..y.nrows())
        .map(|c| {
            let ss: f64 = (start..end).map(|t| y[(c, t)] * y[(c, t)]).sum();
            (ss / (end - start) as f64).sqrt()
        })
        .collect()
}

/// Learns principal directions from the channel covariance of `clean` and sets each component's
/// cutoff to `mean + cutoff_k · std` of its RMS over half-overlapping 0.5-s windows.
pub fn asr_calibrate(clean: &Recording, cutoff_k: f64) -> Result<AsrState> {
    if !(cutoff_k.is_finite() && cutoff_k > 0.0) {
        return Err(Error::Config(format!("ASR cutoff must be positive, got {cutoff_k}")));
    }
    if clean.duration_s() < MIN_CALIBRATION_S {
        return Err(Error::Validation(format!(
            "ASR calibration needs at least {MIN_CALIBRATION_S} s of clean data, got {:.1} s",
            clean.duration_s()
        )));
    }
    let x = to_matrix(clean);
    let n = x.ncols();
    // uncentred second moment: filtered EEG is zero-mean, and the RMS statistics below are too
    let cov = &x * x.transpose() / n as f64;
    let (values, mixing) = sorted_eigen(cov);
    check_rank(&values, &mixing)?;

    let y = mixing.transpose() * &x;
    let len = window_len(ASR_WINDOW_S, clean.sample_rate_hz());
    let hop = len / 2;
    let starts: Vec<usize> = (0..).map(|k| k * hop).take_while(|s| s + len <= n).collect();
    let per_window: Vec<Vec<f64>> = starts.iter().map(|&s| row_rms(&y, s, s + len)).collect();
    let w = per_window.len() as f64;
    let component_thresholds = (0..y.nrows())
        .map(|c| {
            let mean = per_window.iter().map(|r| r[c]).sum::<f64>() / w;
            let var = per_window.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / w;
            mean + cutoff_k * var.sqrt()
        })
        .collect();
    Ok(AsrState {
        mixing,
        component_thresholds,
        cutoff_k,
        window_s: ASR_WINDOW_S,
        sample_rate_hz: clean.sample_rate_hz(),
    })
}

/// Periodic Hann window; shifted copies half a window apart sum to exactly one.
fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect()
}

/// Removes components whose windowed RMS exceeds the calibrated cutoff.
///
/// Windows overlap by half and are cross-faded with a Hann taper. The first window starts half
/// a window before the signal, so every sample is covered by exactly two windows whose weights
/// sum to one; a window with no flagged component contributes its input unchanged.
pub fn asr_clean(rec: &Recording, state: &AsrState) -> Result<Recording> {
    let c = state.mixing.nrows();
    if rec.channels() != c {
        return Err(Error::Shape(format!(
            "ASR calibrated on {c} channels, recording has {}",
            rec.channels()
        )));
    }
    if rec.sample_rate_hz() != state.sample_rate_hz {
        return Err(Error::Alignment(format!(
            "ASR calibrated at {} Hz, recording is at {} Hz",
            state.sample_rate_hz,
            rec.sample_rate_hz()
        )));
    }
    let x = to_matrix(rec);
    let n = x.ncols();
    let len = state.window_len();
    let hop = len / 2;
    let taper = hann(len);
    let y = state.mixing.transpose() * &x;

    // (window start, correction in channel space) for windows that flag anything
    let corrections: Vec<(isize, DMatrix<f64>)> = (0..)
        .map(|k| k as isize * hop as isize - hop as isize)
        .take_while(|&s| s < n as isize)
        .collect::<Vec<_>>()
        .into_par_iter()
        .filter_map(|s| {
            let (lo, hi) = (s.max(0) as usize, ((s + len as isize) as usize).min(n));
            let rms = row_rms(&y, lo, hi);
            let flagged: Vec<usize> = (0..c).filter(|&k| rms[k] > state.component_thresholds[k]).collect();
            if flagged.is_empty() {
                return None;
            }
            let mut corr = DMatrix::zeros(c, hi - lo);
            for &k in &flagged {
                let dir = state.mixing.column(k);
                for t in lo..hi {
                    let wy = taper[(t as isize - s) as usize] * y[(k, t)];
                    for ch in 0..c {
                        corr[(ch, t - lo)] += dir[ch] * wy;
                    }
                }
            }
            Some((s, corr))
        })
        .collect();

    let mut out = x;
    for (s, corr) in &corrections {
        let lo = (*s).max(0) as usize;
        for j in 0..corr.ncols() {
            for ch in 0..c {
                out[(ch, lo + j)] -= corr[(ch, j)];
            }
        }
    }
    from_matrix(rec, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Modality;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const RATE: f64 = 100.0;

    fn noise(channels: usize, seconds: f64, seed: u64) -> Recording {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (seconds * RATE) as usize;
        let rows = (0..channels)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Recording::new(Modality::Eeg, RATE, rows).unwrap()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn thresholds_match_brute_force_loop() {
        let rec = noise(4, 30.0, 1);
        let st = asr_calibrate(&rec, 20.0).unwrap();
        let (len, n) = (50, rec.samples());
        for k in 0..4 {
            let mut vals = Vec::new();
            let mut s = 0;
            while s + len <= n {
                let mut ss = 0.0;
                for t in s..s + len {
                    let mut p = 0.0;
                    for ch in 0..4 {
                        p += st.mixing[(ch, k)] * rec.channel(ch)[t];
                    }
                    ss += p * p;
                }
                vals.push((ss / len as f64).sqrt());
                s += len / 2;
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!((st.component_thresholds[k] - (m + 20.0 * sd)).abs() < 1e-9);
        }
    }

    #[test]
    fn mixing_is_orthonormal_and_thresholds_positive() {
        let st = asr_calibrate(&noise(6, 31.0, 2), 20.0).unwrap();
        let gram = st.mixing.transpose() * &st.mixing;
        assert!((gram - DMatrix::identity(6, 6)).abs().max() < 1e-6);
        assert!(st.component_thresholds.iter().all(|&t| t > 0.0));
    }

    #[test]
    fn duplicate_channels_are_rank_deficient() {
        let rec = noise(3, 30.0, 3);
        let mut rows = rec.rows().to_vec();
        rows.push(rows[1].clone());
        let dup = Recording::new(Modality::Eeg, RATE, rows).unwrap();
        match asr_calibrate(&dup, 20.0) {
            Err(Error::RankDeficient { channels }) => assert_eq!(channels, vec![1, 3]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn short_calibration_rejected() {
        assert!(matches!(asr_calibrate(&noise(3, 29.0, 4), 20.0), Err(Error::Validation(_))));
    }

    #[test]
    fn scaling_data_scales_thresholds() {
        let rec = noise(4, 30.0, 5);
        let big = rec.map_rows(RATE, |r| r.iter().map(|v| v * 10.0).collect()).unwrap();
        let (a, b) = (asr_calibrate(&rec, 20.0).unwrap(), asr_calibrate(&big, 20.0).unwrap());
        for (x, y) in a.component_thresholds.iter().zip(&b.component_thresholds) {
            assert!((y / x - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn burst_is_suppressed_and_clean_data_kept() {
        let calib = noise(8, 30.0, 6);
        let st = asr_calibrate(&calib, 20.0).unwrap();
        let test = noise(8, 10.0, 7);
        let mut rows = test.rows().to_vec();
        let burst = 400..500;
        for t in burst.clone() {
            rows[2][t] *= 100.0;
        }
        let dirty = Recording::new(Modality::Eeg, RATE, rows).unwrap();
        let out = asr_clean(&dirty, &st).unwrap();
        let var_in = rms(&dirty.channel(2)[burst.clone()]).powi(2);
        let var_out = rms(&out.channel(2)[burst]).powi(2);
        assert!(var_out <= 0.1 * var_in, "{var_out} vs {var_in}");
        // far from the burst the data pass through
        let before = &out.channel(2)[..300];
        assert_eq!(before, &dirty.channel(2)[..300]);
    }

    #[test]
    fn statistically_identical_input_barely_changes() {
        let st = asr_calibrate(&noise(8, 30.0, 8), 20.0).unwrap();
        let fresh = noise(8, 30.0, 9);
        let out = asr_clean(&fresh, &st).unwrap();
        for ch in 0..8 {
            let diff: Vec<f64> = out.channel(ch).iter().zip(fresh.channel(ch)).map(|(a, b)| a - b).collect();
            assert!(rms(&diff) < 0.01 * rms(fresh.channel(ch)));
        }
    }

    #[test]
    fn zero_signal_stays_zero() {
        let st = asr_calibrate(&noise(4, 30.0, 10), 20.0).unwrap();
        let zero = Recording::new(Modality::Eeg, RATE, vec![vec![0.0; 777]; 4]).unwrap();
        let out = asr_clean(&zero, &st).unwrap();
        assert!(out.rows().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let st = asr_calibrate(&noise(4, 30.0, 11), 20.0).unwrap();
        assert!(matches!(asr_clean(&noise(3, 2.0, 12), &st), Err(Error::Shape(_))));
    }

    #[test]
    fn hann_halves_sum_to_one() {
        let w = hann(50);
        for i in 0..25 {
            assert!((w[i] + w[i + 25] - 1.0).abs() < 1e-15);
        }
    }
}
