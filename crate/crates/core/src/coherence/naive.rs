//! Direct, unoptimised reference for the coherence score: explicit DFT sums, explicit loops,
//! no shared code with the production path. Used to cross-check it.

use std::f64::consts::PI;

fn dft_bin(x: &[f64], k: usize) -> (f64, f64) {
    let n = x.len() as f64;
    let mut re = 0.0;
    let mut im = 0.0;
    for (t, &v) in x.iter().enumerate() {
        let ang = -2.0 * PI * (k as f64) * (t as f64) / n;
        re += v * ang.cos();
        im += v * ang.sin();
    }
    (re, im)
}

fn normalise(v: &[f64]) -> Vec<f64> {
    let mut mean = 0.0;
    for x in v {
        mean += x;
    }
    mean /= v.len() as f64;
    let mut var = 0.0;
    for x in v {
        var += (x - mean) * (x - mean);
    }
    let sd = (var / v.len() as f64).sqrt();
    v.iter().map(|x| (x - mean) / (sd + 1e-8)).collect()
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let (za, zb) = (normalise(a), normalise(b));
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..za.len() {
        ab += za[i] * zb[i];
        aa += za[i] * za[i];
        bb += zb[i] * zb[i];
    }
    ab / (aa.sqrt() * bb.sqrt() + 1e-8)
}

/// Amplitude and phase of bins `0..bins` for one channel.
pub fn amp_phase(x: &[f64], bins: usize) -> (Vec<f64>, Vec<f64>) {
    let mut amp = Vec::new();
    let mut ph = Vec::new();
    for k in 0..bins {
        let (re, im) = dft_bin(x, k);
        amp.push((re * re + im * im).sqrt());
        // rounding makes the DFT of exact zeros exact zeros, so the zero-phase rule carries over
        ph.push(if re == 0.0 && im == 0.0 { 0.0 } else if im.atan2(re) <= -PI { PI } else { im.atan2(re) });
    }
    (amp, ph)
}

/// Coherence of channel-major rows `eeg` against `imu` with bins `0..bins` and weights 0.7 / 0.3.
pub fn coherence(eeg: &[Vec<f64>], imu: &[Vec<f64>], bins: usize) -> f64 {
    let es: Vec<_> = eeg.iter().map(|r| amp_phase(r, bins)).collect();
    let is: Vec<_> = imu.iter().map(|r| amp_phase(r, bins)).collect();
    let mut total = 0.0;
    for e in &es {
        for i in &is {
            total += 0.7 * corr(&e.0, &i.0) + 0.3 * corr(&e.1, &i.1);
        }
    }
    total / (es.len() * is.len()) as f64
}
