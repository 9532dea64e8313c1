//! Synthetic EEG + IMU recordings with exact ground truth.
//!
//! Clean EEG is 1/f noise with 10 Hz alpha bursts. Head motion is modelled analytically: a
//! gait-locked harmonic series per IMU axis plus a narrow-band sway resonance whose centre
//! differs between axes. Because motion is a closed-form function of time it is sampled
//! directly at the EEG rate (for the artifact) and at the IMU rate (for the sensor stream),
//! so no resampling error enters the ground truth. Each EEG channel receives
//! `Σ_j coupling[i][j] · motion_j`, scaled per channel to the requested artifact-to-neural
//! power ratio.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::signal::{
    frame_pairs, preprocess_eeg, preprocess_imu, save_recording, FileFormat, FramePair, Modality, PreprocessConfig,
    Recording, EEG_LABELS, IMU_LABELS,
};
use crate::tensor::Tensor;

pub const EEG_RATE_HZ: f64 = 200.0;
pub const IMU_RATE_HZ: f64 = 128.0;
const DEFAULT_COUPLING_SEED: u64 = 7;
const SWAY_TONES: usize = 10;
const COUPLING_SCHEMA: &str = "# cohwash-coupling v1";

/// Named gait conditions: slow walk, fast walk, slight run.
pub const PRESETS: [(&str, f64); 3] = [("ses-03", 1.4), ("ses-04", 1.9), ("ses-05", 2.5)];

pub fn preset_gait_hz(name: &str) -> Option<f64> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|p| p.1)
}

/// `[32 × 9]` artifact gains; row `i` says how strongly each IMU axis leaks into EEG channel `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling(pub Tensor);

impl Coupling {
    pub fn zeros() -> Self {
        Coupling(Tensor::zeros(&[32, 9]))
    }

    /// Dense random gains: every entry is non-zero, and each EEG channel has one dominant axis
    /// (gain 1) over a floor drawn from `[0.05, 0.2]`.
    pub fn dense_random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.0; 32 * 9];
        for row in data.chunks_mut(9) {
            for v in row.iter_mut() {
                *v = rng.random_range(0.05..0.2);
            }
            row[rng.random_range(0..9)] = 1.0;
        }
        Coupling(Tensor::from_parts(vec![32, 9], data))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{COUPLING_SCHEMA}\n");
        for i in 0..32 {
            let row: Vec<String> = self.0.row(i).iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next() != Some(COUPLING_SCHEMA) {
            return Err(Error::format("line 1", format!("expected `{COUPLING_SCHEMA}`")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let row = row.map_err(|_| Error::format(format!("line {}", i + 2), "bad coupling value"))?;
            rows.push(row);
        }
        let t = Tensor::from_rows(&rows)?;
        if t.shape() != [32, 9] || !t.is_finite() {
            return Err(Error::Validation(format!("coupling must be a finite 32x9 matrix, got {:?}", t.shape())));
        }
        Ok(Coupling(t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub gait_hz: f64,
    pub coupling: Coupling,
    pub neural_alpha_hz: f64,
    pub noise_1f_exponent: f64,
    /// Artifact-to-neural power ratio per EEG channel, dB.
    pub snr_db: f64,
    pub seed: u64,
    /// Alpha burst amplitude relative to the unit-variance 1/f background.
    pub alpha_gain: f64,
    /// Clean EEG standard deviation, µV.
    pub eeg_std_uv: f64,
    /// Sway resonance amplitude relative to the unit-variance gait component.
    pub sway_gain: f64,
    pub sway_bandwidth_hz: f64,
    /// White sensor noise standard deviation on every IMU axis.
    pub imu_noise: f64,
    /// Seed of the head-mount mechanics (harmonic mix, phases, sway centres), shared by all
    /// recordings of one simulated subject.
    pub mount_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            duration_s: 120.0,
            gait_hz: 1.8,
            coupling: Coupling::dense_random(DEFAULT_COUPLING_SEED),
            neural_alpha_hz: 10.0,
            noise_1f_exponent: 1.0,
            snr_db: 10.0,
            seed: 1,
            alpha_gain: 2.0,
            eeg_std_uv: 10.0,
            sway_gain: 0.7,
            sway_bandwidth_hz: 1.0,
            imu_noise: 0.3,
            mount_seed: 3,
        }
    }
}

impl SynthConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let gait_hz = preset_gait_hz(name).ok_or_else(|| {
            Error::Config(format!("unknown preset `{name}` (expected ses-03, ses-04 or ses-05)"))
        })?;
        Ok(SynthConfig { gait_hz, ..Default::default() })
    }

    /// Reads a synthesis config file. `seed` is required; `preset` picks the gait frequency
    /// and the other keys override single fields. The coupling is `coupling = dense` (the
    /// default, seeded by `coupling_seed`) or `coupling = zero`.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut cfg = match kv.raw("preset") {
            Some(name) => SynthConfig::preset(name)?,
            None => SynthConfig::default(),
        };
        cfg.seed = kv.require("seed")?;
        kv.set("duration_s", &mut cfg.duration_s)?;
        kv.set("gait_hz", &mut cfg.gait_hz)?;
        kv.set("neural_alpha_hz", &mut cfg.neural_alpha_hz)?;
        kv.set("noise_1f_exponent", &mut cfg.noise_1f_exponent)?;
        kv.set("snr_db", &mut cfg.snr_db)?;
        kv.set("alpha_gain", &mut cfg.alpha_gain)?;
        kv.set("eeg_std_uv", &mut cfg.eeg_std_uv)?;
        kv.set("sway_gain", &mut cfg.sway_gain)?;
        kv.set("sway_bandwidth_hz", &mut cfg.sway_bandwidth_hz)?;
        kv.set("imu_noise", &mut cfg.imu_noise)?;
        kv.set("mount_seed", &mut cfg.mount_seed)?;
        let coupling_seed = kv.get_or("coupling_seed", DEFAULT_COUPLING_SEED)?;
        cfg.coupling = match kv.raw("coupling").unwrap_or("dense") {
            "dense" => Coupling::dense_random(coupling_seed),
            "zero" => Coupling::zeros(),
            other => return Err(Error::Config(format!("coupling must be `dense` or `zero`, got `{other}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s >= 10.0) || !self.duration_s.is_finite() {
            return Err(Error::Config(format!("duration_s must be at least 10, got {}", self.duration_s)));
        }
        if !(self.gait_hz > 0.5 && self.gait_hz < 4.0) {
            return Err(Error::Config(format!("gait_hz must lie in (0.5, 4), got {}", self.gait_hz)));
        }
        if self.coupling.0.shape() != [32, 9] || !self.coupling.0.is_finite() {
            return Err(Error::Config("coupling must be a finite 32x9 matrix".into()));
        }
        let finite = [
            self.neural_alpha_hz,
            self.noise_1f_exponent,
            self.snr_db,
            self.alpha_gain,
            self.eeg_std_uv,
            self.sway_gain,
            self.sway_bandwidth_hz,
            self.imu_noise,
        ];
        if finite.iter().any(|v| !v.is_finite()) || self.eeg_std_uv <= 0.0 || self.imu_noise < 0.0 {
            return Err(Error::Config("synthesis parameters must be finite and non-negative".into()));
        }
        if !(self.neural_alpha_hz > 0.0 && self.neural_alpha_hz < EEG_RATE_HZ / 2.0) {
            return Err(Error::Config(format!("neural_alpha_hz {} is out of range", self.neural_alpha_hz)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthRecording {
    pub clean_eeg: Recording,
    pub corrupted_eeg: Recording,
    pub imu: Recording,
    /// `corrupted − clean`, stored so the additive identity holds bit for bit.
    pub artifact: Vec<Vec<f64>>,
    pub coupling: Coupling,
    pub config: SynthConfig,
}

/// Mechanical response of one IMU axis.
struct Axis {
    harmonic_gain: [f64; 4],
    harmonic_phase: [f64; 4],
    /// Slow phase wander: (amplitude rad, frequency Hz, phase).
    wander: [(f64, f64, f64); 3],
    /// Slow amplitude modulation terms.
    modulation: [(f64, f64, f64); 3],
    sway: Vec<(f64, f64)>,
}

fn mount(cfg: &SynthConfig) -> Vec<Axis> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.mount_seed);
    let mut centres: Vec<f64> = (0..9).map(|j| 3.0 + 33.0 * j as f64 / 8.0).collect();
    centres.shuffle(&mut rng);
    centres
        .into_iter()
        .map(|c| {
            let mut harmonic_gain = [1.0; 4];
            for g in &mut harmonic_gain[1..] {
                *g = rng.random_range(0.0..0.6);
            }
            let harmonic_phase = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
            // evenly spaced tones keep the resonance spread over the band instead of letting
            // two random tones pile up in one spectral bin
            let sway = (0..SWAY_TONES)
                .map(|k| {
                    let f = c + cfg.sway_bandwidth_hz * ((k as f64 + 0.5) / SWAY_TONES as f64 - 0.5);
                    (f, rng.random_range(0.0..2.0 * PI))
                })
                .collect();
            Axis {
                harmonic_gain,
                harmonic_phase,
                wander: [(0.0, 0.0, 0.0); 3],
                modulation: [(0.0, 0.0, 0.0); 3],
                sway,
            }
        })
        .collect()
}

impl Axis {
    /// Per-recording gait variability drawn from the recording seed.
    fn vary(&mut self, rng: &mut ChaCha8Rng) {
        for w in &mut self.wander {
            *w = (0.15, rng.random_range(0.02..0.2), rng.random_range(0.0..2.0 * PI));
        }
        for m in &mut self.modulation {
            *m = (0.05, rng.random_range(0.1..1.0), rng.random_range(0.0..2.0 * PI));
        }
    }

    fn gait(&self, t: f64, gait_hz: f64) -> f64 {
        let wander: f64 = self.wander.iter().map(|(a, f, p)| a * (2.0 * PI * f * t + p).sin()).sum();
        let envelope = 1.0 + self.modulation.iter().map(|(a, f, p)| a * (2.0 * PI * f * t + p).sin()).sum::<f64>();
        let series: f64 = (0..4)
            .map(|h| {
                let k = (h + 1) as f64;
                self.harmonic_gain[h] * (2.0 * PI * gait_hz * k * t + self.harmonic_phase[h] + k * wander).sin()
            })
            .sum();
        envelope * series
    }

    fn sway(&self, t: f64) -> f64 {
        self.sway.iter().map(|(f, p)| (2.0 * PI * f * t + p).sin()).sum()
    }
}

fn std_of(x: &[f64]) -> f64 {
    crate::coherence::mean_std(x).1
}

/// Gaussian noise with power spectrum `∝ 1/f^exponent`, unit variance.
fn colored_noise(n: usize, fs: f64, exponent: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex64::new(0.0, 0.0);
    for k in 1..n {
        let kk = k.min(n - k);
        let f = kk as f64 * fs / n as f64;
        buf[k] *= f.powf(-exponent / 2.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let sd = std_of(&x);
    x.iter().map(|v| v / sd).collect()
}

/// Centred moving average of width `w` with zero padding.
fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    let half = w / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + w - half).min(n);
            (prefix[hi] - prefix[lo]) / w as f64
        })
        .collect()
}

fn clean_channel(cfg: &SynthConfig, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let background = colored_noise(n, EEG_RATE_HZ, cfg.noise_1f_exponent, rng);
    let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let envelope = moving_average(&white, (EEG_RATE_HZ / 2.0) as usize);
    let phase = rng.random_range(0.0..2.0 * PI);
    let alpha: Vec<f64> = envelope
        .iter()
        .enumerate()
        .map(|(i, e)| e.abs() * (2.0 * PI * cfg.neural_alpha_hz * i as f64 / EEG_RATE_HZ + phase).sin())
        .collect();
    let asd = std_of(&alpha).max(1e-12);
    let x: Vec<f64> = background.iter().zip(&alpha).map(|(b, a)| b + cfg.alpha_gain * a / asd).collect();
    let sd = std_of(&x);
    x.iter().map(|v| v / sd * cfg.eeg_std_uv).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthRecording> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_eeg = (cfg.duration_s * EEG_RATE_HZ).round() as usize;
    let n_imu = (cfg.duration_s * IMU_RATE_HZ).round() as usize;

    let clean: Vec<Vec<f64>> = (0..32).map(|_| clean_channel(cfg, n_eeg, &mut rng)).collect();

    let mut axes = mount(cfg);
    axes.iter_mut().for_each(|a| a.vary(&mut rng));
    let sample = |axis: &Axis, n: usize, fs: f64| -> (Vec<f64>, Vec<f64>) {
        let t = |i: usize| i as f64 / fs;
        (
            (0..n).map(|i| axis.gait(t(i), cfg.gait_hz)).collect(),
            (0..n).map(|i| axis.sway(t(i))).collect(),
        )
    };
    let mut motion_eeg = Vec::with_capacity(9);
    let mut imu_rows = Vec::with_capacity(9);
    for axis in &axes {
        let (g, s) = sample(axis, n_eeg, EEG_RATE_HZ);
        // normalisation constants come from the EEG-rate samples and are reused for the IMU
        // stream so both carry the identical motion waveform
        let (gs, ss) = (std_of(&g), std_of(&s).max(1e-12));
        motion_eeg.push(g.iter().zip(&s).map(|(a, b)| a / gs + cfg.sway_gain * b / ss).collect::<Vec<f64>>());
        let (gi, si) = sample(axis, n_imu, IMU_RATE_HZ);
        imu_rows.push(
            gi.iter()
                .zip(&si)
                .map(|(a, b)| a / gs + cfg.sway_gain * b / ss + cfg.imu_noise * rng.sample::<f64, _>(StandardNormal))
                .collect::<Vec<f64>>(),
        );
    }

    let gain = 10f64.powf(cfg.snr_db / 10.0);
    let mut corrupted = Vec::with_capacity(32);
    let mut artifact = Vec::with_capacity(32);
    for (i, c) in clean.iter().enumerate() {
        let row = cfg.coupling.0.row(i);
        let mut art = vec![0.0; n_eeg];
        for (j, m) in motion_eeg.iter().enumerate() {
            if row[j] != 0.0 {
                for (a, v) in art.iter_mut().zip(m) {
                    *a += row[j] * v;
                }
            }
        }
        let asd = std_of(&art);
        let scale = if asd > 0.0 { (gain).sqrt() * std_of(c) / asd } else { 0.0 };
        let noisy: Vec<f64> = c.iter().zip(&art).map(|(x, a)| x + scale * a).collect();
        artifact.push(noisy.iter().zip(c).map(|(y, x)| y - x).collect());
        corrupted.push(noisy);
    }

    let eeg_labels: Vec<String> = EEG_LABELS.iter().map(|s| s.to_string()).collect();
    let imu_labels: Vec<String> = IMU_LABELS.iter().map(|s| s.to_string()).collect();
    Ok(SynthRecording {
        clean_eeg: Recording::with_meta(Modality::Eeg, EEG_RATE_HZ, "uV", eeg_labels.clone(), clean)?,
        corrupted_eeg: Recording::with_meta(Modality::Eeg, EEG_RATE_HZ, "uV", eeg_labels, corrupted)?,
        imu: Recording::with_meta(Modality::Imu, IMU_RATE_HZ, "mixed", imu_labels, imu_rows)?,
        artifact,
        coupling: cfg.coupling.clone(),
        config: cfg.clone(),
    })
}

/// Paths written by [`SynthRecording::save`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFiles {
    pub clean: PathBuf,
    pub eeg: PathBuf,
    pub imu: PathBuf,
    pub coupling: PathBuf,
}

impl SynthFiles {
    pub fn in_dir(dir: &Path, stem: &str, format: FileFormat) -> Self {
        let ext = match format {
            FileFormat::Csv => "csv",
            FileFormat::Binary => "bin",
        };
        SynthFiles {
            clean: dir.join(format!("{stem}_clean.{ext}")),
            eeg: dir.join(format!("{stem}_eeg.{ext}")),
            imu: dir.join(format!("{stem}_imu.{ext}")),
            coupling: dir.join(format!("{stem}_coupling.txt")),
        }
    }
}

/// Preprocessed frames of a synthetic recording with the matching clean-EEG frames.
#[derive(Debug, Clone)]
pub struct SynthFrames {
    pub pairs: Vec<FramePair>,
    /// Clean EEG through the same preprocessing, frame-aligned with `pairs`.
    pub clean: Vec<Tensor>,
}

impl SynthRecording {
    /// Runs both EEG streams and the IMU through `cfg` and cuts aligned 1-s frames.
    pub fn frames(&self, cfg: &PreprocessConfig) -> Result<SynthFrames> {
        let imu = preprocess_imu(&self.imu, cfg)?;
        let pairs = frame_pairs(&preprocess_eeg(&self.corrupted_eeg, cfg)?, &imu)?;
        let clean = frame_pairs(&preprocess_eeg(&self.clean_eeg, cfg)?, &imu)?
            .into_iter()
            .map(|p| p.eeg)
            .collect();
        Ok(SynthFrames { pairs, clean })
    }

    pub fn save(&self, dir: &Path, stem: &str, format: FileFormat) -> Result<SynthFiles> {
        let files = SynthFiles::in_dir(dir, stem, format);
        save_recording(&self.clean_eeg, &files.clean, format)?;
        save_recording(&self.corrupted_eeg, &files.eeg, format)?;
        save_recording(&self.imu, &files.imu, format)?;
        std::fs::write(&files.coupling, self.coupling.to_text()).map_err(|e| Error::io(&files.coupling, e))?;
        Ok(files)
    }
}

/// Pearson correlation between the flattened, row-normalised `|coupling|` and the flattened
/// attention weights. Zero variance on either side gives 0.
pub fn coupling_recovery_score(weights: &Tensor, coupling: &Tensor) -> Result<f64> {
    if weights.shape() != coupling.shape() || weights.ndim() != 2 {
        return Err(Error::Shape(format!(
            "attention weights {:?} vs coupling {:?}",
            weights.shape(),
            coupling.shape()
        )));
    }
    if !weights.is_finite() || !coupling.is_finite() {
        return Err(Error::Validation("recovery score needs finite matrices".into()));
    }
    let cols = coupling.shape()[1];
    let mut target = Vec::with_capacity(coupling.len());
    for i in 0..coupling.shape()[0] {
        let row = coupling.row(i);
        let s: f64 = row.iter().map(|v| v.abs()).sum();
        target.extend(row.iter().map(|v| if s > 0.0 { v.abs() / s } else { 1.0 / cols as f64 }));
    }
    Ok(pearson_plain(weights.data(), &target))
}

fn pearson_plain(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = crate::coherence::mean_std(a);
    let (mb, sb) = crate::coherence::mean_std(b);
    if sa == 0.0 || sb == 0.0 {
        return 0.0;
    }
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    (cov / (sa * sb)).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(seed: u64) -> SynthConfig {
        SynthConfig { duration_s: 20.0, seed, ..SynthConfig::preset("ses-04").unwrap() }
    }

    #[test]
    fn config_file_needs_seed() {
        let kv = KeyValues::parse("preset = ses-05\nduration_s = 30\n").unwrap();
        assert!(SynthConfig::from_kv(&kv).unwrap_err().to_string().contains("`seed`"));
        let kv = KeyValues::parse("preset = ses-05\nseed = 4\ncoupling = zero\n").unwrap();
        let cfg = SynthConfig::from_kv(&kv).unwrap();
        kv.finish().unwrap();
        assert_eq!((cfg.seed, cfg.gait_hz), (4, 2.5));
        assert_eq!(cfg.coupling, Coupling::zeros());
    }

    #[test]
    fn zero_coupling_leaves_eeg_clean() {
        let rec = generate(&SynthConfig { coupling: Coupling::zeros(), ..short(2) }).unwrap();
        assert_eq!(rec.clean_eeg.rows(), rec.corrupted_eeg.rows());
    }

    #[test]
    fn additive_identity_is_exact() {
        let rec = generate(&short(4)).unwrap();
        for i in 0..32 {
            for ((y, x), a) in rec.corrupted_eeg.channel(i).iter().zip(rec.clean_eeg.channel(i)).zip(&rec.artifact[i]) {
                assert_eq!(y - x, *a);
            }
        }
    }

    #[test]
    fn same_seed_same_output() {
        let a = generate(&short(9)).unwrap();
        let b = generate(&short(9)).unwrap();
        assert_eq!(a.corrupted_eeg, b.corrupted_eeg);
        assert_eq!(a.imu, b.imu);
        assert_ne!(generate(&short(10)).unwrap().imu, a.imu);
    }

    #[test]
    fn shapes_and_rates() {
        let rec = generate(&short(1)).unwrap();
        assert_eq!((rec.clean_eeg.channels(), rec.clean_eeg.samples()), (32, 4000));
        assert_eq!((rec.imu.channels(), rec.imu.samples(), rec.imu.sample_rate_hz()), (9, 2560, 128.0));
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig { duration_s: 9.0, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { gait_hz: 4.0, ..Default::default() }.validate().is_err());
        assert!(SynthConfig::preset("ses-09").is_err());
        assert_eq!(SynthConfig::preset("ses-05").unwrap().gait_hz, 2.5);
    }

    #[test]
    fn coupling_text_round_trip() {
        let c = Coupling::dense_random(5);
        assert_eq!(Coupling::from_text(&c.to_text()).unwrap(), c);
        assert!(c.0.data().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn recovery_score_cases() {
        let c = Coupling::dense_random(1).0;
        let mut w = c.clone();
        for i in 0..32 {
            let s: f64 = c.row(i).iter().sum();
            w.data_mut()[i * 9..(i + 1) * 9].iter_mut().for_each(|v| *v /= s);
        }
        assert!((coupling_recovery_score(&w, &c).unwrap() - 1.0).abs() < 1e-12);
        let uniform = Tensor::full(&[32, 9], 1.0 / 9.0);
        assert_eq!(coupling_recovery_score(&uniform, &c).unwrap(), 0.0);
    }
}
