use cohwash_core::coherence::{CoherenceConfig, CoherenceEngine};
use cohwash_core::signal::{frame_pairs, preprocess_eeg, preprocess_imu, PreprocessConfig, Recording};
use cohwash_core::synth::{generate, SynthConfig, PRESETS};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

fn mean_coherence(eeg: &Recording, imu: &Recording) -> f64 {
    let cfg = PreprocessConfig::default();
    let frames = frame_pairs(&preprocess_eeg(eeg, &cfg).unwrap(), &preprocess_imu(imu, &cfg).unwrap()).unwrap();
    let engine = CoherenceEngine::new(CoherenceConfig::default(), 200).unwrap();
    frames.iter().map(|f| engine.score(&f.eeg, &f.imu).unwrap()).sum::<f64>() / frames.len() as f64
}

#[test]
fn corrupted_eeg_is_coherent_with_imu_and_clean_is_not() {
    let rec = generate(&SynthConfig { duration_s: 100.0, ..Default::default() }).unwrap();
    let corrupted = mean_coherence(&rec.corrupted_eeg, &rec.imu);
    let clean = mean_coherence(&rec.clean_eeg, &rec.imu);
    eprintln!("corrupted {corrupted:.4} clean {clean:.4}");
    assert!(corrupted >= 0.4, "corrupted {corrupted}");
    assert!(clean <= 0.1, "clean {clean}");
}

#[test]
fn imu_peak_sits_at_gait_frequency() {
    for (name, gait) in PRESETS {
        let rec = generate(&SynthConfig { duration_s: 30.0, ..SynthConfig::preset(name).unwrap() }).unwrap();
        let n = 1280;
        let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
        for axis in 0..9 {
            for w in 0..3 {
                let x = &rec.imu.channel(axis)[w * n..(w + 1) * n];
                let mean = x.iter().sum::<f64>() / n as f64;
                let mut buf: Vec<Complex64> = x.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
                fft.process(&mut buf);
                let peak = (1..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
                let peak_hz = peak as f64 * 128.0 / n as f64;
                assert!((peak_hz - gait).abs() <= 0.1 + 1e-9, "{name} axis {axis}: peak {peak_hz} Hz");
            }
        }
    }
}
