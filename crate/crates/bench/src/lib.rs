//! Shared fixtures for the benchmarks in `benches/`.

use cohwash_core::signal::{preprocess_eeg, preprocess_imu};
use cohwash_core::synth::{generate, SynthConfig};
use cohwash_core::{FramePair, PreprocessConfig, Recording, Tensor};

/// Preprocessed streams and frames of a synthetic walking recording.
pub struct Fixture {
    pub eeg: Recording,
    pub imu: Recording,
    pub frames: Vec<FramePair>,
    pub clean: Vec<Tensor>,
}

pub fn fixture(duration_s: f64) -> Fixture {
    let rec = generate(&SynthConfig { duration_s, ..SynthConfig::default() }).expect("default synthesis");
    let pc = PreprocessConfig::default();
    let frames = rec.frames(&pc).expect("framing");
    Fixture {
        eeg: preprocess_eeg(&rec.corrupted_eeg, &pc).expect("eeg preprocessing"),
        imu: preprocess_imu(&rec.imu, &pc).expect("imu preprocessing"),
        frames: frames.pairs,
        clean: frames.clean,
    }
}
