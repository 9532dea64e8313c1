//! IMU-referenced removal of motion artifacts from multichannel EEG.
//!
//! The crate covers the whole path: recording I/O and preprocessing ([`signal`]), the weighted
//! spectral coherence metric ([`coherence`]), a small reverse-mode autodiff engine
//! ([`tensor`]), the cross-modal attention denoiser ([`net`]), ASR and ICA comparators
//! ([`baselines`]) and a synthetic data generator with known ground truth ([`synth`]).

pub mod baselines;
pub mod coherence;
pub mod error;
pub mod kv;
pub mod net;
pub mod signal;
pub mod synth;
pub mod tensor;

pub use coherence::{CoherenceConfig, CoherenceReport, CorrelationMatrix, SpectralFrame};
pub use error::{Error, Result};
pub use signal::{FramePair, Modality, PreprocessConfig, Recording};
pub use tensor::Tensor;
