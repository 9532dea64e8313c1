//! Classical comparators: a simplified artifact subspace reconstruction (ASR) and FastICA with
//! IMU-coherence component rejection.

mod asr;
mod ica;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::signal::Recording;

pub use asr::{asr_calibrate, asr_clean, AsrState, ASR_DEFAULT_CUTOFF, ASR_WINDOW_S};
pub use ica::{
    component_imu_coherence, fastica_fit, ica_reject_and_clean, ica_round_trip, IcaConfig, IcaModel,
};

/// Settings of the combined ASR then ICA comparator.
#[derive(Debug, Clone, PartialEq)]
pub struct AsrIcaConfig {
    pub cutoff_k: f64,
    /// Leading span of the recording used to calibrate ASR.
    pub calibration_s: f64,
    pub ica: IcaConfig,
}

impl Default for AsrIcaConfig {
    fn default() -> Self {
        AsrIcaConfig {
            cutoff_k: ASR_DEFAULT_CUTOFF,
            calibration_s: 30.0,
            ica: IcaConfig::default(),
        }
    }
}

/// Output of [`asr_ica`] with the fitted pieces kept for reporting.
#[derive(Debug, Clone)]
pub struct AsrIcaOutput {
    pub cleaned: Recording,
    pub asr: AsrState,
    pub ica: IcaModel,
}

/// ASR calibrated on the recording's own leading segment, then FastICA with IMU-coherence
/// rejection on the ASR output.
pub fn asr_ica(eeg: &Recording, imu: &Recording, cfg: &AsrIcaConfig) -> Result<AsrIcaOutput> {
    let calib_len = (cfg.calibration_s * eeg.sample_rate_hz()).round() as usize;
    let calib = eeg.slice(0, calib_len.min(eeg.samples()))?;
    let asr = asr_calibrate(&calib, cfg.cutoff_k)?;
    let after_asr = asr_clean(eeg, &asr)?;
    let mut ica = fastica_fit(&after_asr, &cfg.ica)?;
    let cleaned = ica_reject_and_clean(&after_asr, imu, &mut ica)?;
    Ok(AsrIcaOutput { cleaned, asr, ica })
}

/// Eigenvalues below this fraction of the largest make a covariance rank-deficient; it caps
/// the whitening condition number at 1e6.
const RANK_TOL: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix, sorted by descending eigenvalue, with each
/// eigenvector's largest-magnitude entry made positive so the result is reproducible.
pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(i);
        let pivot = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        vecs.set_column(k, &(col * sign));
    }
    (values, vecs)
}

/// Errors when the smallest eigenvalue is negligible; channels loading on the null directions
/// are named.
pub(crate) fn check_rank(values: &[f64], vecs: &DMatrix<f64>) -> Result<()> {
    let top = values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(Error::RankDeficient {
            channels: (0..vecs.nrows()).collect(),
        });
    }
    let null: Vec<usize> = (0..values.len()).filter(|&k| values[k] < RANK_TOL * top).collect();
    if null.is_empty() {
        return Ok(());
    }
    let mut channels: Vec<usize> = (0..vecs.nrows())
        .filter(|&ch| null.iter().any(|&k| vecs[(ch, k)].abs() > 0.1))
        .collect();
    channels.dedup();
    Err(Error::RankDeficient { channels })
}

/// Channel rows as a `[channels × samples]` matrix.
pub(crate) fn to_matrix(rec: &Recording) -> DMatrix<f64> {
    let (c, n) = (rec.channels(), rec.samples());
    DMatrix::from_fn(c, n, |i, j| rec.rows()[i][j])
}

pub(crate) fn from_matrix(like: &Recording, m: &DMatrix<f64>) -> Result<Recording> {
    let rows = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    Recording::with_meta(like.modality(), like.sample_rate_hz(), like.units(), like.labels().to_vec(), rows)
}
