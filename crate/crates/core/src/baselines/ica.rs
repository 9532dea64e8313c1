use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_rank, from_matrix, sorted_eigen, to_matrix};
use crate::coherence::{CoherenceConfig, CoherenceEngine};
use crate::error::{Error, Result};
use crate::signal::{frame_pairs, Modality, Recording};
use crate::tensor::Tensor;

const MIN_FIT_S: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct IcaConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Components whose IMU coherence exceeds this are removed.
    pub reject_threshold: f64,
}

impl Default for IcaConfig {
    fn default() -> Self {
        IcaConfig {
            max_iter: 200,
            tol: 1e-4,
            seed: 0,
            reject_threshold: 0.6,
        }
    }
}

/// A fitted FastICA decomposition. Sources are `unmixing · whitening · (x − mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IcaModel {
    /// Orthogonal unmixing in whitened space; rows have unit norm.
    pub unmixing: DMatrix<f64>,
    pub whitening: DMatrix<f64>,
    /// Inverse of `whitening`.
    pub dewhitening: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub rejected: Vec<usize>,
    pub reject_threshold: f64,
    /// IMU coherence of each component from the last rejection pass.
    pub scores: Vec<f64>,
    /// False when the iteration limit was hit; the model then holds the last iterate.
    pub converged: bool,
    pub iterations: usize,
}

impl IcaModel {
    pub fn components(&self) -> usize {
        self.unmixing.nrows()
    }

    /// Independent components of `rec`, one per row.
    pub fn sources(&self, rec: &Recording) -> Result<DMatrix<f64>> {
        if rec.channels() != self.mean.len() {
            return Err(Error::Shape(format!(
                "ICA fitted on {} channels, recording has {}",
                self.mean.len(),
                rec.channels()
            )));
        }
        let mut x = to_matrix(rec);
        for mut col in x.column_iter_mut() {
            col -= &self.mean;
        }
        Ok(&self.unmixing * (&self.whitening * x))
    }

    /// Rebuilds channels from sources with the listed components set to zero.
    fn reconstruct(&self, sources: &DMatrix<f64>, drop: &[usize]) -> DMatrix<f64> {
        let mut s = sources.clone();
        for &k in drop {
            s.row_mut(k).fill(0.0);
        }
        let mut x = &self.dewhitening * (self.unmixing.transpose() * s);
        for mut col in x.column_iter_mut() {
            col += &self.mean;
        }
        x
    }
}

/// `(W Wᵀ)^{-1/2} W`: the nearest matrix with orthonormal rows.
fn symmetric_decorrelation(w: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vecs) = sorted_eigen(w * w.transpose());
    let inv_sqrt = DMatrix::from_diagonal(&DVector::from_iterator(
        values.len(),
        values.iter().map(|v| 1.0 / v.max(1e-300).sqrt()),
    ));
    &vecs * inv_sqrt * vecs.transpose() * w
}

/// Symmetric FastICA with the `tanh` contrast on centred, whitened data.
pub fn fastica_fit(rec: &Recording, cfg: &IcaConfig) -> Result<IcaModel> {
    if cfg.max_iter == 0 || !(cfg.tol > 0.0) {
        return Err(Error::Config("ICA needs max_iter ≥ 1 and a positive tolerance".into()));
    }
    if rec.duration_s() < MIN_FIT_S {
        return Err(Error::Validation(format!(
            "ICA needs at least {MIN_FIT_S} s of data, got {:.1} s",
            rec.duration_s()
        )));
    }
    let mut x = to_matrix(rec);
    let (c, n) = (x.nrows(), x.ncols());
    let mean = x.column_mean();
    for mut col in x.column_iter_mut() {
        col -= &mean;
    }
    let (values, vecs) = sorted_eigen(&x * x.transpose() / n as f64);
    check_rank(&values, &vecs)?;
    let d_inv = DMatrix::from_diagonal(&DVector::from_iterator(c, values.iter().map(|v| 1.0 / v.sqrt())));
    let d_sqrt = DMatrix::from_diagonal(&DVector::from_iterator(c, values.iter().map(|v| v.sqrt())));
    let whitening = &d_inv * vecs.transpose();
    let dewhitening = &vecs * d_sqrt;
    let z = &whitening * &x;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = DMatrix::from_fn(c, c, |_, _| StandardNormal.sample(&mut rng));
    let mut w = symmetric_decorrelation(&init);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let g = (&w * &z).map(f64::tanh);
        let dg: Vec<f64> = g.row_iter().map(|r| r.iter().map(|v| 1.0 - v * v).sum::<f64>() / n as f64).collect();
        let mut next = &g * z.transpose() / n as f64;
        for i in 0..c {
            let wi = w.row(i) * dg[i];
            let mut row = next.row_mut(i);
            row -= wi;
        }
        let next = symmetric_decorrelation(&next);
        let change = (0..c)
            .map(|i| (1.0 - next.row(i).dot(&w.row(i)).abs()).abs())
            .fold(0.0, f64::max);
        w = next;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(IcaModel {
        unmixing: w,
        whitening,
        dewhitening,
        mean,
        rejected: Vec::new(),
        reject_threshold: cfg.reject_threshold,
        scores: Vec::new(),
        converged,
        iterations,
    })
}

/// Per-component coherence with the IMU: each source is scored as a one-channel EEG against
/// every IMU channel, averaged over 1-s frames, and the maximum over IMU channels is kept.
pub fn component_imu_coherence(sources: &Recording, imu: &Recording, band_bins: usize) -> Result<Vec<f64>> {
    let frames = frame_pairs(sources, imu)?;
    let len = sources.sample_rate_hz() as usize;
    let engine = CoherenceEngine::new(
        CoherenceConfig {
            band_bins,
            c_eeg: 1,
            c_imu: imu.channels(),
            ..CoherenceConfig::default()
        },
        len,
    )?;
    let (k, m) = (sources.channels(), imu.channels());
    let mut acc = vec![vec![0.0; m]; k];
    for f in &frames {
        for (comp, row) in acc.iter_mut().enumerate() {
            let one = Tensor::new(&[1, len], f.eeg.row(comp).to_vec())?;
            let corr = engine.correlation(&one, &f.imu)?;
            for (j, v) in row.iter_mut().enumerate() {
                *v += corr.values.at2(0, j);
            }
        }
    }
    let nf = frames.len() as f64;
    Ok(acc
        .iter()
        .map(|row| row.iter().map(|v| v / nf).fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

fn sources_recording(model: &IcaModel, rec: &Recording) -> Result<(DMatrix<f64>, Recording)> {
    let s = model.sources(rec)?;
    let labels = (0..s.nrows()).map(|k| format!("IC{k}")).collect();
    let rows = (0..s.nrows()).map(|i| s.row(i).iter().copied().collect()).collect();
    let as_rec = Recording::with_meta(Modality::Eeg, rec.sample_rate_hz(), "a.u.", labels, rows)?;
    Ok((s, as_rec))
}

/// Scores every component against the IMU, records those above the model's threshold in
/// `model.rejected`, and rebuilds the EEG from the rest.
pub fn ica_reject_and_clean(rec: &Recording, imu: &Recording, model: &mut IcaModel) -> Result<Recording> {
    let (s, as_rec) = sources_recording(model, rec)?;
    let bins = 40.min(rec.sample_rate_hz() as usize / 2 + 1);
    let scores = component_imu_coherence(&as_rec, imu, bins)?;
    let rejected: Vec<usize> = (0..scores.len()).filter(|&k| scores[k] > model.reject_threshold).collect();
    if rejected.len() == scores.len() {
        return Err(Error::Validation(format!(
            "all {} components exceed the rejection threshold {}; raise it",
            scores.len(),
            model.reject_threshold
        )));
    }
    model.scores = scores;
    model.rejected = rejected;
    from_matrix(rec, &model.reconstruct(&s, &model.rejected))
}

/// Decomposes and rebuilds `rec` keeping every component.
pub fn ica_round_trip(rec: &Recording, model: &IcaModel) -> Result<Recording> {
    let s = model.sources(rec)?;
    from_matrix(rec, &model.reconstruct(&s, &[]))
}
