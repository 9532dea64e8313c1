use super::NetConfig;
use crate::coherence::{CoherenceConfig, CoherenceEngine};
use crate::error::{Error, Result};
use crate::signal::FramePair;
use crate::tensor::{Tensor, STD_NORM_EPS};

/// Frames stacked along a leading batch axis and std-normalised per channel, together with the
/// statistics needed to map network output back to input units.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBatch {
    /// `[B × eeg × T]`, normalised.
    pub eeg: Tensor,
    /// `[B × imu × T]`, normalised.
    pub imu: Tensor,
    /// `[B × imu × T]` in input units, for the coherence loss.
    pub imu_raw: Tensor,
    /// Per (frame, EEG channel) mean and `std + eps` of the raw input.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FrameBatch {
    pub fn len(&self) -> usize {
        self.eeg.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Maps a normalised `[B × eeg × T]` tensor back to input units.
    pub fn denormalize(&self, t: &Tensor) -> Tensor {
        let len = *t.shape().last().expect("3-d tensor");
        let data = t
            .data()
            .chunks(len)
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |v| v * self.scale[r] + self.mean[r]))
            .collect();
        Tensor::new(t.shape(), data).expect("same shape")
    }

    /// `(scale, mean)` broadcast to `[B × eeg × T]`, for de-normalising inside a graph.
    pub fn affine_tensors(&self) -> (Tensor, Tensor) {
        let len = self.eeg.shape()[2];
        let expand = |v: &[f64]| {
            let data = v.iter().flat_map(|x| std::iter::repeat_n(*x, len)).collect();
            Tensor::new(self.eeg.shape(), data).expect("same shape")
        };
        (expand(&self.scale), expand(&self.mean))
    }
}

fn normalize_into(rows: &[f64], len: usize, out: &mut Vec<f64>, mean: &mut Vec<f64>, scale: &mut Vec<f64>) {
    for r in rows.chunks(len) {
        let mu = r.iter().sum::<f64>() / len as f64;
        let sd = (r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / len as f64).sqrt();
        let s = sd + STD_NORM_EPS;
        out.extend(r.iter().map(|v| (v - mu) / s));
        mean.push(mu);
        scale.push(s);
    }
}

fn check_pair(p: &FramePair, cfg: &NetConfig) -> Result<()> {
    let t = cfg.frame_len;
    if p.eeg.shape() != [cfg.c_eeg, t] || p.imu.shape() != [cfg.c_imu, t] {
        return Err(Error::Shape(format!(
            "frame {} is {:?} / {:?}, model expects [{} × {t}] / [{} × {t}]",
            p.index,
            p.eeg.shape(),
            p.imu.shape(),
            cfg.c_eeg,
            cfg.c_imu
        )));
    }
    if !p.eeg.is_finite() || !p.imu.is_finite() {
        return Err(Error::Validation(format!("frame {} has non-finite samples", p.index)));
    }
    Ok(())
}

pub fn normalize_frames(frames: &[FramePair], cfg: &NetConfig) -> Result<FrameBatch> {
    if frames.is_empty() {
        return Err(Error::Empty("no frames to batch".into()));
    }
    let (ce, ci, t) = (cfg.c_eeg, cfg.c_imu, cfg.frame_len);
    let b = frames.len();
    let mut eeg = Vec::with_capacity(b * ce * t);
    let mut imu = Vec::with_capacity(b * ci * t);
    let mut imu_raw = Vec::with_capacity(b * ci * t);
    let (mut mean, mut scale) = (Vec::new(), Vec::new());
    let (mut scratch_m, mut scratch_s) = (Vec::new(), Vec::new());
    for p in frames {
        check_pair(p, cfg)?;
        normalize_into(p.eeg.data(), t, &mut eeg, &mut mean, &mut scale);
        normalize_into(p.imu.data(), t, &mut imu, &mut scratch_m, &mut scratch_s);
        imu_raw.extend_from_slice(p.imu.data());
    }
    Ok(FrameBatch {
        eeg: Tensor::new(&[b, ce, t], eeg)?,
        imu: Tensor::new(&[b, ci, t], imu)?,
        imu_raw: Tensor::new(&[b, ci, t], imu_raw)?,
        mean,
        scale,
    })
}

/// Coherence configuration matching a network's channel counts and band.
pub fn coherence_config(cfg: &NetConfig) -> CoherenceConfig {
    CoherenceConfig {
        band_bins: cfg.band_bins,
        c_eeg: cfg.c_eeg,
        c_imu: cfg.c_imu,
        ..CoherenceConfig::default()
    }
}

/// Training frames, normalised once, with their attention targets.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub frames: FrameBatch,
    /// `[N × eeg × imu]` scaled correlation targets from the raw frames.
    pub targets: Tensor,
    /// Raw-input coherence per frame.
    pub raw_coherence: Vec<f64>,
}

impl TrainingSet {
    pub fn new(frames: &[FramePair], cfg: &NetConfig) -> Result<Self> {
        let batch = normalize_frames(frames, cfg)?;
        let engine = CoherenceEngine::new(coherence_config(cfg), cfg.frame_len)?;
        let mut targets = Vec::with_capacity(frames.len() * cfg.c_eeg * cfg.c_imu);
        let mut raw = Vec::with_capacity(frames.len());
        for p in frames {
            let m = engine.correlation(&p.eeg, &p.imu)?;
            raw.push(crate::coherence::coherence_score(&m));
            targets.extend(crate::coherence::attention_target(&m).data());
        }
        Ok(TrainingSet {
            frames: batch,
            targets: Tensor::new(&[frames.len(), cfg.c_eeg, cfg.c_imu], targets)?,
            raw_coherence: raw,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gathers the frames at `idx` (in that order).
    pub fn subset(&self, idx: &[usize]) -> TrainingSet {
        let fb = &self.frames;
        let rows_e = fb.eeg.shape()[1];
        TrainingSet {
            frames: FrameBatch {
                eeg: gather(&fb.eeg, idx),
                imu: gather(&fb.imu, idx),
                imu_raw: gather(&fb.imu_raw, idx),
                mean: idx.iter().flat_map(|&i| fb.mean[i * rows_e..(i + 1) * rows_e].to_vec()).collect(),
                scale: idx.iter().flat_map(|&i| fb.scale[i * rows_e..(i + 1) * rows_e].to_vec()).collect(),
            },
            targets: gather(&self.targets, idx),
            raw_coherence: idx.iter().map(|&i| self.raw_coherence[i]).collect(),
        }
    }
}

/// Selects items along the leading axis.
pub fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let per: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(&shape, data).expect("gathered size")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_round_trips() {
        let cfg = NetConfig::tiny();
        let eeg = Tensor::new(&[4, 40], (0..160).map(|i| ((i * 7) % 13) as f64 - 2.0).collect()).unwrap();
        let imu = Tensor::new(&[2, 40], (0..80).map(|i| (i as f64).sin()).collect()).unwrap();
        let b = normalize_frames(&[FramePair { eeg: eeg.clone(), imu, index: 0, t0_s: 0.0 }], &cfg).unwrap();
        let back = b.denormalize(&b.eeg);
        for (a, e) in back.data().iter().zip(eeg.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_shape_rejected() {
        let cfg = NetConfig::tiny();
        let p = FramePair { eeg: Tensor::zeros(&[3, 40]), imu: Tensor::zeros(&[2, 40]), index: 7, t0_s: 7.0 };
        assert!(normalize_frames(&[p], &cfg).unwrap_err().to_string().contains("frame 7"));
    }
}
