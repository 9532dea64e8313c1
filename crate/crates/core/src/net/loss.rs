use std::f64::consts::PI;

use crate::coherence::CoherenceConfig;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Real and imaginary DFT rows for the first `bins` frequencies as `[T × bins]` matrices, so
/// `x · cos` and `x · sin` give the spectrum of every row of `x`.
#[derive(Debug, Clone)]
pub struct DftBasis {
    cos: Tensor,
    sin: Tensor,
}

impl DftBasis {
    pub fn new(len: usize, bins: usize) -> Self {
        let mut cos = vec![0.0; len * bins];
        let mut sin = vec![0.0; len * bins];
        for n in 0..len {
            for k in 0..bins {
                // reduce k·n mod len first so large products keep full precision
                let ang = 2.0 * PI * ((k * n) % len) as f64 / len as f64;
                cos[n * bins + k] = ang.cos();
                sin[n * bins + k] = -ang.sin() + 0.0;
            }
        }
        DftBasis {
            cos: Tensor::new(&[len, bins], cos).expect("basis size"),
            sin: Tensor::new(&[len, bins], sin).expect("basis size"),
        }
    }

    /// Std-normalised amplitude and phase over the last axis of `x`.
    fn normalized_spectrum(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let (c, s) = (g.constant(self.cos.clone()), g.constant(self.sin.clone()));
        let re = g.linear(x, c, None)?;
        let im = g.linear(x, s, None)?;
        let amp = g.complex_abs(re, im, 1e-12)?;
        let ph = g.atan2(im, re)?;
        Ok((g.std_norm(amp)?, g.std_norm(ph)?))
    }
}

/// Differentiable frame coherence: the mean over frames and channel pairs of the weighted
/// amplitude/phase correlation between `eeg: [B × eeg × T]` and `imu: [B × imu × T]`.
pub fn coherence_loss(g: &mut Graph, eeg: Var, imu: Var, basis: &DftBasis, cfg: &CoherenceConfig) -> Result<Var> {
    let (ea, ep) = basis.normalized_spectrum(g, eeg)?;
    let (ia, ip) = basis.normalized_spectrum(g, imu)?;
    let ra = g.cosine_matrix(ea, ia, cfg.epsilon)?;
    let rp = g.cosine_matrix(ep, ip, cfg.epsilon)?;
    let ra = g.scale(ra, cfg.weight_amp);
    let rp = g.scale(rp, cfg.weight_phase);
    let r = g.add(ra, rp)?;
    Ok(g.mean(r))
}

/// Mean squared error between attention logits and their targets.
pub fn attention_supervision_loss(logits: &Tensor, target: &Tensor) -> Result<f64> {
    if logits.shape() != target.shape() {
        return Err(Error::Shape(format!("logits {:?} vs target {:?}", logits.shape(), target.shape())));
    }
    let n = logits.len() as f64;
    Ok(logits.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Graph handles of the loss and its weighted components (components are unweighted).
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub coh: Var,
    pub att: Var,
    pub rec: Var,
}

/// Inputs of the full objective, all as graph variables.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs {
    /// Network output in input units (scored for coherence).
    pub out_raw: Var,
    /// Network output and input, both normalised (reconstruction term).
    pub out: Var,
    pub input: Var,
    pub imu_raw: Var,
    pub logits: Var,
    pub target: Var,
}

/// `λ_coh·coherence + λ_att·attention MSE + λ_rec·reconstruction MSE`.
pub fn total_loss(
    g: &mut Graph,
    v: LossInputs,
    weights: (f64, f64, f64),
    basis: &DftBasis,
    cfg: &CoherenceConfig,
) -> Result<LossTerms> {
    let (l_coh, l_att, l_rec) = weights;
    let coh = coherence_loss(g, v.out_raw, v.imu_raw, basis, cfg)?;
    let att = g.mse(v.logits, v.target)?;
    let rec = g.mse(v.out, v.input)?;
    let a = g.scale(coh, l_coh);
    let b = g.scale(att, l_att);
    let c = g.scale(rec, l_rec);
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(LossTerms { total, coh, att, rec })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coherence::frame_coherence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn graph_coherence_matches_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = CoherenceConfig::default();
        let basis = DftBasis::new(200, 40);
        let (e, m) = (rand_t(&mut rng, &[2, 32, 200]), rand_t(&mut rng, &[2, 9, 200]));
        let mut g = Graph::new();
        let (ev, mv) = (g.constant(e.clone()), g.constant(m.clone()));
        let loss = coherence_loss(&mut g, ev, mv, &basis, &cfg).unwrap();
        let mut want = 0.0;
        for b in 0..2 {
            let ef = Tensor::new(&[32, 200], e.data()[b * 6400..(b + 1) * 6400].to_vec()).unwrap();
            let mf = Tensor::new(&[9, 200], m.data()[b * 1800..(b + 1) * 1800].to_vec()).unwrap();
            want += frame_coherence(&ef, &mf, &cfg).unwrap() / 2.0;
        }
        assert!((g.value(loss).item() - want).abs() < 1e-9, "{} vs {want}", g.value(loss).item());
    }

    #[test]
    fn attention_loss_values() {
        let t = Tensor::new(&[2, 2], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        assert_eq!(attention_supervision_loss(&t, &t).unwrap(), 0.0);
        let shifted = t.map(|v| v + 1.0);
        assert!((attention_supervision_loss(&shifted, &t).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn attention_loss_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (a, b) = (rand_t(&mut rng, &[32, 9]), rand_t(&mut rng, &[32, 9]));
        let mut brute = 0.0;
        for i in 0..32 {
            for j in 0..9 {
                brute += (a.at2(i, j) - b.at2(i, j)).powi(2);
            }
        }
        brute /= 288.0;
        assert!((attention_supervision_loss(&a, &b).unwrap() - brute).abs() < 1e-12);
    }
}
