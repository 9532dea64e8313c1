use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{coherence_config, gather, TrainingSet};
use super::loss::{total_loss, DftBasis, LossInputs, LossTerms};
use super::model::{ArtifactNet, Pass, ATTENTION_PARAMS, ENCODER_PREFIXES};
use super::{NetConfig, TrainConfig};
use crate::coherence::{pearson, CoherenceConfig};
use crate::error::{Error, Result};
use crate::signal::FramePair;
use crate::tensor::{Graph, Optimizer, Tensor, Var};

/// Header comment of history CSVs.
pub const HISTORY_SCHEMA: &str = "# cohwash-history v1";

/// Loss values above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Joint encoder and query/key fit on the attention loss.
    Warmup,
    /// Attention projections only, encoders frozen.
    Attention,
    /// Gate, alignment, decoder (and attention) on the full loss.
    Full,
}

/// Mean loss components over one epoch. Components outside the stage objective are 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based, counted across stages.
    pub epoch: usize,
    pub stage: Stage,
    pub loss_total: f64,
    pub loss_coh: f64,
    pub loss_att: f64,
    pub loss_rec: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub stage1_epochs: usize,
    /// Pearson correlation between attention logits and targets on the training frames at
    /// the end of Stage 1.
    pub stage1_r: f64,
    /// Encoder checksums at the start and at the end of Stage 1.
    pub encoder_checksum_before: u32,
    pub encoder_checksum_after: u32,
    pub stage2_epochs: usize,
    /// Best validation (or training, without a validation split) loss in Stage 2.
    pub best_loss: f64,
}

pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HISTORY_SCHEMA}");
    let _ = writeln!(out, "epoch,loss_total,loss_coh,loss_att,loss_rec");
    for r in history {
        let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.loss_total, r.loss_coh, r.loss_att, r.loss_rec);
    }
    out
}

#[derive(Default)]
struct Acc {
    n: f64,
    sums: [f64; 4],
}

impl Acc {
    fn add(&mut self, weight: usize, v: [f64; 4]) {
        self.n += weight as f64;
        for (s, x) in self.sums.iter_mut().zip(v) {
            *s += weight as f64 * x;
        }
    }

    fn record(&self, epoch: usize, stage: Stage) -> EpochRecord {
        let m = |i: usize| self.sums[i] / self.n.max(1.0);
        EpochRecord {
            epoch,
            stage,
            loss_total: m(0),
            loss_coh: m(1),
            loss_att: m(2),
            loss_rec: m(3),
        }
    }
}

fn check_divergence(epoch: usize, v: [f64; 4]) -> Result<()> {
    const NAMES: [&str; 4] = ["loss_total", "loss_coh", "loss_att", "loss_rec"];
    for (name, x) in NAMES.iter().zip(v) {
        if !x.is_finite() || x.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                epoch,
                component: name,
                value: x,
            });
        }
    }
    Ok(())
}

fn step(net: &mut ArtifactNet, opt: &mut Optimizer, g: &Graph, loss: Var, epoch: usize) -> Result<()> {
    g.backward(loss, &mut net.store)?;
    match opt.step(&mut net.store) {
        Err(Error::NonFiniteGradient(_)) => Err(Error::Divergence {
            epoch,
            component: "gradient",
            value: f64::NAN,
        }),
        other => other.map(|_| ()),
    }
}

fn shuffled_batches(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(size).map(<[usize]>::to_vec).collect()
}

fn set_trainable(net: &mut ArtifactNet, prefixes: &[&str]) {
    net.store.freeze_all();
    for p in prefixes {
        net.store.set_frozen(p, false);
    }
}

pub fn encoder_checksum(net: &ArtifactNet) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for p in ENCODER_PREFIXES {
        h.update(&net.store.checksum(p).to_le_bytes());
    }
    h.finalize()
}

/// Encoder outputs for every frame of `set` in evaluation mode.
fn embed_all(net: &ArtifactNet, set: &TrainingSet, chunk: usize) -> Result<(Tensor, Tensor)> {
    let (mut e, mut m) = (Vec::new(), Vec::new());
    let n = set.len();
    for start in (0..n).step_by(chunk.max(1)) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let mut g = Graph::new();
        let x = g.constant(gather(&set.frames.eeg, &idx));
        let u = g.constant(gather(&set.frames.imu, &idx));
        let ev = net.eeg_embed(&mut g, x)?;
        let mv = net.imu_embed(&mut g, u, &mut Pass::eval())?;
        e.extend_from_slice(g.value(ev).data());
        m.extend_from_slice(g.value(mv).data());
    }
    let cfg = net.config();
    Ok((
        Tensor::new(&[n, cfg.c_eeg, cfg.d_model], e)?,
        Tensor::new(&[n, cfg.c_imu, cfg.d_model], m)?,
    ))
}

/// Attention logits for cached embeddings.
fn logits_all(net: &ArtifactNet, e: &Tensor, m: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (ev, mv) = (g.constant(e.clone()), g.constant(m.clone()));
    let (l, _, _) = net.attend(&mut g, ev, mv)?;
    Ok(g.value(l).clone())
}

/// The full training objective for one network configuration.
#[derive(Debug, Clone)]
pub struct Objective {
    basis: DftBasis,
    coh: CoherenceConfig,
    weights: (f64, f64, f64),
}

impl Objective {
    pub fn new(cfg: &NetConfig) -> Self {
        Objective {
            basis: DftBasis::new(cfg.frame_len, cfg.band_bins),
            coh: coherence_config(cfg),
            weights: (cfg.lambda_coh, cfg.lambda_att, cfg.lambda_rec),
        }
    }

    /// Full loss on `batch`; embeddings come from the cache when given, else from the encoders.
    pub fn losses(
        &self,
        net: &ArtifactNet,
        g: &mut Graph,
        batch: &TrainingSet,
        cached: Option<(Tensor, Tensor)>,
        pass: &mut Pass,
    ) -> Result<LossTerms> {
        let fb = &batch.frames;
        let x = g.constant(fb.eeg.clone());
        let (e, m) = match cached {
            Some((e, m)) => (g.constant(e), g.constant(m)),
            None => {
                let u = g.constant(fb.imu.clone());
                (net.eeg_embed(g, x)?, net.imu_embed(g, u, pass)?)
            }
        };
        let h = net.head(g, e, m, x, pass)?;
        let (scale, mean) = fb.affine_tensors();
        let (scale, mean) = (g.constant(scale), g.constant(mean));
        let out_raw = g.mul(h.out, scale)?;
        let out_raw = g.add(out_raw, mean)?;
        let imu_raw = g.constant(fb.imu_raw.clone());
        let target = g.constant(batch.targets.clone());
        total_loss(
            g,
            LossInputs {
                out_raw,
                out: h.out,
                input: x,
                imu_raw,
                logits: h.logits,
                target,
            },
            self.weights,
            &self.basis,
            &self.coh,
        )
    }

    pub fn values(g: &Graph, t: &LossTerms) -> [f64; 4] {
        [t.total, t.coh, t.att, t.rec].map(|v| g.value(v).item())
    }

    /// Mean loss over `set` in evaluation mode.
    pub fn evaluate(&self, net: &ArtifactNet, set: &TrainingSet, chunk: usize) -> Result<[f64; 4]> {
        let mut acc = Acc::default();
        for start in (0..set.len()).step_by(chunk.max(1)) {
            let idx: Vec<usize> = (start..(start + chunk).min(set.len())).collect();
            let b = set.subset(&idx);
            let mut g = Graph::new();
            let t = self.losses(net, &mut g, &b, None, &mut Pass::eval())?;
            acc.add(idx.len(), Self::values(&g, &t));
        }
        Ok(acc.record(0, Stage::Full).to_array())
    }
}

impl EpochRecord {
    fn to_array(self) -> [f64; 4] {
        [self.loss_total, self.loss_coh, self.loss_att, self.loss_rec]
    }
}

pub fn train(net: &mut ArtifactNet, frames: &[FramePair], tc: &TrainConfig) -> Result<TrainReport> {
    train_with(net, frames, tc, |_| {})
}

/// Staged training (see [`TrainConfig`]); `on_epoch` sees every history record as it is
/// produced. Deterministic for a fixed configuration.
pub fn train_with(
    net: &mut ArtifactNet,
    frames: &[FramePair],
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    tc.validate()?;
    if frames.is_empty() {
        return Err(Error::Empty("training needs at least one frame".into()));
    }
    let cfg = net.config().clone();
    let all = TrainingSet::new(frames, &cfg)?;
    let n = all.len();
    let mut n_val = (n as f64 * tc.validation_fraction).floor() as usize;
    if n_val >= n {
        n_val = 0;
    }
    let n_train = n - n_val;
    let train_set = all.subset(&(0..n_train).collect::<Vec<_>>());
    let val_set = (n_val > 0).then(|| all.subset(&(n_train..n).collect::<Vec<_>>()));
    let bs = tc.batch_size;
    let obj = Objective::new(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut history = Vec::new();
    let mut epoch = 0;
    let mut push = |rec: EpochRecord, history: &mut Vec<EpochRecord>| {
        on_epoch(&rec);
        history.push(rec);
    };

    // warm-up: encoders with query/key on the attention loss
    set_trainable(net, &["eeg.", "imu.", "attn.q.", "attn.k."]);
    let mut opt = Optimizer::new(tc.optimizer, tc.warmup_lr, tc.clip);
    for _ in 0..tc.warmup_epochs {
        epoch += 1;
        let mut acc = Acc::default();
        for idx in shuffled_batches(n_train, bs, &mut rng) {
            let b = train_set.subset(&idx);
            let mut pass = Pass::train(rng.random());
            let mut g = Graph::new();
            let x = g.constant(b.frames.eeg.clone());
            let u = g.constant(b.frames.imu.clone());
            let e = net.eeg_embed(&mut g, x)?;
            let m = net.imu_embed(&mut g, u, &mut pass)?;
            let (logits, _, _) = net.attend(&mut g, e, m)?;
            let t = g.constant(b.targets.clone());
            let att = g.mse(logits, t)?;
            let a = g.value(att).item();
            let v = [cfg.lambda_att * a, 0.0, a, 0.0];
            check_divergence(epoch, v)?;
            step(net, &mut opt, &g, att, epoch)?;
            net.update_running_stats(&pass, tc.bn_momentum);
            acc.add(idx.len(), v);
        }
        push(acc.record(epoch, Stage::Warmup), &mut history);
    }

    // Stage 1: projections only, on cached embeddings
    set_trainable(net, &ATTENTION_PARAMS);
    let encoder_checksum_before = encoder_checksum(net);
    let (e_all, m_all) = embed_all(net, &train_set, bs)?;
    let r_of = |net: &ArtifactNet| -> Result<f64> {
        let l = logits_all(net, &e_all, &m_all)?;
        Ok(pearson(l.data(), train_set.targets.data(), 0.0))
    };
    let mut opt = Optimizer::new(tc.optimizer, tc.stage1_lr, tc.clip);
    let mut stage1_r = r_of(net)?;
    let mut stage1_epochs = 0;
    while stage1_epochs < tc.stage1_max_epochs && !(stage1_r >= tc.stage1_target_r) {
        epoch += 1;
        stage1_epochs += 1;
        let mut acc = Acc::default();
        for idx in shuffled_batches(n_train, bs, &mut rng) {
            let mut g = Graph::new();
            let e = g.constant(gather(&e_all, &idx));
            let m = g.constant(gather(&m_all, &idx));
            let (logits, _, _) = net.attend(&mut g, e, m)?;
            let t = g.constant(gather(&train_set.targets, &idx));
            let att = g.mse(logits, t)?;
            let a = g.value(att).item();
            let v = [cfg.lambda_att * a, 0.0, a, 0.0];
            check_divergence(epoch, v)?;
            step(net, &mut opt, &g, att, epoch)?;
            acc.add(idx.len(), v);
        }
        stage1_r = r_of(net)?;
        push(acc.record(epoch, Stage::Attention), &mut history);
    }
    let encoder_checksum_after = encoder_checksum(net);

    // Stage 2: everything but the encoders, which join only for the first epochs. Those joint
    // epochs run at the warm-up rate: at the Stage-2 rate the encoders lose their alignment with
    // the attention targets within one epoch.
    let mut opt = Optimizer::new(tc.optimizer, tc.stage2_lr.min(tc.warmup_lr), tc.clip);
    let mut cache: Option<(Tensor, Tensor)> = None;
    let mut best = f64::INFINITY;
    let mut best_store = net.store.clone();
    let mut stale = 0;
    let mut stage2_epochs = 0;
    while stage2_epochs < tc.stage2_max_epochs {
        let joint = stage2_epochs < tc.stage2_joint_epochs;
        epoch += 1;
        stage2_epochs += 1;
        if joint {
            set_trainable(net, &["eeg.", "imu.", "attn.", "gate.", "align.", "dec.", "skip."]);
        } else {
            set_trainable(net, &["attn.", "gate.", "align.", "dec.", "skip."]);
            if cache.is_none() {
                cache = Some(embed_all(net, &train_set, bs)?);
                opt = Optimizer::new(tc.optimizer, tc.stage2_lr, tc.clip);
            }
        }
        let mut acc = Acc::default();
        for idx in shuffled_batches(n_train, bs, &mut rng) {
            let b = train_set.subset(&idx);
            let cached = cache.as_ref().map(|(e, m)| (gather(e, &idx), gather(m, &idx)));
            let mut pass = Pass::train(rng.random());
            let mut g = Graph::new();
            let terms = obj.losses(net, &mut g, &b, cached, &mut pass)?;
            let v = Objective::values(&g, &terms);
            check_divergence(epoch, v)?;
            step(net, &mut opt, &g, terms.total, epoch)?;
            if joint {
                net.update_running_stats(&pass, tc.bn_momentum);
            }
            acc.add(idx.len(), v);
        }
        let rec = acc.record(epoch, Stage::Full);
        push(rec, &mut history);
        let score = match &val_set {
            Some(v) => obj.evaluate(net, v, bs)?[0],
            None => rec.loss_total,
        };
        if score < best {
            best = score;
            best_store = net.store.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                break;
            }
        }
    }
    if tc.stage2_max_epochs > 0 {
        net.store = best_store;
    }
    net.store.freeze_all();
    Ok(TrainReport {
        history,
        stage1_epochs,
        stage1_r,
        encoder_checksum_before,
        encoder_checksum_after,
        stage2_epochs,
        best_loss: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_frames(n: usize, seed: u64) -> Vec<FramePair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let imu: Vec<f64> = (0..80).map(|_| rng.random_range(-1.0..1.0)).collect();
                let eeg: Vec<f64> = (0..160)
                    .map(|k| rng.random_range(-1.0..1.0) + if k / 40 < 2 { 2.0 * imu[k % 40] } else { 0.0 })
                    .collect();
                FramePair {
                    eeg: Tensor::new(&[4, 40], eeg).unwrap(),
                    imu: Tensor::new(&[2, 40], imu).unwrap(),
                    index: i,
                    t0_s: i as f64,
                }
            })
            .collect()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            warmup_epochs: 2,
            stage1_max_epochs: 2,
            stage2_max_epochs: 3,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_history() {
        let frames = tiny_frames(12, 1);
        let run = || {
            let mut net = ArtifactNet::new(NetConfig { dropout: 0.2, ..NetConfig::tiny() }).unwrap();
            let rep = train(&mut net, &frames, &quick()).unwrap();
            (history_to_csv(&rep.history), crate::tensor::checkpoint::to_bytes(&net.store))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let frames = tiny_frames(8, 2);
        let mut net = ArtifactNet::new(NetConfig::tiny()).unwrap();
        let before: Vec<Tensor> = net.store.iter().filter(|p| p.kind == crate::tensor::ParamKind::Weight).map(|p| p.value.clone()).collect();
        let tc = TrainConfig {
            batch_size: 8,
            warmup_lr: 0.0,
            stage1_lr: 0.0,
            stage2_lr: 0.0,
            validation_fraction: 0.0,
            stage1_target_r: 2.0,
            stage2_joint_epochs: 0,
            patience: 100,
            ..quick()
        };
        let rep = train(&mut net, &frames, &tc).unwrap();
        let after: Vec<Tensor> = net.store.iter().filter(|p| p.kind == crate::tensor::ParamKind::Weight).map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
        for stage in [Stage::Warmup, Stage::Attention, Stage::Full] {
            let losses: Vec<f64> = rep.history.iter().filter(|r| r.stage == stage).map(|r| r.loss_total).collect();
            assert!(losses.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-9), "{stage:?}: {losses:?}");
        }
    }

    #[test]
    fn encoders_untouched_by_stage1() {
        let frames = tiny_frames(10, 3);
        let mut net = ArtifactNet::new(NetConfig::tiny()).unwrap();
        let rep = train(&mut net, &frames, &TrainConfig { stage1_target_r: 2.0, ..quick() }).unwrap();
        assert_eq!(rep.stage1_epochs, 2);
        assert_eq!(rep.encoder_checksum_before, rep.encoder_checksum_after);
    }

    #[test]
    fn divergence_is_reported() {
        let frames = tiny_frames(8, 4);
        let mut net = ArtifactNet::new(NetConfig::tiny()).unwrap();
        let tc = TrainConfig {
            optimizer: crate::tensor::OptimizerKind::Sgd,
            warmup_lr: 1e12,
            clip: 0.0,
            warmup_epochs: 20,
            ..quick()
        };
        match train(&mut net, &frames, &tc) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn history_csv_shape() {
        let rec = EpochRecord { epoch: 1, stage: Stage::Full, loss_total: 1.5, loss_coh: 0.5, loss_att: 0.75, loss_rec: 0.25 };
        let csv = history_to_csv(&[rec]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines, [HISTORY_SCHEMA, "epoch,loss_total,loss_coh,loss_att,loss_rec", "1,1.5,0.5,0.75,0.25"]);
    }
}
