use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::data::{normalize_frames, FrameBatch};
use super::NetConfig;
use crate::error::{Error, Result};
use crate::signal::FramePair;
use crate::tensor::{checkpoint, Graph, NormStats, ParamId, ParamKind, ParamStore, PoolKind, Tensor, Var};

/// Parameter name prefixes of the two encoders.
pub const ENCODER_PREFIXES: [&str; 2] = ["eeg.", "imu."];
/// Query, key and value projections.
pub const ATTENTION_PARAMS: [&str; 3] = ["attn.q.w", "attn.k.w", "attn.v.w"];
/// Everything trained in the second stage.
pub const HEAD_PREFIXES: [&str; 4] = ["gate.", "align.", "dec.", "skip."];

const IMU_NORMS: [&str; 3] = ["imu.bn1", "imu.bn2", "imu.bn3"];

/// Attention of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState {
    /// `[eeg × imu]` scores before the softmax.
    pub logits: Tensor,
    /// Row-softmax of `logits`.
    pub weights: Tensor,
    /// `[eeg × d_model]`, `weights · V`.
    pub artifact_latent: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm, dropout active.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

/// Per-forward bookkeeping: dropout seeds and the batch statistics to fold into the running
/// buffers once the step is done.
#[derive(Debug)]
pub struct Pass {
    pub mode: Mode,
    seed: u64,
    draws: u64,
    pub(crate) bn_stats: Vec<(&'static str, Vec<f64>, Vec<f64>)>,
}

impl Pass {
    pub fn eval() -> Self {
        Pass {
            mode: Mode::Eval,
            seed: 0,
            draws: 0,
            bn_stats: Vec::new(),
        }
    }

    pub fn train(seed: u64) -> Self {
        Pass {
            mode: Mode::Train,
            ..Self::eval()
        }
        .with_seed(seed)
    }

    fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn dropout_seed(&mut self) -> u64 {
        self.draws += 1;
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.draws)
    }
}

/// Graph handles of a head forward pass.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    /// Denoised frames in normalised units, `[B × eeg × T]`.
    pub out: Var,
    pub logits: Var,
    pub weights: Var,
    pub artifact: Var,
    /// Gate activations, `[B × eeg × d_model]`.
    pub gate: Var,
}

/// The denoiser: EEG and IMU encoders, supervised cross-attention, artifact gate, latent
/// subtraction, alignment head and time-domain decoder.
#[derive(Debug, Clone)]
pub struct ArtifactNet {
    cfg: NetConfig,
    pub store: ParamStore,
}

fn linear_params(s: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, din: usize, dout: usize, bias: bool) {
    s.uniform(&format!("{name}.w"), &[din, dout], din, rng);
    if bias {
        s.uniform(&format!("{name}.b"), &[dout], din, rng);
    }
}

fn norm_params(s: &mut ParamStore, name: &str, d: usize) {
    s.weight(&format!("{name}.g"), Tensor::full(&[d], 1.0));
    s.weight(&format!("{name}.b"), Tensor::zeros(&[d]));
}

fn conv_params(s: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cout: usize, cin: usize, k: usize) {
    s.uniform(&format!("{name}.w"), &[cout, cin, k], cin * k, rng);
    s.uniform(&format!("{name}.b"), &[cout], cin * k, rng);
}

impl ArtifactNet {
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, t) = (cfg.d_model, cfg.frame_len);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut s = ParamStore::new();

        conv_params(&mut s, &mut rng, "eeg.conv", d, 1, cfg.eeg_patch_kernel);
        let normal = Normal::new(0.0, cfg.spatial_init.max(f64::MIN_POSITIVE)).expect("finite std");
        let spatial = (0..cfg.c_eeg * d).map(|_| normal.sample(&mut rng)).collect();
        s.weight("eeg.spatial", Tensor::new(&[cfg.c_eeg, d], spatial)?);
        for b in 0..cfg.encoder_blocks {
            for part in ["q", "k", "v", "o", "f1", "f2"] {
                linear_params(&mut s, &mut rng, &format!("eeg.block{b}.{part}"), d, d, true);
            }
            norm_params(&mut s, &format!("eeg.block{b}.ln1"), d);
            norm_params(&mut s, &format!("eeg.block{b}.ln2"), d);
        }
        linear_params(&mut s, &mut rng, "eeg.a1", d, d, true);
        norm_params(&mut s, "eeg.ln", d);
        linear_params(&mut s, &mut rng, "eeg.a2", d, d, true);

        let k = cfg.imu_kernel;
        for (i, bn) in IMU_NORMS.iter().enumerate() {
            conv_params(&mut s, &mut rng, &format!("imu.c{}", i + 1), d, if i == 0 { 1 } else { d }, k);
            norm_params(&mut s, bn, d);
            s.insert(&format!("{bn}.mean"), Tensor::zeros(&[d]), ParamKind::Buffer);
            s.insert(&format!("{bn}.var"), Tensor::full(&[d], 1.0), ParamKind::Buffer);
        }
        linear_params(&mut s, &mut rng, "imu.fc", d * t / 4, d, true);

        for name in ["attn.q", "attn.k", "attn.v"] {
            linear_params(&mut s, &mut rng, name, d, d, false);
        }
        linear_params(&mut s, &mut rng, "gate.g1", d, cfg.gate_hidden, true);
        linear_params(&mut s, &mut rng, "gate.g2", cfg.gate_hidden, d, true);
        linear_params(&mut s, &mut rng, "align.a1", d, d, true);
        norm_params(&mut s, "align.ln", d);
        linear_params(&mut s, &mut rng, "align.a2", d, d, true);

        let h = cfg.decoder_hidden;
        linear_params(&mut s, &mut rng, "dec.d1", d, h, true);
        linear_params(&mut s, &mut rng, "dec.d2", h, h, true);
        linear_params(&mut s, &mut rng, "dec.d3", h, d, true);
        // near-zero final projection: the input skip dominates at step 0
        s.uniform_bound("dec.d4.w", &[d, t], 1e-3, &mut rng);
        s.weight("dec.d4.b", Tensor::zeros(&[t]));
        s.weight("skip.a", Tensor::full(&[cfg.c_eeg], 1.0));
        s.weight("skip.b", Tensor::zeros(&[cfg.c_eeg]));

        Ok(ArtifactNet { cfg, store: s })
    }

    /// A network of configuration `cfg` holding the values of `store`, which must have exactly
    /// the parameter names and shapes that configuration produces.
    pub fn with_store(cfg: NetConfig, store: &ParamStore) -> Result<Self> {
        let mut net = Self::new(cfg)?;
        checkpoint::restore_into(&mut net.store, store)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.store, path)
    }

    pub fn load(cfg: NetConfig, path: &Path) -> Result<Self> {
        Self::with_store(cfg, &checkpoint::load(path)?)
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    fn id(&self, name: &str) -> ParamId {
        self.store.id(name).unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    fn p(&self, g: &mut Graph, name: &str) -> Var {
        g.param(&self.store, self.id(name))
    }

    fn linear(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let w = self.p(g, &format!("{name}.w"));
        let b = self.store.id(&format!("{name}.b")).map(|id| g.param(&self.store, id));
        g.linear(x, w, b)
    }

    fn layer_norm(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let (gm, b) = (self.p(g, &format!("{name}.g")), self.p(g, &format!("{name}.b")));
        g.layer_norm(x, gm, b)
    }

    fn conv(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let (w, b) = (self.p(g, &format!("{name}.w")), self.p(g, &format!("{name}.b")));
        let k = self.store.get(self.id(&format!("{name}.w"))).value.shape()[2];
        g.conv1d(x, w, b, k / 2)
    }

    fn batch_norm(&self, g: &mut Graph, x: Var, name: &'static str, pass: &mut Pass) -> Result<Var> {
        let (gm, b) = (self.p(g, &format!("{name}.g")), self.p(g, &format!("{name}.b")));
        match pass.mode {
            Mode::Train => {
                let (y, stats) = g.batch_norm(x, gm, b, NormStats::Batch)?;
                let (mean, var) = stats.expect("batch statistics");
                pass.bn_stats.push((name, mean, var));
                Ok(y)
            }
            Mode::Eval => {
                let mean = self.store.get(self.id(&format!("{name}.mean"))).value.data();
                let var = self.store.get(self.id(&format!("{name}.var"))).value.data();
                Ok(g.batch_norm(x, gm, b, NormStats::Running { mean, var })?.0)
            }
        }
    }

    fn expect_batch(&self, g: &Graph, x: Var, channels: usize, what: &str) -> Result<usize> {
        match *g.shape(x) {
            [b, c, t] if c == channels && t == self.cfg.frame_len => Ok(b),
            ref s => Err(Error::Shape(format!(
                "{what} input must be [batch × {channels} × {}], got {s:?}",
                self.cfg.frame_len
            ))),
        }
    }

    /// `[B × eeg × T]` normalised frames → `[B × eeg × d_model]`.
    pub fn eeg_embed(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let b = self.expect_batch(g, x, self.cfg.c_eeg, "EEG")?;
        let (c, t, d) = (self.cfg.c_eeg, self.cfg.frame_len, self.cfg.d_model);
        let steps = t / self.cfg.eeg_pool;

        let h = g.reshape(x, &[b * c, 1, t])?;
        let h = self.conv(g, h, "eeg.conv")?;
        let h = g.relu(h);
        let h = g.pool1d(h, PoolKind::Avg, self.cfg.eeg_pool)?;
        let h = g.reshape(h, &[b, c, d, steps])?;
        let h = g.permute(h, &[0, 3, 1, 2])?;
        let pooled = g.mean_axis(h, 1)?;
        let spatial = self.p(g, "eeg.spatial");
        let h = g.add_trailing(h, spatial)?;

        // channel tokens attend to each other independently at every time step
        let mut h = g.reshape(h, &[b * steps, c, d])?;
        let scale = 1.0 / (d as f64).sqrt();
        for blk in 0..self.cfg.encoder_blocks {
            let name = |part: &str| format!("eeg.block{blk}.{part}");
            let q = self.linear(g, h, &name("q"))?;
            let k = self.linear(g, h, &name("k"))?;
            let v = self.linear(g, h, &name("v"))?;
            let kt = g.permute(k, &[0, 2, 1])?;
            let scores = g.bmm(q, kt)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax(scores, 2)?;
            let a = g.bmm(attn, v)?;
            let o = self.linear(g, a, &name("o"))?;
            let r = g.add(h, o)?;
            h = self.layer_norm(g, r, &name("ln1"))?;
            let f = self.linear(g, h, &name("f1"))?;
            let f = g.relu(f);
            let f = self.linear(g, f, &name("f2"))?;
            let r = g.add(h, f)?;
            h = self.layer_norm(g, r, &name("ln2"))?;
        }
        let h = g.reshape(h, &[b, steps, c, d])?;
        let z = g.mean_axis(h, 1)?;
        let a = self.linear(g, z, "eeg.a1")?;
        let a = self.layer_norm(g, a, "eeg.ln")?;
        let a = g.gelu(a);
        let a = self.linear(g, a, "eeg.a2")?;
        g.add(a, pooled)
    }

    /// `[B × imu × T]` normalised frames → `[B × imu × d_model]`; every IMU channel runs through
    /// the same convolution stack.
    pub fn imu_embed(&self, g: &mut Graph, x: Var, pass: &mut Pass) -> Result<Var> {
        let b = self.expect_batch(g, x, self.cfg.c_imu, "IMU")?;
        let (c, t, d) = (self.cfg.c_imu, self.cfg.frame_len, self.cfg.d_model);
        let h = g.reshape(x, &[b * c, 1, t])?;
        let h = self.conv(g, h, "imu.c1")?;
        let h = self.batch_norm(g, h, IMU_NORMS[0], pass)?;
        let h = g.relu(h);
        let h = g.pool1d(h, PoolKind::Max, 2)?;
        let h = self.conv(g, h, "imu.c2")?;
        let h = self.batch_norm(g, h, IMU_NORMS[1], pass)?;
        let h = g.relu(h);
        let h = g.pool1d(h, PoolKind::Avg, 2)?;
        let h = self.conv(g, h, "imu.c3")?;
        let h = self.batch_norm(g, h, IMU_NORMS[2], pass)?;
        let h = g.relu(h);
        let h = g.reshape(h, &[b * c, d * t / 4])?;
        let h = self.linear(g, h, "imu.fc")?;
        g.reshape(h, &[b, c, d])
    }

    /// Cross-attention: returns `(logits, weights, artifact_latent)`.
    pub fn attend(&self, g: &mut Graph, e: Var, m: Var) -> Result<(Var, Var, Var)> {
        let q = self.linear(g, e, "attn.q")?;
        let k = self.linear(g, m, "attn.k")?;
        let v = self.linear(g, m, "attn.v")?;
        let kt = g.permute(k, &[0, 2, 1])?;
        let logits = g.bmm(q, kt)?;
        let logits = g.scale(logits, self.cfg.attention_scale);
        let weights = g.softmax(logits, 2)?;
        let art = g.bmm(weights, v)?;
        Ok((logits, weights, art))
    }

    /// Gate activations in `(0, 1)` for an artifact latent.
    pub fn gate(&self, g: &mut Graph, art: Var) -> Result<Var> {
        let h = self.linear(g, art, "gate.g1")?;
        let h = g.relu(h);
        let h = self.linear(g, h, "gate.g2")?;
        Ok(g.sigmoid(h))
    }

    /// Everything after the encoders. `x` is the normalised EEG input, used by the skip path.
    pub fn head(&self, g: &mut Graph, e: Var, m: Var, x: Var, pass: &mut Pass) -> Result<HeadOutput> {
        let (c, t) = (self.cfg.c_eeg, self.cfg.frame_len);
        let (logits, weights, artifact) = self.attend(g, e, m)?;
        let gate = self.gate(g, artifact)?;
        let gated = g.mul(gate, artifact)?;
        let cleaned = g.sub(e, gated)?;

        let a = self.linear(g, cleaned, "align.a1")?;
        let a = self.layer_norm(g, a, "align.ln")?;
        let a = g.gelu(a);
        let a = self.linear(g, a, "align.a2")?;
        let aligned = g.add(a, cleaned)?;

        let rate = self.cfg.dropout;
        let train = pass.mode == Mode::Train;
        let h = self.linear(g, aligned, "dec.d1")?;
        let h = g.relu(h);
        let h = g.dropout(h, rate, train, pass.dropout_seed());
        let h = self.linear(g, h, "dec.d2")?;
        let h = g.relu(h);
        let h = g.dropout(h, rate, train, pass.dropout_seed());
        let h = self.linear(g, h, "dec.d3")?;
        let h = g.tanh(h);
        let decoded = self.linear(g, h, "dec.d4")?;

        // per-channel affine skip of the input, broadcast over time as [c×1]·[1×T]
        let ones = g.constant(Tensor::full(&[1, t], 1.0));
        let sa = self.p(g, "skip.a");
        let sa = g.reshape(sa, &[c, 1])?;
        let sa = g.matmul(sa, ones)?;
        let sb = self.p(g, "skip.b");
        let sb = g.reshape(sb, &[c, 1])?;
        let sb = g.matmul(sb, ones)?;
        let skip = g.mul_trailing(x, sa)?;
        let skip = g.add_trailing(skip, sb)?;
        let out = g.add(decoded, skip)?;
        Ok(HeadOutput {
            out,
            logits,
            weights,
            artifact,
            gate,
        })
    }

    /// Folds batch statistics gathered in a training pass into the running buffers.
    pub fn update_running_stats(&mut self, pass: &Pass, momentum: f64) {
        for (name, mean, var) in &pass.bn_stats {
            for (suffix, batch) in [("mean", mean), ("var", var)] {
                let id = self.id(&format!("{name}.{suffix}"));
                for (r, b) in self.store.get_mut(id).value.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - momentum) * *r + momentum * b;
                }
            }
        }
    }

    fn single(&self, frame: &Tensor, channels: usize, what: &str) -> Result<Tensor> {
        if frame.shape() != [channels, self.cfg.frame_len] {
            return Err(Error::Shape(format!(
                "{what} frame must be [{channels} × {}], got {:?}",
                self.cfg.frame_len,
                frame.shape()
            )));
        }
        let rows: Vec<f64> = frame.data().to_vec();
        let mut out = Vec::with_capacity(rows.len());
        for r in rows.chunks(self.cfg.frame_len) {
            out.extend(crate::coherence::std_norm(r));
        }
        Tensor::new(&[1, channels, self.cfg.frame_len], out)
    }

    fn drop_batch(t: &Tensor) -> Tensor {
        let s = t.shape()[1..].to_vec();
        t.clone().reshaped(&s).expect("leading axis of one")
    }

    /// Embeds one `[eeg × T]` frame (std-normalised per channel on entry) as `[eeg × d_model]`.
    pub fn eeg_encode(&self, frame: &Tensor) -> Result<Tensor> {
        let x = self.single(frame, self.cfg.c_eeg, "EEG")?;
        let mut g = Graph::new();
        let x = g.constant(x);
        let e = self.eeg_embed(&mut g, x)?;
        Ok(Self::drop_batch(g.value(e)))
    }

    /// Embeds one `[imu × T]` frame as `[imu × d_model]` using the running batch-norm statistics.
    pub fn imu_encode(&self, frame: &Tensor) -> Result<Tensor> {
        let x = self.single(frame, self.cfg.c_imu, "IMU")?;
        let mut g = Graph::new();
        let x = g.constant(x);
        let m = self.imu_embed(&mut g, x, &mut Pass::eval())?;
        Ok(Self::drop_batch(g.value(m)))
    }

    pub fn cross_attention(&self, eeg: &Tensor, imu: &Tensor) -> Result<AttentionState> {
        let d = self.cfg.d_model;
        if eeg.shape() != [self.cfg.c_eeg, d] || imu.shape() != [self.cfg.c_imu, d] {
            return Err(Error::Shape(format!("embeddings {:?} / {:?}", eeg.shape(), imu.shape())));
        }
        let mut g = Graph::new();
        let e = g.constant(eeg.clone().reshaped(&[1, self.cfg.c_eeg, d])?);
        let m = g.constant(imu.clone().reshaped(&[1, self.cfg.c_imu, d])?);
        let (l, w, a) = self.attend(&mut g, e, m)?;
        Ok(AttentionState {
            logits: Self::drop_batch(g.value(l)),
            weights: Self::drop_batch(g.value(w)),
            artifact_latent: Self::drop_batch(g.value(a)),
        })
    }

    /// `gate(latent) ⊙ latent` for a `[eeg × d_model]` artifact latent.
    pub fn artifact_gate(&self, latent: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let a = g.constant(latent.clone());
        let gate = self.gate(&mut g, a)?;
        let out = g.mul(gate, a)?;
        Ok(g.value(out).clone())
    }

    /// Forward pass over a normalised batch in evaluation mode.
    pub fn forward_batch(&self, batch: &FrameBatch) -> Result<(Tensor, Vec<AttentionState>)> {
        let mut g = Graph::new();
        let x = g.constant(batch.eeg.clone());
        let m = g.constant(batch.imu.clone());
        let mut pass = Pass::eval();
        let e = self.eeg_embed(&mut g, x)?;
        let mi = self.imu_embed(&mut g, m, &mut pass)?;
        let h = self.head(&mut g, e, mi, x, &mut pass)?;
        let out = batch.denormalize(g.value(h.out));
        let (c, ci, d) = (self.cfg.c_eeg, self.cfg.c_imu, self.cfg.d_model);
        let split = |t: &Tensor, r: usize, k: usize| -> Vec<Tensor> {
            t.data()
                .chunks(r * k)
                .map(|ch| Tensor::new(&[r, k], ch.to_vec()).expect("chunk size"))
                .collect()
        };
        let logits = split(g.value(h.logits), c, ci);
        let weights = split(g.value(h.weights), c, ci);
        let art = split(g.value(h.artifact), c, d);
        let states = logits
            .into_iter()
            .zip(weights)
            .zip(art)
            .map(|((logits, weights), artifact_latent)| AttentionState {
                logits,
                weights,
                artifact_latent,
            })
            .collect();
        Ok((out, states))
    }

    /// Denoises one frame pair; output in the input's units.
    pub fn denoise_forward(&self, pair: &FramePair) -> Result<(Tensor, AttentionState)> {
        let mut all = self.denoise(std::slice::from_ref(pair))?;
        Ok(all.pop().expect("one frame"))
    }

    /// Denoises many frames, in parallel chunks of 32. The result does not depend on the
    /// thread count.
    pub fn denoise(&self, frames: &[FramePair]) -> Result<Vec<(Tensor, AttentionState)>> {
        let chunks: Vec<Vec<(Tensor, AttentionState)>> = frames
            .par_chunks(32)
            .map(|chunk| {
                let batch = normalize_frames(chunk, &self.cfg)?;
                let (out, states) = self.forward_batch(&batch)?;
                let (c, t) = (self.cfg.c_eeg, self.cfg.frame_len);
                Ok(out
                    .data()
                    .chunks(c * t)
                    .map(|f| Tensor::new(&[c, t], f.to_vec()).expect("frame size"))
                    .zip(states)
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_frame(rng: &mut ChaCha8Rng, c: usize, t: usize) -> Tensor {
        Tensor::new(&[c, t], (0..c * t).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_eeg_frame_gives_finite_embedding() {
        let net = ArtifactNet::new(NetConfig::tiny()).unwrap();
        let e = net.eeg_encode(&Tensor::zeros(&[4, 40])).unwrap();
        assert_eq!(e.shape(), [4, 8]);
        assert!(e.is_finite());
    }

    #[test]
    fn swapping_channels_and_spatial_rows_swaps_embedding_rows() {
        let mut net = ArtifactNet::new(NetConfig::tiny()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_frame(&mut rng, 4, 40);
        let e = net.eeg_encode(&x).unwrap();

        let mut xs = x.clone();
        let (r0, r2) = (x.row(0).to_vec(), x.row(2).to_vec());
        xs.data_mut()[..40].copy_from_slice(&r2);
        xs.data_mut()[80..120].copy_from_slice(&r0);
        let id = net.store.id("eeg.spatial").unwrap();
        let sp = &mut net.store.get_mut(id).value;
        let (s0, s2) = (sp.row(0).to_vec(), sp.row(2).to_vec());
        sp.data_mut()[..8].copy_from_slice(&s2);
        sp.data_mut()[16..24].copy_from_slice(&s0);
        let es = net.eeg_encode(&xs).unwrap();
        for (a, b) in [(0, 2), (1, 1), (2, 0), (3, 3)] {
            for k in 0..8 {
                assert!((e.at2(a, k) - es.at2(b, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_imu_channels_share_embedding() {
        let net = ArtifactNet::new(NetConfig::tiny()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let row = rand_frame(&mut rng, 1, 40);
        let x = Tensor::new(&[2, 40], [row.data(), row.data()].concat()).unwrap();
        let m = net.imu_encode(&x).unwrap();
        assert_eq!(m.shape(), [2, 8]);
        assert_eq!(m.row(0), m.row(1));
    }

    #[test]
    fn zero_query_gives_uniform_weights() {
        let cfg = NetConfig::tiny();
        let net = ArtifactNet::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let st = net.cross_attention(&Tensor::zeros(&[4, 8]), &rand_frame(&mut rng, 2, 8)).unwrap();
        assert!(st.weights.data().iter().all(|w| (w - 0.5).abs() < 1e-15));
    }

    #[test]
    fn dominant_key_takes_all_weight() {
        let mut net = ArtifactNet::new(NetConfig::tiny()).unwrap();
        // identity projections; IMU row 1 is a large multiple of every EEG row's direction
        for name in ATTENTION_PARAMS {
            let id = net.store.id(name).unwrap();
            let v = &mut net.store.get_mut(id).value;
            v.fill(0.0);
            for i in 0..8 {
                v.data_mut()[i * 8 + i] = 1.0;
            }
        }
        let e = Tensor::full(&[4, 8], 1.0);
        let mut m = Tensor::zeros(&[2, 8]);
        m.data_mut()[8..].fill(50.0);
        let st = net.cross_attention(&e, &m).unwrap();
        for r in 0..4 {
            assert!(st.weights.at2(r, 1) > 1.0 - 1e-12);
            let sum: f64 = st.weights.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_of_zero_latent_is_zero() {
        let net = ArtifactNet::new(NetConfig::tiny()).unwrap();
        let out = net.artifact_gate(&Tensor::zeros(&[4, 8])).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn untrained_output_tracks_input() {
        let net = ArtifactNet::new(NetConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pair = FramePair {
            eeg: rand_frame(&mut rng, 32, 200).map(|v| 20.0 * v + 3.0),
            imu: rand_frame(&mut rng, 9, 200),
            index: 0,
            t0_s: 0.0,
        };
        let (out, st) = net.denoise_forward(&pair).unwrap();
        assert_eq!(out.shape(), [32, 200]);
        assert_eq!(st.weights.shape(), [32, 9]);
        for c in 0..32 {
            let r = crate::coherence::pearson(out.row(c), pair.eeg.row(c), 1e-8);
            assert!(r > 0.9, "channel {c}: {r}");
        }
    }
}
