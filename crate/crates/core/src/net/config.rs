use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::tensor::OptimizerKind;

/// Architecture and loss settings of the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub d_model: usize,
    pub c_eeg: usize,
    pub c_imu: usize,
    /// Samples per frame (one second).
    pub frame_len: usize,
    /// Spectral bins entering the coherence loss.
    pub band_bins: usize,
    pub eeg_patch_kernel: usize,
    /// Average-pooling factor after the EEG temporal convolution.
    pub eeg_pool: usize,
    pub encoder_blocks: usize,
    pub imu_kernel: usize,
    pub attention_scale: f64,
    pub gate_hidden: usize,
    pub decoder_hidden: usize,
    pub dropout: f64,
    /// Standard deviation scale of the learnable per-channel spatial embedding at init.
    pub spatial_init: f64,
    pub lambda_att: f64,
    pub lambda_rec: f64,
    pub lambda_coh: f64,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            d_model: 64,
            c_eeg: 32,
            c_imu: 9,
            frame_len: 200,
            band_bins: 40,
            eeg_patch_kernel: 15,
            eeg_pool: 8,
            encoder_blocks: 2,
            imu_kernel: 5,
            attention_scale: 1.0 / 8.0,
            gate_hidden: 64,
            decoder_hidden: 256,
            dropout: 0.1,
            spatial_init: 0.1,
            lambda_att: 1.0,
            lambda_rec: 0.5,
            lambda_coh: 1.0,
            seed: 0,
        }
    }
}

impl NetConfig {
    /// Small network used for end-to-end finite-difference checks.
    pub fn tiny() -> Self {
        NetConfig {
            d_model: 8,
            c_eeg: 4,
            c_imu: 2,
            frame_len: 40,
            band_bins: 8,
            eeg_patch_kernel: 5,
            eeg_pool: 8,
            encoder_blocks: 1,
            imu_kernel: 5,
            attention_scale: 1.0 / 8f64.sqrt(),
            gate_hidden: 6,
            decoder_hidden: 12,
            dropout: 0.0,
            spatial_init: 0.1,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_model", self.d_model),
            ("c_eeg", self.c_eeg),
            ("c_imu", self.c_imu),
            ("frame_len", self.frame_len),
            ("band_bins", self.band_bins),
            ("eeg_patch_kernel", self.eeg_patch_kernel),
            ("eeg_pool", self.eeg_pool),
            ("encoder_blocks", self.encoder_blocks),
            ("imu_kernel", self.imu_kernel),
            ("gate_hidden", self.gate_hidden),
            ("decoder_hidden", self.decoder_hidden),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be positive")));
        }
        if self.frame_len % self.eeg_pool != 0 || self.frame_len % 4 != 0 {
            return Err(Error::Config(format!(
                "frame_len {} must be divisible by eeg_pool {} and by 4",
                self.frame_len, self.eeg_pool
            )));
        }
        if self.eeg_patch_kernel % 2 == 0 || self.imu_kernel % 2 == 0 {
            return Err(Error::Config("convolution kernels must be odd (same padding)".into()));
        }
        if self.band_bins > self.frame_len / 2 + 1 {
            return Err(Error::Config(format!("band_bins {} exceeds the spectrum", self.band_bins)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        let weights = [self.lambda_att, self.lambda_rec, self.lambda_coh, self.attention_scale, self.spatial_init];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights and scales must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Reads overrides from `kv`; absent keys keep their current value.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.set("d_model", &mut self.d_model)?;
        kv.set("c_eeg", &mut self.c_eeg)?;
        kv.set("c_imu", &mut self.c_imu)?;
        kv.set("frame_len", &mut self.frame_len)?;
        kv.set("eeg_patch_kernel", &mut self.eeg_patch_kernel)?;
        kv.set("eeg_pool", &mut self.eeg_pool)?;
        kv.set("encoder_blocks", &mut self.encoder_blocks)?;
        kv.set("imu_kernel", &mut self.imu_kernel)?;
        kv.set("band_bins", &mut self.band_bins)?;
        kv.set("gate_hidden", &mut self.gate_hidden)?;
        kv.set("decoder_hidden", &mut self.decoder_hidden)?;
        kv.set("dropout", &mut self.dropout)?;
        kv.set("spatial_init", &mut self.spatial_init)?;
        kv.set("lambda_att", &mut self.lambda_att)?;
        kv.set("lambda_rec", &mut self.lambda_rec)?;
        kv.set("lambda_coh", &mut self.lambda_coh)?;
        kv.set("seed", &mut self.seed)?;
        if !kv.contains("attention_scale") && kv.contains("d_model") {
            self.attention_scale = 1.0 / (self.d_model as f64).sqrt();
        }
        kv.set("attention_scale", &mut self.attention_scale)?;
        Ok(())
    }

    /// Every key [`NetConfig::apply`] reads, one per line; floats print in shortest
    /// round-trip form so reading the text back reproduces the config exactly.
    pub fn to_text(&self) -> String {
        format!(
            "d_model = {}\nc_eeg = {}\nc_imu = {}\nframe_len = {}\neeg_patch_kernel = {}\neeg_pool = {}\nencoder_blocks = {}\nimu_kernel = {}\n\
             band_bins = {}\ngate_hidden = {}\ndecoder_hidden = {}\ndropout = {}\nspatial_init = {}\n\
             lambda_att = {}\nlambda_rec = {}\nlambda_coh = {}\nseed = {}\nattention_scale = {}\n",
            self.d_model,
            self.c_eeg,
            self.c_imu,
            self.frame_len,
            self.eeg_patch_kernel,
            self.eeg_pool,
            self.encoder_blocks,
            self.imu_kernel,
            self.band_bins,
            self.gate_hidden,
            self.decoder_hidden,
            self.dropout,
            self.spatial_init,
            self.lambda_att,
            self.lambda_rec,
            self.lambda_coh,
            self.seed,
            self.attention_scale,
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let mut cfg = NetConfig::default();
        cfg.apply(&kv)?;
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Optimisation schedule.
///
/// Training runs in three stages. The warm-up trains both encoders together with the query
/// and key projections on the attention-supervision loss only; it stands in for encoder
/// pretraining, after which the encoders count as initialised. Stage 1 freezes the encoders
/// and fits the attention projections. Stage 2 trains the gate, alignment head and decoder on
/// the full loss, with the encoders unfrozen only for its first `stage2_joint_epochs` epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub clip: f64,
    pub warmup_epochs: usize,
    pub warmup_lr: f64,
    pub stage1_max_epochs: usize,
    pub stage1_lr: f64,
    /// Stage 1 stops once the Pearson correlation between attention logits and targets on
    /// the training frames reaches this value.
    pub stage1_target_r: f64,
    pub stage2_max_epochs: usize,
    pub stage2_lr: f64,
    pub stage2_joint_epochs: usize,
    /// Stage 2 stops after this many epochs without validation improvement.
    pub patience: usize,
    /// Fraction of frames held out for early stopping (taken from the end).
    pub validation_fraction: f64,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            clip: 5.0,
            warmup_epochs: 30,
            warmup_lr: 1e-3,
            stage1_max_epochs: 50,
            stage1_lr: 1e-2,
            stage1_target_r: 0.8,
            stage2_max_epochs: 50,
            stage2_lr: 3e-3,
            stage2_joint_epochs: 1,
            patience: 5,
            validation_fraction: 0.1,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let rates = [self.warmup_lr, self.stage1_lr, self.stage2_lr, self.clip];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("learning rates and clip must be finite and non-negative".into()));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 0.5)".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_momentum must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.set("batch_size", &mut self.batch_size)?;
        kv.set("optimizer", &mut self.optimizer)?;
        kv.set("clip", &mut self.clip)?;
        kv.set("warmup_epochs", &mut self.warmup_epochs)?;
        kv.set("warmup_lr", &mut self.warmup_lr)?;
        kv.set("stage1_max_epochs", &mut self.stage1_max_epochs)?;
        kv.set("stage1_lr", &mut self.stage1_lr)?;
        kv.set("stage1_target_r", &mut self.stage1_target_r)?;
        kv.set("stage2_max_epochs", &mut self.stage2_max_epochs)?;
        kv.set("stage2_lr", &mut self.stage2_lr)?;
        kv.set("stage2_joint_epochs", &mut self.stage2_joint_epochs)?;
        kv.set("patience", &mut self.patience)?;
        kv.set("validation_fraction", &mut self.validation_fraction)?;
        kv.set("bn_momentum", &mut self.bn_momentum)?;
        if let Some(lr) = kv.get::<f64>("lr")? {
            self.warmup_lr = lr;
            self.stage2_lr = lr;
        }
        kv.set("train_seed", &mut self.seed)?;
        Ok(())
    }
}
